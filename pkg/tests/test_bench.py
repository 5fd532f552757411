import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psfinv import bench as B
from psfinv.errors import InvalidParameterError, SizeLimitError, UndefinedCorrelationError
from psfinv.metric import TrainConfig

FAST = B.BenchConfig(side=16, train=TrainConfig(epochs=30, hidden=16), rl_iters=5)


def test_pearson_spearman_examples():
    assert B.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert B.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert B.pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert B.spearman([1, 2, 3, 4], [1, 10, 100, 1000]) == pytest.approx(1.0)
    with pytest.raises(UndefinedCorrelationError, match="constant"):
        B.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(InvalidParameterError):
        B.pearson([1, 2], [1, 2])
    with pytest.raises(InvalidParameterError):
        B.pearson([1, 2, math.nan], [1, 2, 3])


@given(st.integers(0, 2**16), st.integers(3, 6), st.integers(5, 12))
@settings(max_examples=25, deadline=None)
def test_correlation_matrix_invariants(seed, cols, rows):
    rng = np.random.default_rng(seed)
    table = {f"c{i}": rng.normal(size=rows) for i in range(cols)}
    for kind in ("pearson", "spearman"):
        cm = B.correlation_matrix(table, kind)
        assert np.allclose(cm.values, cm.values.T)
        assert np.all(np.diag(cm.values) == 1.0)
        assert np.all(np.abs(cm.values) <= 1.0)
        assert np.all(np.linalg.eigvalsh(cm.values) >= -1e-9)


def test_correlation_matrix_rejects_bad_values():
    with pytest.raises(InvalidParameterError):
        B.CorrelationMatrix(("a", "b"), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_report_completeness():
    rep = B.ExperimentReport("x", [{"psf_id": "a", "metric": 1.0}, {"psf_id": "b", "metric": math.nan}], {})
    with pytest.raises(InvalidParameterError):
        rep.check_complete()


def test_gaussian_sweep_small(tmp_path):
    rep = B.gaussian_sweep([0.5, 1, 2], FAST)
    assert rep.ids() == ["gauss_s0.5", "gauss_s1", "gauss_s2"]
    assert {"spearman_sigma_metric", "spearman_sigma_wiener", "pearson_metric_wiener"} <= set(rep.meta)
    assert rep.meta["spearman_sigma_wiener"] == 1.0
    assert np.all(np.diff(rep.column("kappa")) > 0)
    B.write_csv(rep.rows, tmp_path / "a.csv")
    again = B.gaussian_sweep([0.5, 1, 2], FAST)
    B.write_csv(again.rows, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    B.write_json(rep.to_dict(), tmp_path / "a.json")
    assert json.loads((tmp_path / "a.json").read_text())["meta"]["config_digest"] == FAST.digest()
    with pytest.raises(InvalidParameterError):
        B.gaussian_sweep([1, 2], FAST)


def test_suite_and_noisy_correlation():
    rep = B.psf_suite_report(FAST)
    assert len(rep.rows) == 8 and rep.ids()[0] == "impulse"
    rep.check_complete()
    cm, rows = B.correlation_study(rep, FAST)
    assert cm.labels == B.CORR_COLUMNS
    noisy_cm, noisy_rows = B.correlation_study(rep, FAST, snr_db=25)
    assert [r["metric"] for r in noisy_rows] == [r["metric"] for r in rows]
    assert [r["wiener_mse"] for r in noisy_rows] != [r["wiener_mse"] for r in rows]


def test_timing_benchmark_shape():
    rep = B.timing_benchmark([4, 8], FAST, repeats=3)
    assert [r["k"] for r in rep.rows] == [16, 64]
    assert rep.meta["metric_ratio"] > 0 and rep.meta["kappa_ratio"] > 0
    with pytest.raises(InvalidParameterError):
        B.timing_benchmark([8, 4], FAST)
    with pytest.raises(SizeLimitError):
        B.timing_benchmark([4, 128], FAST)
