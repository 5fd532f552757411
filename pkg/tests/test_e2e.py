import math
from dataclasses import replace

import numpy as np
import pytest

from psfinv import e2e as E
from psfinv import metric as M
from psfinv.errors import ConfigurationError, InvalidParameterError, NumericFailureError
from psfinv.psf import Psf, gaussian_psf, impulse_psf

SMALL = E.E2EConfig(side=16, L=6, hidden=16, outer_epochs=4, inner_epochs=10, metric_epochs=20, outer_lr=0.05)


def _unchecked_psf(data):
    # perturbations for finite differences leave the unit-mass manifold
    q = object.__new__(Psf)
    object.__setattr__(q, "data", data)
    object.__setattr__(q, "id", "fd")
    return q


def test_wiener_layer_impulse_fixed_point():
    x = np.random.default_rng(0).random((3, 16, 16))
    loss, g_psf, g_ls = E.wiener_layer_grads(x, impulse_psf(16), E.RecoveryParams(math.log(1e-10)))
    assert loss < 1e-18 and abs(g_ls) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_wiener_layer_grads_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((2, 16, 16))
    noise = 0.01 * rng.normal(size=x.shape)
    psf = Psf.from_array(rng.random((16, 16)) ** 3)
    rp = E.RecoveryParams(math.log(rng.uniform(1e-4, 1e-2)))
    loss, g_psf, g_ls = E.wiener_layer_grads(x, psf, rp, noise)
    v = rng.normal(size=(16, 16))
    h = 1e-7
    f = lambda d: E.wiener_layer_grads(x, _unchecked_psf(psf.data + d), rp, noise)[0]  # noqa: E731
    fd = (f(h * v) - f(-h * v)) / (2 * h)
    assert abs(fd - np.vdot(g_psf, v)) <= 1e-3 * abs(fd)
    fl = lambda d: E.wiener_layer_grads(x, psf, E.RecoveryParams(rp.log_sigma2 + d), noise)[0]  # noqa: E731
    fd_ls = (fl(1e-5) - fl(-1e-5)) / 2e-5
    assert abs(fd_ls - g_ls) <= 1e-4 * abs(fd_ls)


def test_wiener_layer_degenerate():
    box = Psf.from_array(np.ones((2, 2)))
    with pytest.raises(NumericFailureError):
        E.wiener_layer_grads(np.ones((1, 8, 8)), box, E.RecoveryParams(math.log(1e-14)))


@pytest.fixture(scope="module")
def problem():
    return E._Problem(SMALL)


@pytest.mark.parametrize("seed", range(3))
def test_outer_gradient_finite_differences(problem, seed):
    rng = np.random.default_rng(seed)
    net = M.init_net(256, 16, seed)
    a = rng.normal(0, 0.2, 6)
    rp = E.RecoveryParams(math.log(1e-3))
    bd = E.outer_loss_and_grad(problem, a, rp, net, 10.0)
    v = rng.normal(size=6)
    h = 1e-6
    fp = E.outer_loss_and_grad(problem, a + h * v, rp, net, 10.0).total
    fm = E.outer_loss_and_grad(problem, a - h * v, rp, net, 10.0).total
    fd = (fp - fm) / (2 * h)
    assert abs(fd - bd.grad_a @ v) <= 5e-3 * abs(fd)


def test_additivity_and_gamma_zero(problem):
    net = M.init_net(256, 16, 0)
    a = np.random.default_rng(1).normal(0, 0.2, 6)
    rp = E.RecoveryParams(math.log(1e-3))
    bd = E.outer_loss_and_grad(problem, a, rp, net, 3.0)
    assert abs(bd.total - (bd.recon + 3.0 * bd.metric)) <= 1e-12
    zero = E.outer_loss_and_grad(problem, a, rp, net, 0.0)
    assert zero.gamma_term == 0.0 and zero.total == zero.recon


def test_gamma_zero_matches_regularizer_free_path(problem):
    # the same outer steps with the metric network absent entirely
    net = M.init_net(256, 16, 0)
    cfg = replace(SMALL, gamma=0.0)
    s1 = E.OuterState(np.full(6, 0.1), E.RecoveryParams(math.log(1e-3)))
    s2 = E.OuterState(np.full(6, 0.1), E.RecoveryParams(math.log(1e-3)))
    for _ in range(3):
        E.outer_step(s1, net, problem, cfg)
        E.outer_step(s2, None, problem, cfg)
    assert np.array_equal(s1.a, s2.a) and s1.rp.log_sigma2 == s2.rp.log_sigma2


def test_e2e_optimize_small_and_deterministic():
    r1 = E.e2e_optimize(replace(SMALL, gamma=1.0))
    r2 = E.e2e_optimize(replace(SMALL, gamma=1.0))
    assert len(r1.history) == SMALL.outer_epochs
    assert np.array_equal(r1.coeffs, r2.coeffs)
    assert r1.final_metric == r2.final_metric
    assert [r.outer_loss for r in r1.history.records] == [r.outer_loss for r in r2.history.records]
    for rec in r1.history.records:
        assert rec.outer_loss == pytest.approx(rec.recon_mse + rec.gamma_term, abs=1e-12)


def test_recon_nonincreasing_tail_gamma_zero():
    r = E.e2e_optimize(replace(SMALL, outer_epochs=40, gamma=0.0))
    tail = r.history.column("recon_mse")[-10:]
    assert all(b <= a * 1.1 for a, b in zip(tail, tail[1:]))


def test_history_csv(tmp_path):
    r = E.e2e_optimize(replace(SMALL, outer_epochs=2))
    r.history.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,outer_loss,recon_mse,metric,gamma_term,psnr" and len(lines) == 3


def test_gamma_sweep_rows():
    rs = E.gamma_sweep(replace(SMALL, outer_epochs=2), [1.0, 10.0])
    assert [r.cfg.gamma for r in rs] == [0.0, 1.0, 10.0]
    with pytest.raises(InvalidParameterError):
        E.gamma_sweep(SMALL, [1.0])


def test_config_errors(tmp_path):
    with pytest.raises(InvalidParameterError):
        E.E2EConfig(outer_lr=0.0)
    with pytest.raises(ConfigurationError):
        E.e2e_optimize(replace(SMALL, dataset_dir=str(tmp_path), synthetic=False))
    with pytest.raises(ConfigurationError):
        E.e2e_optimize(replace(SMALL, synthetic=False))


def test_warm_start_halves_inner_training():
    """Re-fitting after a small PSF change: warm start reaches the cold-start loss in half the epochs."""
    cfg = M.TrainConfig(epochs=200, hidden=64, seed=0)
    before = gaussian_psf(16, 1.0)
    after = gaussian_psf(16, 1.05)
    prev = M.train_metric(before, cfg)
    cold = M.train_metric(after, cfg)
    warm = M.train_metric(after, cfg, net=prev.net, stop_below=cold.value * 1.0000001)
    assert len(warm.loss_curve) <= 0.5 * 1.2 * len(cold.loss_curve)
