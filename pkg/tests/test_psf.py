import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psfinv import psf as P
from psfinv.errors import InvalidDimensionError, InvalidInputError, InvalidParameterError
from psfinv.linops import ConvOperator, convolve


def check_invariants(p: P.Psf):
    assert p.data.min() >= 0
    assert abs(p.data.sum() - 1.0) <= 1e-12
    assert p.flat().shape == (p.side * p.side,)


def test_impulse_degenerate_and_small():
    assert P.impulse_psf(1).data.tolist() == [[1.0]]
    d = P.impulse_psf(3).data
    assert d[1, 1] == 1.0 and d.sum() == 1.0


@given(st.integers(1, 12), st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_impulse_is_convolution_identity(side, seed):
    x = np.random.default_rng(seed).normal(size=(side, side))
    np.testing.assert_allclose(convolve(x, ConvOperator(P.impulse_psf(side), side)), x, atol=1e-12)


def test_gaussian_delta_limit():
    np.testing.assert_allclose(P.gaussian_psf(5, 1e-3).data, P.impulse_psf(5).data, atol=1e-9)


def test_gaussian_center_value_by_hand():
    # 1 center, 4 edge neighbours at exp(-1/2), 4 corners at exp(-1)
    expected = 1.0 / (1.0 + 4 * math.exp(-0.5) + 4 * math.exp(-1.0))
    assert expected == pytest.approx(0.2042, abs=1e-3)
    assert P.gaussian_psf(3, 1.0).data[1, 1] == pytest.approx(expected, rel=1e-12)


@given(st.integers(1, 20), st.floats(0.1, 6.0))
@settings(max_examples=40, deadline=None)
def test_gaussian_symmetry_and_invariants(side, sigma):
    g = P.gaussian_psf(side, sigma)
    check_invariants(g)
    if side % 2 == 1:
        d = g.data
        np.testing.assert_allclose(d, d.T, atol=1e-15)
        np.testing.assert_allclose(d, d[::-1, :], atol=1e-15)


def test_gaussian_entropy_grows_with_width():
    hs = [P.entropy(P.gaussian_psf(32, s)) for s in (0.5, 1, 2, 4)]
    assert all(a < b for a, b in zip(hs, hs[1:]))


def test_motion_blur_examples():
    np.testing.assert_array_equal(P.motion_blur_psf(9, 1, 37.0).data, P.impulse_psf(9).data)
    m = P.motion_blur_psf(5, 5, 0.0).data
    np.testing.assert_allclose(m[2], 0.2, atol=1e-15)
    assert m.sum() - m[2].sum() == 0
    np.testing.assert_array_equal(P.motion_blur_psf(11, 7, 90.0).data, P.motion_blur_psf(11, 7, 0.0).data.T)


@given(st.integers(3, 24), st.floats(0, 180), st.data())
@settings(max_examples=30, deadline=None)
def test_motion_invariants(side, angle, data):
    length = data.draw(st.integers(1, side))
    check_invariants(P.motion_blur_psf(side, length, angle))


def test_diffuser_deterministic_and_spread():
    a, b = P.diffuser_psf(32, 5), P.diffuser_psf(32, 5)
    assert np.array_equal(a.data, b.data)
    check_invariants(a)
    assert P.entropy(a) > P.entropy(P.impulse_psf(32))
    assert not np.array_equal(a.data, P.diffuser_psf(32, 6).data)


def test_noise_clean_sentinel_and_determinism():
    g = P.gaussian_psf(16, 1.0)
    assert P.add_noise(g, P.NoiseSpec(math.inf)) is g
    a = P.add_noise(P.impulse_psf(16), P.NoiseSpec(25, seed=7))
    b = P.add_noise(P.impulse_psf(16), P.NoiseSpec(25, seed=7))
    assert np.array_equal(a.data, b.data)
    check_invariants(a)
    with pytest.raises(InvalidParameterError):
        P.NoiseSpec(math.nan)
    with pytest.raises(InvalidParameterError):
        P.NoiseSpec(-math.inf)


@pytest.mark.parametrize("snr", [10.0, 25.0, 35.0])
def test_noise_realized_snr(snr):
    g = P.gaussian_psf(64, 2.0)
    eps = P.noise_realization(g, P.NoiseSpec(snr, seed=3))
    realized = 10 * math.log10(np.sum(g.data**2) / np.sum(eps**2))
    assert abs(realized - snr) <= 0.5


@given(st.lists(st.floats(0, 10), min_size=1, max_size=64).filter(lambda v: sum(v) > 1e-3))
def test_normalize_unit_mass(values):
    n = P.normalize(np.array(values))
    assert n.min() >= 0 and abs(n.sum() - 1.0) <= 1e-12


def test_psf_validation():
    with pytest.raises(InvalidDimensionError):
        P.Psf(np.ones((2, 3)) / 6)
    with pytest.raises(InvalidInputError):
        P.Psf(np.array([[0.5, 0.6], [0.0, -0.1]]))
    with pytest.raises(InvalidInputError):
        P.Psf(np.full((2, 2), 0.3))
    with pytest.raises(InvalidInputError):
        P.normalize(np.zeros((3, 3)))


def test_text_and_raw_roundtrip(tmp_path):
    g = P.gaussian_psf(9, 1.3)
    P.save_text(g, tmp_path / "g.txt")
    assert np.array_equal(P.load_psf(tmp_path / "g.txt").data, g.data)
    P.save_raw(g, tmp_path / "g.raw")
    back = P.load_psf(tmp_path / "g.raw")
    check_invariants(back)
    np.testing.assert_allclose(back.data, g.data, rtol=1e-6, atol=1e-9)
    raw = (tmp_path / "g.raw").read_bytes()
    assert raw[:4] == b"PSF1" and len(raw) == 16 + 4 * 81
    (tmp_path / "bad.raw").write_bytes(b"PSF1" + raw[4:20])
    with pytest.raises((InvalidDimensionError, InvalidInputError)):
        P.load_psf(tmp_path / "bad.raw")
