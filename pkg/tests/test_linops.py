import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psfinv import linops as L
from psfinv.errors import InvalidDimensionError, SizeLimitError
from psfinv.psf import Psf, gaussian_psf, impulse_psf


def random_psf(rng, side):
    return Psf.from_array(rng.random((side, side)) + 0.05, "rand")


def naive_circular(x, k):
    """Direct double sum: y[i,j] = sum_{a,b} k[a,b] x[i-a+c, j-b+c] (mod n)."""
    n, s = x.shape[0], k.shape[0]
    c = s // 2
    y = np.zeros_like(x)
    for i in range(n):
        for j in range(n):
            for a in range(s):
                for b in range(s):
                    y[i, j] += k[a, b] * x[(i - a + c) % n, (j - b + c) % n]
    return y


def test_convolve_matches_naive_sum():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 4))
    k = random_psf(rng, 3)
    op = L.ConvOperator(k, 4)
    np.testing.assert_allclose(L.convolve(x, op), naive_circular(x, k.data), atol=1e-12)
    np.testing.assert_allclose(L.build_dense_matrix(op) @ x.ravel(), L.convolve(x, op).ravel(), atol=1e-12)


def test_constant_image_preserved():
    x = np.full((8, 8), 0.37)
    np.testing.assert_allclose(L.convolve(x, L.ConvOperator(gaussian_psf(5, 1.2), 8)), x, atol=1e-14)


def test_dense_matrix_properties():
    assert np.array_equal(L.build_dense_matrix(L.ConvOperator(impulse_psf(4), 4)), np.eye(16))
    H = L.build_dense_matrix(L.ConvOperator(gaussian_psf(5, 1.0), 8))
    np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-14)
    rng = np.random.default_rng(1)
    op = L.ConvOperator(random_psf(rng, 5), 8)
    H = L.build_dense_matrix(op)
    for _ in range(10):
        x = rng.normal(size=(8, 8))
        np.testing.assert_allclose(H @ x.ravel(), L.convolve(x, op).ravel(), atol=1e-12)


def test_zero_pad_dense_matches_fft():
    rng = np.random.default_rng(2)
    op = L.ConvOperator(random_psf(rng, 3), 6, "zero-pad")
    x = rng.normal(size=(6, 6))
    np.testing.assert_allclose(L.build_dense_matrix(op) @ x.ravel(), L.convolve(x, op).ravel(), atol=1e-12)


def test_guardrail():
    with pytest.raises(SizeLimitError):
        L.build_dense_matrix(L.ConvOperator(impulse_psf(3), 65))
    with pytest.raises(InvalidDimensionError):
        L.ConvOperator(impulse_psf(9), 8)


def test_condition_number_examples():
    s = L.condition_number_dense(L.ConvOperator(impulse_psf(4), 4))
    assert s.kappa == 1.0 and s.kappa_hth == 1.0
    assert L.condition_number_circulant(impulse_psf(8)).kappa == 1.0
    # 2-point DFT of [0.75, 0.25] is {1.0, 0.5}
    C = L.circulant_matrix_1d([0.75, 0.25])
    assert L.summarize(np.linalg.svd(C, compute_uv=False)).kappa == pytest.approx(2.0, rel=1e-14)
    assert L.summarize(np.abs(np.fft.fft([0.75, 0.25]))).kappa == pytest.approx(2.0, rel=1e-14)
    assert math.isinf(L.summarize(np.abs(np.fft.fft([0.5, 0.5]))).kappa)
    narrow = L.condition_number_circulant(gaussian_psf(16, 0.5)).kappa
    wide = L.condition_number_circulant(gaussian_psf(16, 4.0)).kappa
    assert wide > narrow


def test_summary_json_roundtrip():
    s = L.summarize([1.0, 0.0])
    assert s.singular and s.to_dict()["kappa"] == "inf"
    back = L.SpectrumSummary.from_dict(s.to_dict())
    assert math.isinf(back.kappa)


@given(st.integers(0, 2**20), st.integers(2, 8))
@settings(max_examples=30, deadline=None)
def test_linearity(seed, n):
    rng = np.random.default_rng(seed)
    op = L.ConvOperator(random_psf(rng, min(n, 3)), n)
    x, z = rng.normal(size=(2, n, n))
    a, b = rng.normal(size=2)
    np.testing.assert_allclose(
        L.convolve(a * x + b * z, op), a * L.convolve(x, op) + b * L.convolve(z, op), atol=1e-10
    )


@given(st.integers(0, 2**20), st.integers(2, 16))
@settings(max_examples=30, deadline=None)
def test_dft_roundtrip(seed, n):
    x = np.random.default_rng(seed).normal(size=(n, n))
    np.testing.assert_allclose(np.fft.ifft2(np.fft.fft2(x)).real, x, atol=1e-10)
