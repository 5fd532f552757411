"""Convolution operators, their dense realization and condition numbers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvalidParameterError, SizeLimitError
from .psf import Psf

DENSE_LIMIT = 4096
SINGULAR_RTOL = 1e-14
BOUNDARIES = ("circular", "zero-pad")


@dataclass(frozen=True)
class ConvOperator:
    kernel: Psf
    image_side: int
    boundary: str = "circular"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise InvalidParameterError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.image_side < self.kernel.side:
            raise InvalidDimensionError(
                f"image_side {self.image_side} is smaller than kernel side {self.kernel.side}"
            )

    @property
    def n(self) -> int:
        return self.image_side**2


@dataclass(frozen=True)
class SpectrumSummary:
    sigma_max: float
    sigma_min: float
    kappa: float

    @property
    def kappa_hth(self) -> float:
        return self.kappa**2

    @property
    def singular(self) -> bool:
        return math.isinf(self.kappa)

    def to_dict(self) -> dict:
        enc = lambda v: "inf" if math.isinf(v) else v  # noqa: E731
        return {
            "sigma_max": self.sigma_max,
            "sigma_min": self.sigma_min,
            "kappa": enc(self.kappa),
            "kappa_hth": enc(self.kappa_hth),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumSummary":
        return cls(float(d["sigma_max"]), float(d["sigma_min"]), float(d["kappa"]))


def summarize(singular_values) -> SpectrumSummary:
    """Extreme singular values and their ratio; ratio is ``inf`` when singular."""
    s = np.abs(np.asarray(singular_values, dtype=np.float64)).ravel()
    smax, smin = float(s.max()), float(s.min())
    if smax == 0 or smin < SINGULAR_RTOL * smax:
        return SpectrumSummary(smax, smin, math.inf)
    return SpectrumSummary(smax, smin, smax / smin)


def embed_kernel(psf: Psf, image_side: int) -> np.ndarray:
    """Zero-pad the kernel to the image grid with its center moved to (0, 0)."""
    if image_side < psf.side:
        raise InvalidDimensionError(f"image_side {image_side} < kernel side {psf.side}")
    out = np.zeros((image_side, image_side))
    out[: psf.side, : psf.side] = psf.data
    c = psf.side // 2
    return np.roll(out, (-c, -c), axis=(0, 1))


def transfer_function(psf: Psf, image_side: int) -> np.ndarray:
    return np.fft.fft2(embed_kernel(psf, image_side))


def _check_image(image, op: ConvOperator) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.shape != (op.image_side, op.image_side):
        raise InvalidDimensionError(f"image shape {x.shape} does not match operator side {op.image_side}")
    return x


def convolve(image, op: ConvOperator) -> np.ndarray:
    x = _check_image(image, op)
    if op.boundary == "circular":
        return np.fft.ifft2(np.fft.fft2(x) * transfer_function(op.kernel, op.image_side)).real
    # linear convolution on a grid large enough to avoid wrap-around, then
    # crop the "same" window aligned with the kernel center
    n, s = op.image_side, op.kernel.side
    size = n + s - 1
    full = np.fft.irfft2(np.fft.rfft2(x, (size, size)) * np.fft.rfft2(op.kernel.data, (size, size)), (size, size))
    c = s // 2
    return full[c : c + n, c : c + n]


def correlate(image, op: ConvOperator) -> np.ndarray:
    """Adjoint of :func:`convolve` (circular mode only)."""
    x = _check_image(image, op)
    if op.boundary != "circular":
        raise InvalidParameterError("correlate is only defined for circular boundary")
    return np.fft.ifft2(np.fft.fft2(x) * np.conj(transfer_function(op.kernel, op.image_side))).real


def build_dense_matrix(op: ConvOperator) -> np.ndarray:
    """Explicit n x n matrix with ``H @ x.ravel() == convolve(x, op).ravel()``."""
    if op.n > DENSE_LIMIT:
        raise SizeLimitError(
            f"dense matrix for image_side={op.image_side} has n={op.n} > {DENSE_LIMIT}; "
            "use condition_number_circulant for circular operators"
        )
    n = op.image_side
    idx = np.arange(n)
    # output pixel (i, j) reads input pixel (p, q) through kernel offset
    di = idx[:, None] - idx[None, :]  # i - p
    if op.boundary == "circular":
        kpad = embed_kernel(op.kernel, n)
        rows = np.mod(di, n)
        H = kpad[rows[:, None, :, None], rows[None, :, None, :]]
    else:
        s, c = op.kernel.side, op.kernel.side // 2
        off = di + c
        valid = (off >= 0) & (off < s)
        off = np.clip(off, 0, s - 1)
        H = op.kernel.data[off[:, None, :, None], off[None, :, None, :]]
        H = H * (valid[:, None, :, None] & valid[None, :, None, :])
    return H.reshape(n * n, n * n)


def condition_number_dense(op: ConvOperator) -> SpectrumSummary:
    H = build_dense_matrix(op)
    return summarize(np.linalg.svd(H, compute_uv=False))


def condition_number_circulant(psf: Psf, image_side: int | None = None) -> SpectrumSummary:
    """Exact for circular boundary: singular values are the DFT magnitudes."""
    image_side = psf.side if image_side is None else image_side
    return summarize(np.abs(transfer_function(psf, image_side)))


def circulant_matrix_1d(kernel) -> np.ndarray:
    """Dense circulant whose first column is ``kernel`` (1-D helper)."""
    c = np.asarray(kernel, dtype=np.float64)
    n = c.size
    return c[np.mod(np.arange(n)[:, None] - np.arange(n)[None, :], n)]
