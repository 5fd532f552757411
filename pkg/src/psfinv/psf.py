"""Point spread function container, analytic generators and file formats."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError, InvalidParameterError

MASS_TOL = 1e-12


@dataclass(frozen=True)
class Psf:
    """Non-negative square kernel with unit mass.

    ``data`` is stored as a read-only float64 array. The flattened view
    (row-major, length ``side**2``) is what the metric network consumes.
    """

    data: np.ndarray
    id: str = "psf"

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise InvalidDimensionError(f"PSF must be a non-empty square grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("PSF contains non-finite values")
        if arr.min() < 0:
            raise InvalidInputError("PSF has negative entries")
        if abs(arr.sum() - 1.0) > MASS_TOL:
            raise InvalidInputError(f"PSF mass is {arr.sum()!r}, expected 1")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def side(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.size

    @property
    def center(self) -> tuple[int, int]:
        return self.side // 2, self.side // 2

    def flat(self) -> np.ndarray:
        return self.data.ravel()

    @classmethod
    def from_array(cls, arr, id: str = "psf") -> "Psf":
        """Clamp negatives to zero and rescale to unit mass."""
        return cls(normalize(arr), id)

    def relabel(self, id: str) -> "Psf":
        return Psf(self.data, id)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise at a given SNR; ``snr_db=inf`` means clean."""

    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InvalidParameterError(f"snr_db must be finite or +inf, got {self.snr_db}")

    @property
    def clean(self) -> bool:
        return self.snr_db == math.inf


def normalize(arr) -> np.ndarray:
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, None)
    total = a.sum()
    if not np.isfinite(total) or total <= 0:
        raise InvalidInputError("cannot normalize a kernel with zero or non-finite mass")
    a = a / total
    # one correction pass absorbs the rounding left by the division
    a[np.unravel_index(np.argmax(a), a.shape)] += 1.0 - a.sum()
    return a


def _check_side(side: int, minimum: int = 1) -> int:
    if int(side) != side or side < minimum:
        raise InvalidDimensionError(f"side must be an integer >= {minimum}, got {side}")
    return int(side)


def centered_grid(side: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets (rows, cols) from the center pixel ``side // 2``."""
    u = np.arange(side) - side // 2
    return np.meshgrid(u, u, indexing="ij")


def impulse_psf(side: int) -> Psf:
    side = _check_side(side)
    d = np.zeros((side, side))
    d[side // 2, side // 2] = 1.0
    return Psf(d, "impulse")


def gaussian_psf(side: int, sigma: float) -> Psf:
    side = _check_side(side)
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    v, u = centered_grid(side)
    g = np.exp(-(u**2 + v**2) / (2.0 * sigma**2))
    return Psf(normalize(g), f"gaussian_s{sigma:g}")


def motion_blur_psf(side: int, length: int, angle_deg: float) -> Psf:
    """Line segment of ``length`` pixels through the center.

    The segment is supersampled (16 samples per pixel) and the samples are
    binned to the nearest pixel, so angle 0 gives an exact horizontal run
    and angle 90 its transpose.
    """
    side = _check_side(side)
    if int(length) != length or not 1 <= length <= side:
        raise InvalidParameterError(f"length must be an integer in [1, {side}], got {length}")
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    c = 0.0 if abs(c) < 1e-12 else c
    s = 0.0 if abs(s) < 1e-12 else s
    n = 16 * length
    t = -length / 2 + (np.arange(n) + 0.5) * length / n
    center = side // 2
    rows = np.floor(center - t * s + 0.5).astype(int)
    cols = np.floor(center + t * c + 0.5).astype(int)
    keep = (rows >= 0) & (rows < side) & (cols >= 0) & (cols < side)
    img = np.zeros((side, side))
    np.add.at(img, (rows[keep], cols[keep]), 1.0)
    return Psf(normalize(img), f"motion_l{length}_a{angle_deg:g}")


def diffuser_psf(side: int, seed: int) -> Psf:
    """Speckle PSF from a uniformly random phase mask (privacy-style optic)."""
    from . import optics

    side = _check_side(side, 3)
    params = optics.OpticalParams.for_side(side)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * np.pi, (side, side))
    psf = optics.render_phase(phase, params, params.design_index)
    return psf.relabel(f"diffuser_seed{seed}")


def noise_realization(psf: Psf, spec: NoiseSpec) -> np.ndarray:
    """The additive noise grid ``eps`` that :func:`add_noise` would use.

    Its standard deviation is set so that ``10 log10(|h|^2 / (k sigma^2))``
    equals ``spec.snr_db``.
    """
    if spec.clean:
        return np.zeros_like(psf.data)
    power = float(np.sum(psf.data**2)) / (psf.k * 10.0 ** (spec.snr_db / 10.0))
    rng = np.random.default_rng(spec.seed)
    return rng.normal(0.0, math.sqrt(power), psf.data.shape)


def add_noise(psf: Psf, spec: NoiseSpec) -> Psf:
    """``h + eps``, negatives clamped to 0, then rescaled to unit mass."""
    if spec.clean:
        return psf
    noisy = psf.data + noise_realization(psf, spec)
    return Psf(normalize(noisy), f"{psf.id}+snr{spec.snr_db:g}")


def entropy(psf: Psf) -> float:
    p = psf.flat()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


# -- serialization -----------------------------------------------------------

_MAGIC = b"PSF1"
_HEADER = struct.Struct("<4sIQ")


def save_text(psf: Psf, path) -> None:
    lines = [f"PSF {psf.side}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in psf.data]
    Path(path).write_text("\n".join(lines) + "\n")


def load_text(path, id: str | None = None) -> Psf:
    tokens = Path(path).read_text().split("\n")
    head = tokens[0].split()
    if len(head) != 2 or head[0] != "PSF":
        raise InvalidInputError(f"{path}: missing 'PSF <side>' header")
    side = int(head[1])
    rows = [r.split() for r in tokens[1:] if r.strip()]
    if len(rows) != side or any(len(r) != side for r in rows):
        raise InvalidDimensionError(f"{path}: expected {side} rows of {side} values")
    arr = np.array([[float(v) for v in r] for r in rows])
    return Psf.from_array(arr, id or Path(path).stem)


def save_raw(psf: Psf, path) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, psf.side, 0))
        f.write(psf.data.astype("<f4").tobytes(order="C"))


def load_raw(path, id: str | None = None) -> Psf:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise InvalidInputError(f"{path}: truncated header")
    magic, side, _ = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    if body.size != side * side:
        raise InvalidDimensionError(f"{path}: expected {side * side} floats, found {body.size}")
    # float32 storage loses the exact unit mass; renormalize in double
    return Psf.from_array(body.reshape(side, side).astype(np.float64), id or Path(path).stem)


def load_psf(path) -> Psf:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
    if head == _MAGIC:
        return load_raw(path)
    return load_text(path)
