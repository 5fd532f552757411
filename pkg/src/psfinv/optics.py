"""Fresnel rendering of diffractive-lens PSFs from Zernike heightmaps.

Heights are in micrometres. A lens of height ``phi`` adds the phase
``2 pi delta_eta phi / lambda`` to a unit-amplitude field on a binary
circular aperture; the quadratic Fresnel phase ``pi r^2 / (lambda z)`` is
applied and a centered unitary DFT gives the sensor-plane field. The PSF is
its squared magnitude normalized to unit mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import AliasingError, InvalidDimensionError, InvalidParameterError
from .psf import Psf, normalize

MICRON = 1e-6


@dataclass(frozen=True)
class OpticalParams:
    wavelengths: tuple[float, ...] = (460e-9, 550e-9, 640e-9)
    z: float = 50e-3
    delta_eta: float = 0.5
    aperture_side: int = 64
    pitch: float = 16e-6
    sensitivity: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if not self.wavelengths or min(self.wavelengths) <= 0:
            raise InvalidParameterError("wavelengths must be positive")
        if not (self.z > 0 and self.delta_eta > 0 and self.pitch > 0):
            raise InvalidParameterError("z, delta_eta and pitch must be positive")
        if self.aperture_side < 2:
            raise InvalidDimensionError("aperture_side must be >= 2")
        s = self.sensitivity_matrix
        if s.shape[1] != len(self.wavelengths) or s.min() < 0 or not np.allclose(s.sum(axis=1), 1.0):
            raise InvalidParameterError("sensitivity rows must be non-negative, sum to 1, one column per wavelength")

    @property
    def sensitivity_matrix(self) -> np.ndarray:
        if self.sensitivity is None:
            return np.eye(len(self.wavelengths))
        return np.asarray(self.sensitivity, dtype=np.float64)

    @property
    def channels(self) -> int:
        return self.sensitivity_matrix.shape[0]

    @property
    def design_index(self) -> int:
        """The middle wavelength, used for presets."""
        return len(self.wavelengths) // 2

    def max_pitch(self) -> float:
        return math.sqrt(min(self.wavelengths) * self.z / self.aperture_side)

    def check_sampling(self, coeffs=None) -> None:
        for lam in self.wavelengths:
            bound = lam * self.z / self.aperture_side
            if self.pitch**2 > bound:
                raise AliasingError(
                    f"pitch^2 = {self.pitch**2:.3e} m^2 exceeds lambda*z/side = {bound:.3e} m^2 "
                    f"at lambda = {lam * 1e9:.0f} nm",
                    coeffs=None if coeffs is None else np.array(coeffs),
                )

    def sensor_pitch(self, wavelength_index: int) -> float:
        """Sample spacing of the rendered PSF on the sensor (metres)."""
        lam = self.wavelengths[wavelength_index]
        return lam * self.z / (self.aperture_side * self.pitch)

    @classmethod
    def for_side(cls, side: int, **kw) -> "OpticalParams":
        """Defaults rescaled to ``side`` samples with the pitch at 80% of the aliasing bound."""
        base = cls(aperture_side=side, **kw)
        return cls(aperture_side=side, pitch=0.8 * base.max_pitch(), **kw)


# -- geometry and Zernike basis ----------------------------------------------


@lru_cache(maxsize=16)
def _polar(side: int):
    # pixel-centered so the disk is symmetric under both reflections
    u = np.arange(side) - (side - 1) / 2
    y, x = np.meshgrid(u, u, indexing="ij")
    rho = np.hypot(x, y) / (side / 2)
    theta = np.arctan2(y, x)
    return x, y, rho, theta


def aperture(side: int) -> np.ndarray:
    """Binary disk of radius side/2 samples; symmetric under point reflection."""
    return (_polar(side)[2] < 1.0).astype(np.float64)


def noll_to_nm(j: int) -> tuple[int, int]:
    """Noll index (1-based) to radial order n and signed azimuthal order m."""
    if j < 1:
        raise InvalidParameterError("Noll indices start at 1")
    n = 0
    while (n + 1) * (n + 2) // 2 < j:
        n += 1
    m_abs = n % 2 + 2 * ((j - n * (n + 1) // 2 - 1 + (n + 1) % 2) // 2)
    m = m_abs if j % 2 == 0 else -m_abs
    return n, (0 if m_abs == 0 else m)


def _radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * math.factorial(n - s) / (
            math.factorial(s) * math.factorial((n + m) // 2 - s) * math.factorial((n - m) // 2 - s)
        )
        out += c * rho ** (n - 2 * s)
    return out


def zernike(j: int, side: int) -> np.ndarray:
    n, m = noll_to_nm(j)
    _, _, rho, theta = _polar(side)
    r = _radial(n, abs(m), rho)
    if m == 0:
        z = math.sqrt(n + 1) * r
    elif m > 0:
        z = math.sqrt(2 * (n + 1)) * r * np.cos(m * theta)
    else:
        z = math.sqrt(2 * (n + 1)) * r * np.sin(-m * theta)
    return z * aperture(side)


@dataclass(frozen=True)
class ZernikeBasis:
    count: int
    side: int
    grids: np.ndarray = field(repr=False)  # (count, side, side)

    def render(self, coeffs) -> np.ndarray:
        a = np.asarray(coeffs, dtype=np.float64)
        if a.shape != (self.count,):
            raise InvalidDimensionError(f"expected {self.count} coefficients, got shape {a.shape}")
        return np.tensordot(a, self.grids, axes=1)


def zernike_basis(L: int, side: int) -> ZernikeBasis:
    if L < 1:
        raise InvalidParameterError("L must be >= 1")
    if side < 16:
        raise InvalidDimensionError("Zernike grids need side >= 16")
    raw = np.stack([zernike(j, side) for j in range(1, L + 1)])
    # Gram-Schmidt over the sampled disk (in Noll order) removes the
    # discretization cross-talk; signs follow the analytic polynomials and
    # the scale keeps Noll's unit mean square over the pupil.
    inside = aperture(side).astype(bool)
    A = raw[:, inside].T
    Q, R = np.linalg.qr(A)
    Q *= np.sign(np.diag(R)) * math.sqrt(inside.sum())
    grids = np.zeros_like(raw)
    grids[:, inside] = Q.T
    grids.setflags(write=False)
    return ZernikeBasis(L, side, grids)


@dataclass(frozen=True)
class Heightmap:
    """Lens surface ``phi = sum_i a_i Z_i`` in micrometres."""

    coeffs: np.ndarray
    basis: ZernikeBasis

    @property
    def phi(self) -> np.ndarray:
        return self.basis.render(self.coeffs)

    @classmethod
    def zeros(cls, basis: ZernikeBasis) -> "Heightmap":
        return cls(np.zeros(basis.count), basis)


# -- rendering ----------------------------------------------------------------


def _fresnel_phase(p: OpticalParams, lam: float) -> np.ndarray:
    x, y, _, _ = _polar(p.aperture_side)
    return math.pi * ((x * p.pitch) ** 2 + (y * p.pitch) ** 2) / (lam * p.z)


def _dft(field_: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(field_), norm="ortho"))


def height_to_phase(phi, p: OpticalParams, wavelength_index: int) -> np.ndarray:
    lam = p.wavelengths[wavelength_index]
    return 2.0 * math.pi * p.delta_eta * np.asarray(phi) * MICRON / lam


def phase_to_height(phase, p: OpticalParams, wavelength_index: int | None = None) -> np.ndarray:
    idx = p.design_index if wavelength_index is None else wavelength_index
    lam = p.wavelengths[idx]
    return np.asarray(phase) * lam / (2.0 * math.pi * p.delta_eta * MICRON)


def sensor_intensity(lens_phase: np.ndarray, p: OpticalParams, wavelength_index: int):
    """Unnormalized intensity and the complex sensor field."""
    lam = p.wavelengths[wavelength_index]
    U = aperture(p.aperture_side)
    field_ = U * np.exp(1j * (lens_phase + _fresnel_phase(p, lam)))
    F = _dft(field_)
    return np.abs(F) ** 2, F, field_


def render_phase(lens_phase, p: OpticalParams, wavelength_index: int, id: str = "rendered") -> Psf:
    lens_phase = np.asarray(lens_phase, dtype=np.float64)
    if lens_phase.shape != (p.aperture_side, p.aperture_side):
        raise InvalidDimensionError(f"phase grid {lens_phase.shape} does not match aperture_side {p.aperture_side}")
    p.check_sampling()
    I, _, _ = sensor_intensity(lens_phase, p, wavelength_index)
    return Psf(normalize(I), id)


def render_psf(h, p: OpticalParams, wavelength_index: int) -> Psf:
    """PSF of a heightmap (``Heightmap`` or a height grid in micrometres)."""
    phi = h.phi if isinstance(h, Heightmap) else np.asarray(h, dtype=np.float64)
    if phi.shape != (p.aperture_side, p.aperture_side):
        raise InvalidDimensionError(f"heightmap grid {phi.shape} does not match aperture_side {p.aperture_side}")
    try:
        p.check_sampling()
    except AliasingError as exc:
        raise AliasingError(str(exc), coeffs=getattr(h, "coeffs", None)) from None
    return render_phase(height_to_phase(phi, p, wavelength_index), p, wavelength_index, id=f"lens_w{wavelength_index}")


def render_psf_jacobian(h: Heightmap, p: OpticalParams, wavelength_index: int):
    """PSF grid and its derivatives with respect to each Zernike coefficient.

    Forward-mode sensitivities: one extra DFT per coefficient. Returns
    ``(psf, jac)`` with ``jac`` of shape (L, side, side).
    """
    p.check_sampling(h.coeffs)
    scale = 2.0 * math.pi * p.delta_eta * MICRON / p.wavelengths[wavelength_index]
    I, F, field_ = sensor_intensity(scale * h.phi, p, wavelength_index)
    total = I.sum()
    jac = np.empty((h.basis.count,) + I.shape)
    for i, Z in enumerate(h.basis.grids):
        dF = _dft(1j * scale * Z * field_)
        dI = 2.0 * np.real(np.conj(F) * dF)
        jac[i] = dI / total - I * dI.sum() / total**2
    return I / total, jac


# -- presets ------------------------------------------------------------------


def _wrap(phase):
    return np.mod(phase, 2.0 * math.pi)


def fresnel_lens_phase(p: OpticalParams, focal: float, wavelength_index: int | None = None) -> np.ndarray:
    """Wrapped thin-lens phase ``-pi r^2 / (lambda f)`` at the design wavelength."""
    if not focal > 0:
        raise InvalidParameterError("focal length must be positive")
    idx = p.design_index if wavelength_index is None else wavelength_index
    x, y, _, _ = _polar(p.aperture_side)
    r2 = (x * p.pitch) ** 2 + (y * p.pitch) ** 2
    return _wrap(-math.pi * r2 / (p.wavelengths[idx] * focal)) * aperture(p.aperture_side)


def spiral_phase(charge: int, side: int) -> np.ndarray:
    """Vortex phase ``charge * atan2(y, x)`` wrapped to [0, 2 pi)."""
    if charge == 0:
        raise InvalidParameterError("spiral charge must be non-zero")
    _, _, _, theta = _polar(side)
    return _wrap(charge * theta) * aperture(side)


def fresnel_psf(side: int, defocus: float = 0.0, id: str | None = None) -> Psf:
    """Fresnel-lens PSF focused at ``z * (1 + defocus)``; ``defocus = 0`` is in focus."""
    p = OpticalParams.for_side(side)
    phase = fresnel_lens_phase(p, p.z * (1.0 + defocus))
    return render_phase(phase, p, p.design_index, id or f"fresnel_df{defocus:g}")


def spiral_psf(side: int, charge: int = 1, defocus: float = 0.0, id: str | None = None) -> Psf:
    """Vortex lens: spiral phase on top of a Fresnel lens focused at ``z (1 + defocus)``."""
    p = OpticalParams.for_side(side)
    phase = _wrap(fresnel_lens_phase(p, p.z * (1.0 + defocus)) + spiral_phase(charge, side))
    return render_phase(phase * aperture(side), p, p.design_index, id or f"spiral_c{charge}_df{defocus:g}")


# -- image formation -----------------------------------------------------------


def wavelength_psfs(h, p: OpticalParams) -> list[Psf]:
    return [render_psf(h, p, w) for w in range(len(p.wavelengths))]


def sensor_image(x, h, p: OpticalParams) -> np.ndarray:
    """Per-wavelength circular blur followed by the channel sensitivity mix.

    ``x`` has one band per wavelength (shape (W, n, n)); the result has one
    band per sensor channel.
    """
    from .linops import ConvOperator, convolve

    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != len(p.wavelengths):
        raise InvalidDimensionError(f"scene must have {len(p.wavelengths)} bands, got shape {x.shape}")
    blurred = np.stack(
        [convolve(band, ConvOperator(psf, x.shape[1])) for band, psf in zip(x, wavelength_psfs(h, p))]
    )
    return np.tensordot(p.sensitivity_matrix, blurred, axes=1)


def encircled_energy(psf: Psf, half_width: int = 1) -> float:
    c = psf.side // 2
    return float(psf.data[c - half_width : c + half_width + 1, c - half_width : c + half_width + 1].sum())


def second_moment_radius(psf: Psf, pitch: float = 1.0) -> float:
    """RMS radius about the centroid, in units of ``pitch``."""
    u = (np.arange(psf.side) - psf.side // 2) * pitch
    y, x = np.meshgrid(u, u, indexing="ij")
    w = psf.data
    cx, cy = (w * x).sum(), (w * y).sum()
    return float(np.sqrt((w * ((x - cx) ** 2 + (y - cy) ** 2)).sum()))
