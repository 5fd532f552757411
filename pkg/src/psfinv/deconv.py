"""Reference deconvolution solvers (circular boundary) and quality measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError, InvalidParameterError, NumericFailureError, StepSizeError
from .linops import SINGULAR_RTOL, transfer_function
from .psf import Psf

# grid searched for the Wiener noise-power hyperparameter
WIENER_GRID = tuple(10.0**e for e in range(-6, 0))


@dataclass(frozen=True)
class WienerConfig:
    sigma2: float = 1e-4

    def __post_init__(self):
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise InvalidParameterError(f"sigma2 must be finite and >= 0, got {self.sigma2}")


@dataclass(frozen=True)
class TvConfig:
    rho: float = 1e-3
    iters: int = 100
    step: float = 1.0
    inner_iters: int = 10

    def __post_init__(self):
        if self.rho < 0 or not self.step > 0 or self.iters < 1 or self.inner_iters < 1:
            raise InvalidParameterError(f"invalid TV configuration {self}")


def _spectrum(y: np.ndarray, psf: Psf) -> np.ndarray:
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise InvalidDimensionError(f"image must be square, got {y.shape}")
    return transfer_function(psf, y.shape[0])


def wiener_deconvolve(y, psf: Psf, cfg: WienerConfig = WienerConfig()) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    H = _spectrum(y, psf)
    mag2 = np.abs(H) ** 2
    if cfg.sigma2 == 0 and np.sqrt(mag2.min()) < SINGULAR_RTOL * np.sqrt(mag2.max()):
        raise NumericFailureError("sigma2 = 0 with zero-valued transfer-function bins")
    G = np.conj(H) / (mag2 + cfg.sigma2)
    return np.fft.ifft2(G * np.fft.fft2(y)).real


# -- total variation ---------------------------------------------------------


def grad2d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with zero flux at the last row/column."""
    gv = np.zeros_like(x)
    gh = np.zeros_like(x)
    gv[:-1, :] = x[1:, :] - x[:-1, :]
    gh[:, :-1] = x[:, 1:] - x[:, :-1]
    return gv, gh


def div2d(pv: np.ndarray, ph: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad2d`."""
    d = np.zeros_like(pv)
    d[0, :] += pv[0, :]
    d[1:-1, :] += pv[1:-1, :] - pv[:-2, :]
    d[-1, :] -= pv[-2, :]
    d[:, 0] += ph[:, 0]
    d[:, 1:-1] += ph[:, 1:-1] - ph[:, :-2]
    d[:, -1] -= ph[:, -2]
    return d


def total_variation(x: np.ndarray) -> float:
    gv, gh = grad2d(x)
    return float(np.sqrt(gv**2 + gh**2).sum())


def tv_prox(v: np.ndarray, weight: float, iters: int, dual=None):
    """Chambolle's projection iteration for ``argmin 0.5|x-v|^2 + weight*TV(x)``.

    Returns the primal estimate and the dual field so callers can warm start.
    """
    if weight == 0:
        return v.copy(), dual
    tau = 0.125
    pv, ph = (np.zeros_like(v), np.zeros_like(v)) if dual is None else dual
    for _ in range(iters):
        gv, gh = grad2d(div2d(pv, ph) - v / weight)
        norm = 1.0 + tau * np.sqrt(gv**2 + gh**2)
        pv = (pv + tau * gv) / norm
        ph = (ph + tau * gh) / norm
    return v - weight * div2d(pv, ph), (pv, ph)


def tv_objective(x, y, H, rho) -> float:
    r = np.fft.ifft2(H * np.fft.fft2(x)).real - y
    return 0.5 * float(np.sum(r * r)) + rho * total_variation(x)


def tv_deconvolve(y, psf: Psf, cfg: TvConfig = TvConfig(), trace: list | None = None) -> np.ndarray:
    """Proximal gradient on ``0.5|y - Hx|^2 + rho TV(x)``.

    A candidate whose objective exceeds the current one is rejected (the
    iterate is kept and the warm-started inner solver gets another pass),
    which makes the objective sequence monotone. Ten consecutive rejections
    mean the step is too large for the operator, unless the rise is at
    round-off level, which ends the iteration instead.
    """
    y = np.asarray(y, dtype=np.float64)
    H = _spectrum(y, psf)
    Hc = np.conj(H)
    x = y.copy()
    obj = tv_objective(x, y, H, cfg.rho)
    if trace is not None:
        trace.append(obj)
    dual = None
    rejected = 0
    for _ in range(cfg.iters):
        X = np.fft.fft2(x)
        grad = np.fft.ifft2(Hc * (H * X - np.fft.fft2(y))).real
        cand, dual = tv_prox(x - cfg.step * grad, cfg.step * cfg.rho, cfg.inner_iters, dual)
        cand_obj = tv_objective(cand, y, H, cfg.rho)
        if not math.isfinite(cand_obj):
            raise StepSizeError("TV objective became non-finite; reduce the step size")
        if cand_obj <= obj:
            x, obj, rejected = cand, cand_obj, 0
        else:
            rejected += 1
            if rejected >= 10:
                if cand_obj - obj <= 1e-6 * obj:
                    break  # stalled at the optimum; the inexact prox only adds round-off
                raise StepSizeError(
                    f"TV objective grew for 10 consecutive iterations at step={cfg.step}; use a smaller step"
                )
        if trace is not None:
            trace.append(obj)
    return x


def richardson_lucy(y, psf: Psf, iters: int = 30, trace: list | None = None, truth=None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.min() < 0:
        raise InvalidInputError("Richardson-Lucy needs a non-negative measurement")
    if iters < 1:
        raise InvalidParameterError("iters must be >= 1")
    H = _spectrum(y, psf)
    Hc = np.conj(H)
    x = y.copy()
    for _ in range(iters):
        est = np.fft.ifft2(H * np.fft.fft2(x)).real
        ratio = np.divide(y, est, out=np.zeros_like(y), where=est > 0)
        x = x * np.fft.ifft2(Hc * np.fft.fft2(ratio)).real
        np.clip(x, 0.0, None, out=x)
        if trace is not None and truth is not None:
            trace.append(mse(x, truth))
    return x


# -- quality ------------------------------------------------------------------


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidDimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    m = mse(a, b)
    if m == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / m)


def tune_wiener(pairs, grid=WIENER_GRID) -> float:
    """Pick the sigma2 from ``grid`` with lowest total MSE over (y, psf, x) triples."""
    best, best_err = None, math.inf
    for s2 in grid:
        err = sum(mse(wiener_deconvolve(y, p, WienerConfig(s2)), x) for y, p, x in pairs)
        if err < best_err:
            best, best_err = s2, err
    return best
