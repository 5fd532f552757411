"""End-to-end lens design with the learned invertibility metric as a regularizer.

The recovery model is a Wiener filter with one learnable noise power
``sigma2`` (stored as its log). The outer problem updates the Zernike
coefficients and ``log sigma2`` with Adam on

    recon_mse + gamma * || delta - N(h_bar) ||_2

where ``h_bar`` is the channel-mean PSF and ``N`` is the metric network
re-fitted to the current PSF every outer epoch (the inner problem).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metric as M
from .errors import ConfigurationError, InvalidDimensionError, InvalidParameterError, NumericFailureError
from .linops import condition_number_circulant, embed_kernel
from .optics import Heightmap, OpticalParams, render_psf_jacobian, zernike_basis
from .psf import Psf
from .scenes import ingest_images, synthetic_scenes

DEGENERATE_SIGMA2 = 1e-12


@dataclass(frozen=True)
class E2EConfig:
    gamma: float = 0.0
    outer_epochs: int = 100
    inner_epochs: int = 50
    outer_lr: float = 0.05
    inner_lr: float = 1e-3
    L: int = 15
    warm_start: bool = True
    seed: int = 0
    dataset_dir: str | None = None
    synthetic: bool = True
    side: int = 64
    hidden: int = 256
    batch: int = 4
    snr_db: float = 30.0
    init_sigma2: float = 1e-3
    metric_epochs: int = 300

    def __post_init__(self):
        if not (self.outer_lr > 0 and self.inner_lr > 0):
            raise InvalidParameterError("learning rates must be positive")
        if self.outer_epochs < 1 or self.inner_epochs < 1 or self.metric_epochs < 1:
            raise InvalidParameterError("epoch counts must be >= 1")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise InvalidParameterError("gamma must be finite and >= 0")
        if self.batch < 1 or self.L < 1:
            raise InvalidParameterError("batch and L must be >= 1")


@dataclass
class RecoveryParams:
    log_sigma2: float

    def __post_init__(self):
        if not math.isfinite(self.log_sigma2):
            raise InvalidParameterError("log_sigma2 must be finite")

    @property
    def sigma2(self) -> float:
        return math.exp(self.log_sigma2)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    outer_loss: float
    recon_mse: float
    metric: float
    gamma_term: float
    psnr: float


@dataclass
class E2EHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "outer_loss", "recon_mse", "metric", "gamma_term", "psnr"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.outer_loss), repr(r.recon_mse), repr(r.metric), repr(r.gamma_term), repr(r.psnr)])


# -- Wiener layer ----------------------------------------------------------------


def wiener_layer_grads(x, psf: Psf, rp: RecoveryParams, noise=None):
    """Mean MSE of Wiener(H x + e) against x and its analytic gradients.

    ``x`` is a batch (B, n, n); ``noise`` an optional batch of additive
    measurement noise of the same shape. Returns
    ``(loss, grad_psf, grad_log_sigma2)``; ``grad_psf`` has the PSF's shape.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] == 0 or x.shape[1] != x.shape[2]:
        raise InvalidDimensionError(f"expected a non-empty batch of square images, got {x.shape}")
    B, n, _ = x.shape
    N = n * n
    s = rp.sigma2
    H = np.fft.fft2(embed_kernel(psf, n))
    mag2 = (H * np.conj(H)).real
    D = mag2 + s
    if s < DEGENERATE_SIGMA2 and D.min() < DEGENERATE_SIGMA2:
        raise NumericFailureError("Wiener layer: sigma2 below 1e-12 with zero transfer-function bins")
    X = np.fft.fft2(x)
    E = 0.0 if noise is None else np.fft.fft2(np.asarray(noise, dtype=np.float64))
    Y = H * X + E
    Xh = np.conj(H) * Y / D
    xh = np.fft.ifft2(Xh).real
    err = xh - x
    loss = float(np.mean(err**2))
    # d loss / d xhat, then through the inverse DFT: dL = (1/N) sum conj(A) dXhat
    A = np.fft.fft2(2.0 * err / (B * N))
    cA = np.conj(A)
    dXdH = np.conj(H) * (s * X - np.conj(H) * E) / D**2
    dXdHc = s * Y / D**2
    g_hp = (np.fft.fft2(cA * dXdH).sum(axis=0) / N + np.fft.ifft2(cA * dXdHc).sum(axis=0)).real
    g_s = float(np.real(np.sum(cA * (-Xh / D))) / N)
    c = psf.side // 2
    g_psf = np.roll(g_hp, (c, c), axis=(0, 1))[: psf.side, : psf.side]
    return loss, g_psf, s * g_s


def measurement_noise(scenes, snr_db: float, seed: int) -> np.ndarray:
    """Fixed Gaussian noise per scene/band with power set by the scene's mean power."""
    scenes = np.asarray(scenes, dtype=np.float64)
    if math.isinf(snr_db):
        return np.zeros_like(scenes)
    rng = np.random.default_rng([seed, 7])
    power = np.mean(scenes**2, axis=(-2, -1), keepdims=True)
    return rng.standard_normal(scenes.shape) * np.sqrt(power / 10.0 ** (snr_db / 10.0))


# -- outer problem --------------------------------------------------------------


@dataclass
class OuterState:
    """Carried between outer steps: coefficients, recovery parameter, Adam moments."""

    a: np.ndarray
    rp: RecoveryParams
    adam: M.AdamState = None

    def __post_init__(self):
        if self.adam is None:
            self.adam = M.AdamState.zeros_like(self.params())

    def params(self) -> dict[str, np.ndarray]:
        return {"a": self.a, "log_sigma2": np.array([self.rp.log_sigma2])}


@dataclass(frozen=True)
class StepBreakdown:
    total: float
    recon: float
    metric: float
    gamma_term: float
    grad_a: np.ndarray
    grad_log_sigma2: float


class _Problem:
    """Scenes, noise and optics shared by every outer step of one run."""

    def __init__(self, cfg: E2EConfig, scenes=None, params: OpticalParams | None = None):
        self.cfg = cfg
        self.params = params or OpticalParams.for_side(cfg.side)
        if self.params.sensitivity is not None and not np.array_equal(
            self.params.sensitivity_matrix, np.eye(len(self.params.wavelengths))
        ):
            raise ConfigurationError("the Wiener-layer recovery assumes identity channel sensitivity")
        W = len(self.params.wavelengths)
        if scenes is None:
            if cfg.dataset_dir is None:
                if not cfg.synthetic:
                    raise ConfigurationError("no dataset_dir and synthetic scenes disabled")
                scenes = synthetic_scenes(cfg.side, cfg.seed, bands=W)
            else:
                scenes = ingest_images(cfg.dataset_dir, cfg.side, synthetic=cfg.synthetic, seed=cfg.seed, bands=W)
        self.scenes = np.asarray(scenes, dtype=np.float64)
        if self.scenes.ndim != 4 or self.scenes.shape[1] != W:
            raise InvalidDimensionError(f"scenes must be (count, {W}, side, side), got {self.scenes.shape}")
        self.noise = measurement_noise(self.scenes, cfg.snr_db, cfg.seed)
        self.basis = zernike_basis(cfg.L, self.params.aperture_side)
        self.batches = [slice(i, i + cfg.batch) for i in range(0, len(self.scenes), cfg.batch)]

    def render(self, a):
        h = Heightmap(np.asarray(a, dtype=np.float64), self.basis)
        pairs = [render_psf_jacobian(h, self.params, w) for w in range(len(self.params.wavelengths))]
        return [p for p, _ in pairs], [j for _, j in pairs]

    @staticmethod
    def mean_psf(psfs) -> np.ndarray:
        return np.mean(psfs, axis=0)

    def recon(self, psfs, rp: RecoveryParams, batch=slice(None)):
        """Channel-averaged Wiener loss and per-channel PSF gradients."""
        C = len(psfs)
        loss, gp, gl = 0.0, [], 0.0
        for c, P in enumerate(psfs):
            l_c, g_c, gl_c = wiener_layer_grads(
                self.scenes[batch, c], Psf(P, f"ch{c}"), rp, self.noise[batch, c]
            )
            loss += l_c / C
            gp.append(g_c / C)
            gl += gl_c / C
        return loss, gp, gl


def outer_loss_and_grad(problem: _Problem, a, rp: RecoveryParams, net: M.MetricNet | None, gamma: float, batch=slice(None)) -> StepBreakdown:
    psfs, jacs = problem.render(a)
    recon, gp, gl = problem.recon(psfs, rp, batch)
    grad_a = sum(np.tensordot(J, g, axes=([1, 2], [0, 1])) for J, g in zip(jacs, gp))
    metric_term, gamma_term = math.nan, 0.0
    if net is not None:
        hbar = problem.mean_psf(psfs).ravel()
        g = M.loss_and_grads(net, hbar, objective="norm")
        metric_term = g.loss
        if gamma > 0:
            gamma_term = gamma * metric_term
            gin = (gamma / len(psfs)) * g.input.reshape(psfs[0].shape)
            grad_a = grad_a + sum(np.tensordot(J, gin, axes=([1, 2], [0, 1])) for J in jacs)
    return StepBreakdown(recon + gamma_term, recon, metric_term, gamma_term, np.asarray(grad_a, dtype=np.float64), gl)


def outer_step(state: OuterState, net: M.MetricNet | None, problem: _Problem, cfg: E2EConfig, batch=slice(None)) -> StepBreakdown:
    """One Adam step on (coefficients, log sigma2); updates ``state`` in place."""
    bd = outer_loss_and_grad(problem, state.a, state.rp, net, cfg.gamma, batch)
    params = state.params()
    M.adam_step(params, {"a": bd.grad_a, "log_sigma2": np.array([bd.grad_log_sigma2])}, state.adam, cfg.outer_lr)
    state.rp = RecoveryParams(float(params["log_sigma2"][0]))
    return bd


# -- driver -------------------------------------------------------------------


@dataclass
class E2EResult:
    coeffs: np.ndarray
    rp: RecoveryParams
    net: M.MetricNet
    history: E2EHistory
    psfs: list[np.ndarray]
    final_metric: float
    final_psnr: float
    final_kappa: float
    cfg: E2EConfig
    inner_time_s: float = 0.0

    def summary(self) -> dict:
        return {
            "gamma": self.cfg.gamma,
            "final_metric": self.final_metric,
            "final_psnr": self.final_psnr,
            "final_kappa": "inf" if math.isinf(self.final_kappa) else self.final_kappa,
            "sigma2": self.rp.sigma2,
            "coeffs": [float(v) for v in self.coeffs],
            "config": asdict(self.cfg),
        }

    def mean_psf(self) -> Psf:
        return Psf.from_array(np.mean(self.psfs, axis=0), f"e2e_gamma{self.cfg.gamma:g}")


def _psnr(mse: float) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def e2e_optimize(cfg: E2EConfig, scenes=None, params: OpticalParams | None = None, progress=None) -> E2EResult:
    """Alternate inner metric fitting and outer Adam steps for ``cfg.outer_epochs``."""
    import time

    problem = _Problem(cfg, scenes, params)
    state = OuterState(np.zeros(cfg.L), RecoveryParams(math.log(cfg.init_sigma2)))
    inner_cfg = M.TrainConfig(lr=cfg.inner_lr, epochs=cfg.inner_epochs, hidden=cfg.hidden, seed=cfg.seed)
    history = E2EHistory()
    net = None
    inner_time = 0.0
    for epoch in range(cfg.outer_epochs):
        psfs, _ = problem.render(state.a)
        hbar = Psf.from_array(problem.mean_psf(psfs), "mean")
        t0 = time.perf_counter()
        net = M.train_metric(hbar, inner_cfg, net=net if cfg.warm_start else None).net
        inner_time += time.perf_counter() - t0
        for batch in problem.batches:
            bd = outer_step(state, net, problem, cfg, batch)
        history.records.append(
            EpochRecord(epoch, bd.total, bd.recon, bd.metric, bd.gamma_term, _psnr(bd.recon))
        )
        if progress is not None:
            progress(history.records[-1])
    psfs, _ = problem.render(state.a)
    recon, _, _ = problem.recon(psfs, state.rp)
    hbar = Psf.from_array(problem.mean_psf(psfs), "final")
    final = M.train_metric(hbar, M.TrainConfig(epochs=cfg.metric_epochs, hidden=cfg.hidden, seed=cfg.seed))
    return E2EResult(
        coeffs=state.a.copy(),
        rp=state.rp,
        net=net,
        history=history,
        psfs=psfs,
        final_metric=final.value,
        final_psnr=_psnr(recon),
        final_kappa=condition_number_circulant(hbar).kappa,
        cfg=cfg,
        inner_time_s=inner_time,
    )


def gamma_sweep(cfg: E2EConfig, gammas, scenes=None, params: OpticalParams | None = None) -> list[E2EResult]:
    """One run per gamma with a shared seed; a gamma = 0 baseline is always included first."""
    gammas = [float(g) for g in gammas]
    if len(gammas) < 2:
        raise InvalidParameterError("gamma_sweep needs at least two gamma values")
    if 0.0 not in gammas:
        gammas = [0.0] + gammas
    from dataclasses import replace

    return [e2e_optimize(replace(cfg, gamma=g), scenes, params) for g in gammas]
