"""Learned PSF invertibility metric.

A two-layer ReLU network ``N(h) = W2 relu(W1 h + b1) + b2`` is trained with
Adam on the single pair (h, delta), where delta is the unit impulse at the
grid center. The smallest residual norm ``|delta - N(h)|_2`` reached during
training is the metric: lower means the PSF is easier to invert.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvalidDimensionError, InvalidInputError, InvalidParameterError, NumericFailureError
from .psf import NoiseSpec, Psf, add_noise

BLOCKS = ("w1", "b1", "w2", "b2")
OBJECTIVES = ("mse", "norm")


@dataclass
class MetricNet:
    w1: np.ndarray  # (d, k)
    b1: np.ndarray  # (d,)
    w2: np.ndarray  # (k, d)
    b2: np.ndarray  # (k,)

    def __post_init__(self):
        d, k = self.w1.shape
        if self.b1.shape != (d,) or self.w2.shape != (k, d) or self.b2.shape != (k,):
            raise InvalidDimensionError(
                f"inconsistent shapes w1={self.w1.shape} b1={self.b1.shape} w2={self.w2.shape} b2={self.b2.shape}"
            )

    @property
    def k(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "MetricNet":
        return MetricNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks().values())


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 300
    hidden: int = 256
    seed: int = 0
    noise: NoiseSpec | None = None
    resample_noise: bool = False
    objective: str = "mse"

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidParameterError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.hidden < 1:
            raise InvalidParameterError("epochs and hidden must be >= 1")
        if self.objective not in OBJECTIVES:
            raise InvalidParameterError(f"objective must be one of {OBJECTIVES}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {n: np.zeros_like(p, dtype=np.float64) for n, p in params.items()},
            {n: np.zeros_like(p, dtype=np.float64) for n, p in params.items()},
        )

    def coefficients(self, lr: float) -> tuple[float, float]:
        """(step, sqrt of second-moment bias correction) for the current t."""
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        return lr / c1, math.sqrt(c2)


@dataclass
class MetricResult:
    value: float
    best_value: float
    loss_curve: np.ndarray
    net: MetricNet
    best_epoch: int
    psf_id: str = "psf"
    cfg: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self, loss_curve_path: str | None = None) -> dict:
        return {
            "psf_id": self.psf_id,
            "metric": self.value,
            "epochs": self.cfg.epochs,
            "hidden": self.cfg.hidden,
            "seed": self.cfg.seed,
            "loss_curve_path": loss_curve_path,
        }


# -- network primitives -------------------------------------------------------


def init_net(k: int, hidden: int, seed: int) -> MetricNet:
    """He-normal weights (std sqrt(2/fan_in)) and zero biases."""
    if k < 1 or hidden < 1:
        raise InvalidParameterError("k and hidden must be >= 1")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, math.sqrt(2.0 / k), (hidden, k))
    w2 = rng.normal(0.0, math.sqrt(2.0 / hidden), (k, hidden))
    return MetricNet(w1, np.zeros(hidden), w2, np.zeros(k))


def unit_impulse(k: int) -> np.ndarray:
    """Flattened centered impulse for a square grid with ``k`` pixels."""
    side = math.isqrt(k)
    if side * side != k:
        raise InvalidDimensionError(f"k={k} is not a square number")
    delta = np.zeros(k)
    delta[(side // 2) * side + side // 2] = 1.0
    return delta


def _as_input(net: MetricNet, h) -> np.ndarray:
    h = np.asarray(h.flat() if isinstance(h, Psf) else h, dtype=np.float64).ravel()
    if h.size != net.k:
        raise InvalidDimensionError(f"input has length {h.size}, network expects k={net.k}")
    return h


def forward(net: MetricNet, h) -> np.ndarray:
    h = _as_input(net, h)
    return net.w2 @ np.maximum(net.w1 @ h + net.b1, 0.0) + net.b2


@dataclass
class Gradients:
    loss: float
    params: dict[str, np.ndarray]
    input: np.ndarray
    converged: bool = False


def _backward(net, h, delta, objective):
    z = net.w1 @ h + net.b1
    a = np.maximum(z, 0.0)
    r = net.w2 @ a + net.b2 - delta
    norm = float(np.sqrt(r @ r))
    if objective == "norm":
        loss = norm
        go = r / norm if norm > 0 else np.zeros_like(r)
    else:
        loss = norm * norm / r.size
        go = (2.0 / r.size) * r
    gz = (net.w2.T @ go) * (z > 0)
    return loss, norm, go, a, gz


def loss_and_grads(net: MetricNet, h, delta=None, objective: str = "norm") -> Gradients:
    """Loss and its gradients with respect to every parameter block and to h.

    With ``objective="norm"`` the loss is ``|delta - N(h)|_2``; at an exact
    fit the norm is not differentiable and zero gradients are returned with
    ``converged=True``. ``objective="mse"`` uses the mean squared residual.
    """
    h = _as_input(net, h)
    delta = unit_impulse(net.k) if delta is None else np.asarray(delta, dtype=np.float64)
    loss, norm, go, a, gz = _backward(net, h, delta, objective)
    grads = {"w1": np.outer(gz, h), "b1": gz, "w2": np.outer(go, a), "b2": go}
    return Gradients(loss, grads, net.w1.T @ gz, converged=norm == 0.0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """In-place Adam update with bias-corrected moments; returns (params, state)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailureError(f"non-finite gradient in parameter block {name!r}")
    state.t += 1
    step, sqrt_c2 = state.coefficients(lr)
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        state.m[name][...] = m
        state.v[name][...] = v
        p -= step * m / (np.sqrt(v) / sqrt_c2 + state.eps)
    return params, state


# -- training -----------------------------------------------------------------


def _noise_stream(psf: Psf, cfg: TrainConfig):
    """Yields the network input for each epoch."""
    if cfg.noise is None or cfg.noise.clean:
        h = psf.flat()
        while True:
            yield h
    if not cfg.resample_noise:
        h = add_noise(psf, cfg.noise).flat()
        while True:
            yield h
    seeds = np.random.SeedSequence(cfg.noise.seed)
    while True:
        (child,) = seeds.spawn(1)
        s = int(child.generate_state(1)[0])
        yield add_noise(psf, NoiseSpec(cfg.noise.snr_db, s)).flat()


def train_metric(
    psf: Psf,
    cfg: TrainConfig = TrainConfig(),
    net: MetricNet | None = None,
    stop_below: float | None = None,
    fused: bool = True,
) -> MetricResult:
    """Fit the metric network to (psf, delta) and report the best residual norm.

    ``net`` warm starts from existing parameters (with fresh Adam moments);
    otherwise a network is initialized from ``cfg.seed``. ``stop_below``
    ends training early once the residual norm drops below it. ``fused``
    selects the numba update path; the NumPy path is kept as a reference.
    """
    k = psf.k
    net = init_net(k, cfg.hidden, cfg.seed) if net is None else net.copy()
    if net.k != k:
        raise InvalidDimensionError(f"warm-start network has k={net.k}, PSF has k={k}")
    delta = unit_impulse(k)
    params = net.blocks()
    state = AdamState.zeros_like(params)
    inputs = _noise_stream(psf, cfg)
    curve = []
    best, best_epoch, best_net = math.inf, 0, net.copy()
    for epoch in range(cfg.epochs):
        h = next(inputs)
        loss, norm, go, a, gz = _backward(net, h, delta, cfg.objective)
        curve.append(norm)
        if not math.isfinite(norm):
            raise NumericFailureError(f"residual became non-finite at epoch {epoch}", partial=np.array(curve))
        if norm < best:
            best, best_epoch = norm, epoch
            for name, arr in net.blocks().items():
                np.copyto(best_net.blocks()[name], arr)
        if norm == 0.0 or (stop_below is not None and norm < stop_below):
            break
        if fused:
            if not (np.all(np.isfinite(go)) and np.all(np.isfinite(gz))):
                raise NumericFailureError(
                    f"non-finite gradient at epoch {epoch}", partial=np.array(curve)
                )
            state.t += 1
            step, sqrt_c2 = state.coefficients(cfg.lr)
            args = (state.beta1, state.beta2, step, sqrt_c2, state.eps)
            _kernels.adam_rank1(net.w2, state.m["w2"], state.v["w2"], go, a, *args)
            _kernels.adam_dense(net.b2, state.m["b2"], state.v["b2"], go, *args)
            _kernels.adam_rank1(net.w1, state.m["w1"], state.v["w1"], gz, h, *args)
            _kernels.adam_dense(net.b1, state.m["b1"], state.v["b1"], gz, *args)
        else:
            grads = {"w1": np.outer(gz, h), "b1": gz, "w2": np.outer(go, a), "b2": go}
            try:
                adam_step(params, grads, state, cfg.lr)
            except NumericFailureError as exc:
                raise NumericFailureError(str(exc), partial=np.array(curve)) from exc
    return MetricResult(
        value=best,
        best_value=best,
        loss_curve=np.array(curve),
        net=best_net,
        best_epoch=best_epoch,
        psf_id=psf.id,
        cfg=cfg,
    )


def metric_value(psf: Psf, cfg: TrainConfig = TrainConfig()) -> float:
    return train_metric(psf, cfg).value


def residual_norm(net: MetricNet, h) -> float:
    return float(np.linalg.norm(unit_impulse(net.k) - forward(net, h)))


# -- serialization ------------------------------------------------------------

_NET_HEADER = struct.Struct("<4sII")


def save_net(net: MetricNet, path) -> None:
    with open(path, "wb") as f:
        f.write(_NET_HEADER.pack(b"MNET", net.k, net.hidden))
        for name in BLOCKS:
            f.write(np.ascontiguousarray(net.blocks()[name], dtype="<f8").tobytes())


def load_net(path) -> MetricNet:
    blob = Path(path).read_bytes()
    magic, k, d = _NET_HEADER.unpack_from(blob)
    if magic != b"MNET":
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(blob, dtype="<f8", offset=_NET_HEADER.size)
    sizes = [d * k, d, k * d, k]
    if body.size != sum(sizes):
        raise InvalidDimensionError(f"{path}: expected {sum(sizes)} values, found {body.size}")
    parts = np.split(body.copy(), np.cumsum(sizes)[:-1])
    return MetricNet(parts[0].reshape(d, k), parts[1], parts[2].reshape(k, d), parts[3])


def save_loss_curve(curve, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])


def save_result(result: MetricResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    curve_path = directory / "loss_curve.csv"
    save_loss_curve(result.loss_curve, curve_path)
    out = directory / "metric.json"
    out.write_text(json.dumps(result.to_dict(curve_path.name), indent=2) + "\n")
    return out
