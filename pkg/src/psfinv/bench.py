"""Experiment protocol: Gaussian sweep, timing, PSF suite and correlation studies."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from . import deconv, metric, optics
from .errors import InvalidParameterError, SizeLimitError, UndefinedCorrelationError
from .linops import DENSE_LIMIT, ConvOperator, condition_number_circulant, condition_number_dense, convolve
from .psf import Psf, gaussian_psf, impulse_psf, motion_blur_psf, diffuser_psf
from .scenes import scene_set, synthetic_scene

COLUMNS = ("psf_id", "metric", "kappa", "kappa_hth", "wiener_mse", "tv_mse", "rl_mse")
TIMING_COLUMNS = ("wall_time_metric_s", "wall_time_kappa_s")
CORR_COLUMNS = ("metric", "log10_kappa", "wiener_mse", "tv_mse", "rl_mse")


@dataclass(frozen=True)
class BenchConfig:
    side: int = 32
    seed: int = 0
    train: metric.TrainConfig = field(default_factory=metric.TrainConfig)
    wiener_grid: tuple[float, ...] = deconv.WIENER_GRID
    tv: deconv.TvConfig = field(default_factory=deconv.TvConfig)
    rl_iters: int = 30
    snr_db: float = math.inf
    scene_dir: str | None = None

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- correlation ----------------------------------------------------------------


def _paired(xs, ys, names=("x", "y")):
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParameterError(f"need two equal-length sequences, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise InvalidParameterError("correlation needs at least 3 points")
    for arr, name in zip((x, y), names):
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError(f"{name} contains non-finite values")
        if np.ptp(arr) == 0:
            raise UndefinedCorrelationError(f"{name} is constant; correlation is undefined")
    return x, y


def pearson(xs, ys, names=("x", "y")) -> float:
    x, y = _paired(xs, ys, names)
    return float(stats.pearsonr(x, y).statistic)


def spearman(xs, ys, names=("x", "y")) -> float:
    x, y = _paired(xs, ys, names)
    return float(stats.spearmanr(x, y).statistic)


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple[str, ...]
    values: np.ndarray
    kind: str = "pearson"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        n = len(self.labels)
        if v.shape != (n, n):
            raise InvalidParameterError("correlation matrix shape does not match labels")
        if not (np.allclose(v, v.T, atol=1e-12) and np.allclose(np.diag(v), 1.0) and np.all(np.abs(v) <= 1 + 1e-12)):
            raise InvalidParameterError("not a valid correlation matrix")

    def __getitem__(self, pair) -> float:
        i, j = (self.labels.index(p) for p in pair)
        return float(self.values[i, j])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "labels": list(self.labels), "values": [[float(v) for v in row] for row in self.values]}


def correlation_matrix(table: dict[str, np.ndarray], kind: str = "pearson") -> CorrelationMatrix:
    fn = {"pearson": pearson, "spearman": spearman}[kind]
    labels = tuple(table)
    n = len(labels)
    v = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            v[i, j] = v[j, i] = np.clip(fn(table[labels[i]], table[labels[j]], (labels[i], labels[j])), -1.0, 1.0)
    return CorrelationMatrix(labels, v, kind)


# -- reports -------------------------------------------------------------------


@dataclass
class ExperimentReport:
    name: str
    rows: list[dict]
    meta: dict
    timings: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def ids(self) -> list[str]:
        return [r["psf_id"] for r in self.rows]

    def columns(self) -> list[str]:
        return list(self.rows[0]) if self.rows else []

    def check_complete(self) -> None:
        cols = self.columns()
        for r in self.rows:
            if list(r) != cols or any(v is None or (isinstance(v, float) and math.isnan(v)) for v in r.values()):
                raise InvalidParameterError(f"report {self.name!r} has missing cells in row {r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "meta": self.meta, "rows": [{k: _jsonable(v) for k, v in r.items()} for r in self.rows]}


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def write_csv(rows: list[dict], path, time_columns=()) -> None:
    if not rows:
        raise InvalidParameterError("nothing to write")
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([f"{r[c]:.6f}" if c in time_columns else _fmt(r[c]) for c in cols])


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


# -- measurements -----------------------------------------------------------------


def measurements(scenes, psf: Psf, snr_db: float, seed: int) -> list[np.ndarray]:
    """Blurred scenes plus white Gaussian noise at ``snr_db`` (per-scene power)."""
    out = []
    for i, x in enumerate(scenes):
        y = convolve(x, ConvOperator(psf, x.shape[0]))
        if math.isfinite(snr_db):
            rng = np.random.default_rng([seed, i, 11])
            y = y + rng.standard_normal(y.shape) * math.sqrt(np.mean(y**2) / 10 ** (snr_db / 10))
        out.append(y)
    return out


def held_out_scene(side: int, seed: int) -> np.ndarray:
    return synthetic_scene("smooth", side, seed + 10_000)


def tune_sigma2(psfs, cfg: BenchConfig, snr_db: float) -> float:
    """One Wiener noise power per experiment, chosen on a held-out scene."""
    x = held_out_scene(cfg.side, cfg.seed)
    pairs = [(measurements([x], p, snr_db, cfg.seed + 1)[0], p, x) for p in psfs]
    return deconv.tune_wiener(pairs, cfg.wiener_grid)


def solver_errors(psf: Psf, scenes, ys, sigma2: float, cfg: BenchConfig, which=("wiener", "tv", "rl")) -> dict:
    out = {}
    if "wiener" in which:
        out["wiener_mse"] = float(np.mean([deconv.mse(deconv.wiener_deconvolve(y, psf, deconv.WienerConfig(sigma2)), x) for x, y in zip(scenes, ys)]))
    if "tv" in which:
        out["tv_mse"] = float(np.mean([deconv.mse(deconv.tv_deconvolve(y, psf, cfg.tv), x) for x, y in zip(scenes, ys)]))
    if "rl" in which:
        out["rl_mse"] = float(np.mean([deconv.mse(deconv.richardson_lucy(np.clip(y, 0, None), psf, cfg.rl_iters), x) for x, y in zip(scenes, ys)]))
    return out


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def _meta(cfg: BenchConfig, **extra) -> dict:
    return {"seed": cfg.seed, "config_digest": cfg.digest(), **extra}


def evaluate_psfs(name: str, psfs: list[Psf], cfg: BenchConfig, solvers=("wiener", "tv", "rl")) -> ExperimentReport:
    scenes = scene_set(cfg.side, cfg.scene_dir, cfg.seed)
    sigma2 = tune_sigma2(psfs, cfg, cfg.snr_db)
    rows, timings = [], []
    for psf in psfs:
        res, t_metric = _timed(metric.train_metric, psf, cfg.train)
        spec, t_kappa = _timed(condition_number_circulant, psf, cfg.side)
        ys = measurements(scenes, psf, cfg.snr_db, cfg.seed)
        rows.append(
            {
                "psf_id": psf.id,
                "metric": res.value,
                "kappa": spec.kappa,
                "kappa_hth": spec.kappa_hth,
                **solver_errors(psf, scenes, ys, sigma2, cfg, solvers),
            }
        )
        timings.append({"psf_id": psf.id, "wall_time_metric_s": t_metric, "wall_time_kappa_s": t_kappa})
    report = ExperimentReport(name, rows, _meta(cfg, wiener_sigma2=sigma2, scenes=len(scenes), snr_db=_jsonable(cfg.snr_db)), timings)
    report.check_complete()
    return report


# -- experiments -----------------------------------------------------------------


def gaussian_sweep(sigmas, cfg: BenchConfig = BenchConfig()) -> ExperimentReport:
    sigmas = [float(s) for s in sigmas]
    if len(sigmas) < 3:
        raise InvalidParameterError("gaussian_sweep needs at least 3 sigmas")
    psfs = [gaussian_psf(cfg.side, s).relabel(f"gauss_s{s:g}") for s in sigmas]
    report = evaluate_psfs("gaussian_sweep", psfs, cfg, solvers=("wiener",))
    for r, s in zip(report.rows, sigmas):
        r["sigma"] = s
    report.meta["spearman_sigma_metric"] = spearman(sigmas, report.column("metric"))
    report.meta["spearman_sigma_wiener"] = spearman(sigmas, report.column("wiener_mse"))
    report.meta["pearson_metric_wiener"] = pearson(report.column("metric"), report.column("wiener_mse"))
    return report


def suite_psfs(side: int, seed: int = 0) -> list[Psf]:
    """Impulse, focused/spread Fresnel, spiral and motion, and a diffuser."""
    return [
        impulse_psf(side).relabel("impulse"),
        optics.fresnel_psf(side, 0.0, "fresnel_focused"),
        optics.fresnel_psf(side, 1.0, "fresnel_spread"),
        optics.spiral_psf(side, 1, 0.0, "spiral_focused"),
        optics.spiral_psf(side, 1, 1.0, "spiral_spread"),
        motion_blur_psf(side, 3, 30.0).relabel("motion_focused"),
        motion_blur_psf(side, 11, 30.0).relabel("motion_spread"),
        diffuser_psf(side, seed).relabel("diffuser"),
    ]


def psf_suite_report(cfg: BenchConfig = BenchConfig()) -> ExperimentReport:
    return evaluate_psfs("suite", suite_psfs(cfg.side, cfg.seed), cfg)


def correlation_table(rows) -> dict[str, np.ndarray]:
    """Columns entering the correlation matrices; kappa in log10."""
    table = {c: np.array([r[c] for r in rows], dtype=np.float64) for c in ("metric", "wiener_mse", "tv_mse", "rl_mse")}
    table["log10_kappa"] = np.log10(np.array([r["kappa"] for r in rows], dtype=np.float64))
    if not np.all(np.isfinite(table["log10_kappa"])):
        raise UndefinedCorrelationError("log10_kappa has infinite entries (singular PSF in the suite)")
    return {c: table[c] for c in CORR_COLUMNS}


def correlation_study(report: ExperimentReport, cfg: BenchConfig = BenchConfig(), snr_db: float | None = None, kind: str = "pearson"):
    """Correlations of metric and log10 kappa with solver errors.

    With ``snr_db`` the measurements are regenerated with white Gaussian noise
    at that SNR and the solver columns recomputed; metric and kappa are
    properties of the PSF and are kept.
    """
    if len(report.rows) < 5:
        raise InvalidParameterError("correlation_study needs at least 5 rows")
    rows = report.rows
    if snr_db is not None:
        noisy = replace(cfg, snr_db=snr_db)
        psfs = {p.id: p for p in suite_psfs(cfg.side, cfg.seed)}
        if set(report.ids()) - set(psfs):
            raise InvalidParameterError("noisy correlation study regenerates the suite PSFs; report has other ids")
        scenes = scene_set(cfg.side, cfg.scene_dir, cfg.seed)
        sigma2 = tune_sigma2([psfs[i] for i in report.ids()], noisy, snr_db)
        rows = []
        for r in report.rows:
            psf = psfs[r["psf_id"]]
            ys = measurements(scenes, psf, snr_db, cfg.seed)
            rows.append({**r, **solver_errors(psf, scenes, ys, sigma2, noisy)})
    table = correlation_table(rows)
    return correlation_matrix(table, kind), rows


def timing_benchmark(sides, cfg: BenchConfig = BenchConfig(), repeats: int = 3) -> ExperimentReport:
    sides = [int(s) for s in sides]
    if sides != sorted(sides):
        raise InvalidParameterError("sides must be sorted ascending")
    if sides[-1] ** 2 > DENSE_LIMIT:
        raise SizeLimitError(f"side {sides[-1]} exceeds the dense guardrail (n <= {DENSE_LIMIT})")
    if repeats < 3:
        raise InvalidParameterError("timing needs at least 3 repetitions")
    # warm caches and the JIT outside the timed region
    metric.train_metric(gaussian_psf(sides[0], 1.0), replace(cfg.train, epochs=2))
    rows = []
    for side in sides:
        psf = gaussian_psf(side, 1.0).relabel(f"gauss_k{side * side}")
        tm = [_timed(metric.train_metric, psf, cfg.train)[1] for _ in range(repeats)]
        tk = [_timed(condition_number_dense, ConvOperator(psf, side))[1] for _ in range(repeats)]
        rows.append(
            {
                "side": side,
                "k": side * side,
                "epochs": cfg.train.epochs,
                "wall_time_metric_s": float(np.median(tm)),
                "wall_time_kappa_s": float(np.median(tk)),
            }
        )
    rep = ExperimentReport("timing", rows, _meta(cfg, repeats=repeats))
    rep.meta["metric_ratio"] = rows[-1]["wall_time_metric_s"] / rows[0]["wall_time_metric_s"]
    rep.meta["kappa_ratio"] = rows[-1]["wall_time_kappa_s"] / rows[0]["wall_time_kappa_s"]
    return rep
