"""``psfinv`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric or
experiment failure. Every command writes ``config.resolved`` and its
outputs under ``--out``. Wall-clock measurements go to files named
``timing*`` so the remaining outputs are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench, deconv, e2e, metric, optics, psf as P
from .config import PROFILES, RunConfig, resolve
from .errors import InvalidParameterError, PsfInvError, UsageError
from .linops import ConvOperator, condition_number_circulant, condition_number_dense

PSF_KINDS = ("impulse", "gauss", "motion", "diffuser", "fresnel", "spiral")
PRESETS = ("flat", "fresnel", "spiral")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# -- argument groups ---------------------------------------------------------------


def _common(p):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="thread cap (default: PSFINV_THREADS or 1)")


def _psf_args(p, required=True):
    p.add_argument("--psf", choices=PSF_KINDS, required=required)
    p.add_argument("--psf-file", help="load a PSF (text or raw) instead of --psf")
    p.add_argument("--side", type=int)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--length", type=int, default=7)
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--defocus", type=float, default=0.0)
    p.add_argument("--charge", type=int, default=1)
    p.add_argument("--psf-snr", type=float, help="add PSF noise at this SNR (dB)")


def _train_args(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psfinv", description="Learned PSF invertibility metric toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-psf", help="generate a PSF file")
    _common(p)
    _psf_args(p)
    p.add_argument("--format", choices=("text", "raw"), default="text")

    p = sub.add_parser("metric", help="train the metric network on one PSF")
    _common(p)
    _psf_args(p, required=False)
    _train_args(p)
    p.add_argument("--snr", type=float, help="train on PSF + noise at this SNR (dB)")

    p = sub.add_parser("cond", help="condition number of the convolution operator")
    _common(p)
    _psf_args(p, required=False)
    p.add_argument("--image-side", type=int)
    p.add_argument("--dense", action="store_true", help="dense SVD instead of the circulant formula")
    p.add_argument("--boundary", choices=("circular", "zero-pad"), default="circular")

    p = sub.add_parser("deconv", help="blur, optionally add noise, and deconvolve a scene")
    _common(p)
    _psf_args(p, required=False)
    p.add_argument("--image", help="PGM/PPM scene (center-cropped); default is a synthetic scene")
    p.add_argument("--scene", choices=("piecewise", "sinusoid", "checker", "smooth"), default="piecewise")
    p.add_argument("--image-side", type=int)
    p.add_argument("--solver", choices=("wiener", "tv", "rl"), default="wiener")
    p.add_argument("--snr", type=float, help="measurement SNR (dB)")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--iters", type=int)

    p = sub.add_parser("sweep-gaussian", help="metric, kappa and Wiener MSE over Gaussian widths")
    _common(p)
    _train_args(p)
    p.add_argument("--side", type=int)
    p.add_argument("--sigmas", default="0.5,1,2,4")

    p = sub.add_parser("bench-time", help="metric training time vs dense SVD time")
    _common(p)
    _train_args(p)
    p.add_argument("--sides", default="16,32,64")
    p.add_argument("--repeats", type=int)

    for name, text in (("suite", "metric, kappa and solver errors over the PSF suite"), ("correlate", "correlation matrices over the PSF suite")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _train_args(p)
        p.add_argument("--side", type=int)
        p.add_argument("--scene-dir")
        if name == "correlate":
            p.add_argument("--snrs", default="25,35", help="noisy variants (dB); empty for none")

    for name in ("e2e", "gamma-sweep"):
        p = sub.add_parser(name, help="end-to-end lens design" if name == "e2e" else "e2e over several gammas")
        _common(p)
        p.add_argument("--side", type=int)
        p.add_argument("--L", type=int)
        p.add_argument("--outer-epochs", type=int)
        p.add_argument("--inner-epochs", type=int)
        p.add_argument("--outer-lr", type=float)
        p.add_argument("--inner-lr", type=float)
        p.add_argument("--hidden", type=int)
        p.add_argument("--scene-dir")
        p.add_argument("--synthetic", action="store_true", help="fall back to synthetic scenes")
        p.add_argument("--cold-start", action="store_true", help="re-initialize the metric network every epoch")
        if name == "e2e":
            p.add_argument("--gamma", type=float)
        else:
            p.add_argument("--gammas", default="0,1,10")

    p = sub.add_parser("render-psf", help="render a lens PSF from a preset or coefficient CSV")
    _common(p)
    p.add_argument("--preset", choices=PRESETS, default="fresnel")
    p.add_argument("--coeffs", help="heightmap coefficient CSV (index,a_i)")
    p.add_argument("--side", type=int)
    p.add_argument("--wavelength", type=int, help="wavelength index (default: design wavelength)")
    p.add_argument("--defocus", type=float, default=0.0)
    p.add_argument("--charge", type=int, default=1)
    return parser


# -- helpers ---------------------------------------------------------------------


def _resolve(args, **overrides) -> RunConfig:
    base = {"seed": args.seed, "threads": args.threads}
    base.update(overrides)
    return resolve(args.profile, args.config, base)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_psf(args, side: int, seed: int) -> P.Psf:
    if getattr(args, "psf_file", None):
        psf = P.load_psf(args.psf_file)
    else:
        kind = args.psf or "gauss"
        if kind == "impulse":
            psf = P.impulse_psf(side).relabel("impulse")
        elif kind == "gauss":
            psf = P.gaussian_psf(side, args.sigma).relabel(f"gauss_s{args.sigma:g}")
        elif kind == "motion":
            psf = P.motion_blur_psf(side, args.length, args.angle).relabel(f"motion_l{args.length}_a{args.angle:g}")
        elif kind == "diffuser":
            psf = P.diffuser_psf(side, seed).relabel(f"diffuser_seed{seed}")
        elif kind == "fresnel":
            psf = optics.fresnel_psf(side, args.defocus)
        else:
            psf = optics.spiral_psf(side, args.charge, args.defocus)
    if getattr(args, "psf_snr", None) is not None:
        psf = P.add_noise(psf, P.NoiseSpec(args.psf_snr, seed))
    return psf


def _train_cfg(cfg: RunConfig, seed=None, snr=None) -> metric.TrainConfig:
    noise = None if snr is None else P.NoiseSpec(snr, cfg.seed if seed is None else seed)
    return metric.TrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, hidden=cfg.hidden, seed=cfg.seed if seed is None else seed,
        noise=noise, objective=cfg.objective,
    )


def _bench_cfg(cfg: RunConfig) -> bench.BenchConfig:
    return bench.BenchConfig(
        side=cfg.side,
        seed=cfg.seed,
        train=_train_cfg(cfg),
        tv=deconv.TvConfig(rho=cfg.tv_rho, iters=cfg.tv_iters),
        rl_iters=cfg.rl_iters,
        snr_db=cfg.snr_db,
        scene_dir=cfg.scene_dir or None,
    )


def _e2e_cfg(cfg: RunConfig, args) -> e2e.E2EConfig:
    return e2e.E2EConfig(
        gamma=cfg.gamma,
        outer_epochs=cfg.outer_epochs,
        inner_epochs=cfg.inner_epochs,
        outer_lr=cfg.outer_lr,
        inner_lr=cfg.inner_lr,
        L=cfg.L,
        warm_start=not args.cold_start,
        seed=cfg.seed,
        dataset_dir=cfg.scene_dir or None,
        synthetic=args.synthetic or not cfg.scene_dir,
        side=cfg.e2e_side,
        hidden=cfg.hidden,
        batch=cfg.batch,
        snr_db=cfg.e2e_snr_db,
        metric_epochs=cfg.epochs,
    )


def _write_report(report: bench.ExperimentReport, out: Path, stem: str) -> None:
    bench.write_csv(report.rows, out / f"{stem}.csv")
    bench.write_json(report.to_dict(), out / f"{stem}.json")
    if report.timings:
        bench.write_csv(report.timings, out / f"timing_{stem}.csv", bench.TIMING_COLUMNS)


def _save_coeffs(coeffs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "a_i"])
        for i, a in enumerate(coeffs, 1):
            w.writerow([i, repr(float(a))])


def _load_coeffs(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        pairs = sorted((int(r["index"]), float(r["a_i"])) for r in rows)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read coefficient CSV {path}: {exc}") from None
    if [i for i, _ in pairs] != list(range(1, len(pairs) + 1)):
        raise UsageError(f"{path}: indices must be 1..L without gaps")
    return np.array([a for _, a in pairs])


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=bench._jsonable))


# -- commands -------------------------------------------------------------------


def cmd_gen_psf(args):
    cfg = _resolve(args, side=args.side)
    out = _out(args)
    psf = _make_psf(args, cfg.side, cfg.seed)
    path = out / ("psf.txt" if args.format == "text" else "psf.raw")
    (P.save_text if args.format == "text" else P.save_raw)(psf, path)
    cfg.write_snapshot(out)
    _print({"psf_id": psf.id, "path": str(path), "side": psf.side})


def cmd_metric(args):
    cfg = _resolve(args, side=args.side, epochs=args.epochs, hidden=args.hidden, lr=args.lr)
    out = _out(args)
    psf = _make_psf(args, cfg.side, cfg.seed)
    result = metric.train_metric(psf, _train_cfg(cfg, snr=args.snr))
    metric.save_result(result, out)
    metric.save_net(result.net, out / "net.bin")
    cfg.write_snapshot(out)
    _print({"psf_id": psf.id, "metric": result.value, "best_epoch": result.best_epoch})


def cmd_cond(args):
    cfg = _resolve(args, side=args.side)
    out = _out(args)
    psf = _make_psf(args, cfg.side, cfg.seed)
    op = ConvOperator(psf, args.image_side or psf.side, args.boundary)
    if args.dense or args.boundary != "circular":
        summary = condition_number_dense(op)
    else:
        summary = condition_number_circulant(psf, op.image_side)
    bench.write_json({"psf_id": psf.id, "method": "dense" if args.dense else "circulant", **summary.to_dict()}, out / "cond.json")
    cfg.write_snapshot(out)
    print(f"kappa {summary.kappa}")


def cmd_deconv(args):
    from .scenes import center_crop, read_netpbm, synthetic_scene, write_netpbm

    cfg = _resolve(args, side=args.side)
    out = _out(args)
    psf = _make_psf(args, cfg.side, cfg.seed)
    n = args.image_side or max(psf.side, 64)
    if args.image:
        x = center_crop(read_netpbm(args.image), n)
        if x.ndim == 3:
            x = x.mean(axis=0)
    else:
        x = synthetic_scene(args.scene, n, cfg.seed)
    snr = cfg.snr_db if args.snr is None else args.snr
    y = bench.measurements([x], psf, snr, cfg.seed)[0]
    if args.solver == "wiener":
        xh = deconv.wiener_deconvolve(y, psf, deconv.WienerConfig(args.sigma2 if args.sigma2 is not None else cfg.wiener_sigma2))
    elif args.solver == "tv":
        xh = deconv.tv_deconvolve(y, psf, deconv.TvConfig(rho=cfg.tv_rho, iters=args.iters or cfg.tv_iters))
    else:
        xh = deconv.richardson_lucy(np.clip(y, 0, None), psf, args.iters or cfg.rl_iters)
    write_netpbm(out / "measurement.pgm", y, 16)
    write_netpbm(out / "recon.pgm", xh, 16)
    res = {"psf_id": psf.id, "solver": args.solver, "mse": deconv.mse(xh, x), "psnr": deconv.psnr(xh, x)}
    bench.write_json(res, out / "deconv.json")
    cfg.write_snapshot(out)
    _print(res)


def cmd_sweep_gaussian(args):
    from . import plots

    cfg = _resolve(args, side=args.side, epochs=args.epochs, hidden=args.hidden, lr=args.lr)
    out = _out(args)
    sigmas = _floats(args.sigmas)
    report = bench.gaussian_sweep(sigmas, _bench_cfg(cfg))
    _write_report(report, out, "sweep")
    series = {"metric": report.column("metric"), "wiener_mse": report.column("wiener_mse")}
    plots.line_plot(sigmas, series, out / "sweep.svg", "Gaussian sigma (px)")
    cfg.write_snapshot(out)
    _print({k: report.meta[k] for k in ("spearman_sigma_metric", "spearman_sigma_wiener", "pearson_metric_wiener")})


def cmd_bench_time(args):
    from . import plots

    cfg = _resolve(args, epochs=args.epochs, hidden=args.hidden, lr=args.lr, repeats=args.repeats)
    out = _out(args)
    sides = [int(s) for s in _floats(args.sides)]
    report = bench.timing_benchmark(sides, _bench_cfg(cfg), cfg.repeats)
    bench.write_csv(report.rows, out / "timing.csv", bench.TIMING_COLUMNS)
    bench.write_json(report.to_dict(), out / "timing.json")
    ks = [r["k"] for r in report.rows]
    plots.line_plot(ks, {"metric": report.column("wall_time_metric_s"), "dense SVD": report.column("wall_time_kappa_s")}, out / "timing.svg", "k = side^2")
    cfg.write_snapshot(out)
    _print({"metric_ratio": report.meta["metric_ratio"], "kappa_ratio": report.meta["kappa_ratio"]})


def cmd_suite(args):
    cfg = _resolve(args, side=args.side, epochs=args.epochs, hidden=args.hidden, lr=args.lr, scene_dir=args.scene_dir)
    out = _out(args)
    report = bench.psf_suite_report(_bench_cfg(cfg))
    _write_report(report, out, "suite")
    cfg.write_snapshot(out)
    for r in report.rows:
        print(f"{r['psf_id']:16s} metric={r['metric']:.3e} kappa={r['kappa']:.3e}")


def cmd_correlate(args):
    from . import plots

    cfg = _resolve(args, side=args.side, epochs=args.epochs, hidden=args.hidden, lr=args.lr, scene_dir=args.scene_dir)
    out = _out(args)
    bcfg = _bench_cfg(cfg)
    report = bench.psf_suite_report(bcfg)
    _write_report(report, out, "suite")
    summary = {}
    for snr in [None] + _floats(args.snrs):
        tag = "clean" if snr is None else f"snr{snr:g}"
        cm, rows = bench.correlation_study(report, bcfg, snr)
        sm = bench.correlation_matrix(bench.correlation_table(rows), "spearman")
        bench.write_json({"pearson": cm.to_dict(), "spearman": sm.to_dict()}, out / f"corr_{tag}.json")
        plots.correlation_heatmap(cm, out / f"corr_{tag}.svg", f"Pearson ({tag})")
        summary[tag] = {s: {"metric": cm["metric", s], "log10_kappa": cm["log10_kappa", s]} for s in ("wiener_mse", "tv_mse", "rl_mse")}
    cfg.write_snapshot(out)
    _print(summary)


def _e2e_outputs(result: e2e.E2EResult, out: Path, stem: str = "") -> None:
    result.history.to_csv(out / f"{stem}history.csv")
    _save_coeffs(result.coeffs, out / f"{stem}coeffs.csv")
    P.save_text(result.mean_psf(), out / f"{stem}psf.txt")
    bench.write_json(result.summary(), out / f"{stem}e2e.json")


def cmd_e2e(args):
    cfg = _resolve(args, e2e_side=args.side, L=args.L, outer_epochs=args.outer_epochs, inner_epochs=args.inner_epochs,
                   outer_lr=args.outer_lr, inner_lr=args.inner_lr, hidden=args.hidden, scene_dir=args.scene_dir, gamma=args.gamma)
    out = _out(args)
    result = e2e.e2e_optimize(_e2e_cfg(cfg, args))
    _e2e_outputs(result, out)
    bench.write_json({"inner_time_s": round(result.inner_time_s, 6)}, out / "timing_e2e.json")
    cfg.write_snapshot(out)
    _print({k: result.summary()[k] for k in ("gamma", "final_metric", "final_psnr", "final_kappa")})


def cmd_gamma_sweep(args):
    from . import plots

    cfg = _resolve(args, e2e_side=args.side, L=args.L, outer_epochs=args.outer_epochs, inner_epochs=args.inner_epochs,
                   outer_lr=args.outer_lr, inner_lr=args.inner_lr, hidden=args.hidden, scene_dir=args.scene_dir)
    out = _out(args)
    results = e2e.gamma_sweep(_e2e_cfg(cfg, args), _floats(args.gammas))
    rows = [{"gamma": r.cfg.gamma, "final_psnr": r.final_psnr, "final_metric": r.final_metric, "kappa": r.final_kappa} for r in results]
    for r in results:
        _e2e_outputs(r, out, f"gamma{r.cfg.gamma:g}_")
    bench.write_csv(rows, out / "gamma_sweep.csv")
    link = None
    try:
        link = bench.spearman([r["final_metric"] for r in rows], [r["final_psnr"] for r in rows])
    except (InvalidParameterError, PsfInvError):
        pass
    bench.write_json({"rows": rows, "spearman_metric_psnr": link}, out / "gamma_sweep.json")
    plots.bar_chart([f"{r['gamma']:g}" for r in rows], [r["final_psnr"] for r in rows], out / "gamma_sweep.svg", "final PSNR (dB)")
    cfg.write_snapshot(out)
    _print({"rows": rows, "spearman_metric_psnr": link})


def cmd_render_psf(args):
    from .scenes import write_netpbm

    cfg = _resolve(args, e2e_side=args.side)
    out = _out(args)
    p = optics.OpticalParams.for_side(cfg.e2e_side)
    w = p.design_index if args.wavelength is None else args.wavelength
    if not 0 <= w < len(p.wavelengths):
        raise UsageError(f"--wavelength must be in 0..{len(p.wavelengths) - 1}")
    if args.coeffs:
        a = _load_coeffs(args.coeffs)
        h = optics.Heightmap(a, optics.zernike_basis(len(a), cfg.e2e_side))
        psf = optics.render_psf(h, p, w)
        phi = h.phi
        _save_coeffs(a, out / "heightmap.csv")
    else:
        if args.preset == "flat":
            phase = np.zeros((cfg.e2e_side, cfg.e2e_side))
        elif args.preset == "fresnel":
            phase = optics.fresnel_lens_phase(p, p.z * (1.0 + args.defocus))
        else:
            phase = np.mod(optics.fresnel_lens_phase(p, p.z * (1.0 + args.defocus)) + optics.spiral_phase(args.charge, cfg.e2e_side), 2 * math.pi)
            phase *= optics.aperture(cfg.e2e_side)
        psf = optics.render_phase(phase, p, w, args.preset)
        phi = optics.phase_to_height(phase, p, w)
    P.save_text(psf, out / "psf.txt")
    span = np.ptp(phi)
    write_netpbm(out / "phi.pgm", (phi - phi.min()) / span if span > 0 else np.zeros_like(phi))
    cfg.write_snapshot(out)
    _print({"psf_id": psf.id, "wavelength_nm": p.wavelengths[w] * 1e9, "encircled_energy_3x3": optics.encircled_energy(psf)})


COMMANDS = {
    "gen-psf": cmd_gen_psf,
    "metric": cmd_metric,
    "cond": cmd_cond,
    "deconv": cmd_deconv,
    "sweep-gaussian": cmd_sweep_gaussian,
    "bench-time": cmd_bench_time,
    "suite": cmd_suite,
    "correlate": cmd_correlate,
    "e2e": cmd_e2e,
    "gamma-sweep": cmd_gamma_sweep,
    "render-psf": cmd_render_psf,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        threads = args.threads
        cfg_threads = _resolve(args).threads if threads is None else threads
        with threadpool_limits(limits=cfg_threads):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PsfInvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
