"""Print the PSF suite as a table of metric, kappa and solver errors.

    python scripts/suite_table.py --side 32 --seed 0
"""

import argparse

from psfinv import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    report = bench.psf_suite_report(bench.BenchConfig(side=args.side, seed=args.seed))
    print(f"{'psf':16s} {'metric':>10s} {'kappa':>10s} {'wiener':>10s} {'tv':>10s} {'rl':>10s}")
    for r in report.rows:
        print(f"{r['psf_id']:16s} {r['metric']:10.3e} {r['kappa']:10.3e} {r['wiener_mse']:10.3e} {r['tv_mse']:10.3e} {r['rl_mse']:10.3e}")
    cm, _ = bench.correlation_study(report, bench.BenchConfig(side=args.side, seed=args.seed))
    for s in ("wiener_mse", "tv_mse", "rl_mse"):
        print(f"pearson vs {s:10s} metric={cm['metric', s]:+.3f} log10_kappa={cm['log10_kappa', s]:+.3f}")


if __name__ == "__main__":
    main()
