"""Run the unregularized and regularized lens designs side by side.

    python scripts/e2e_compare.py --gamma 10 --outer-epochs 100
"""

import argparse
from dataclasses import replace

from psfinv import e2e


def show(rec):
    if rec.epoch % 10 == 0:
        print(f"  epoch {rec.epoch:3d} recon={rec.recon_mse:.4e} metric={rec.metric:.3e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma", type=float, default=10.0)
    ap.add_argument("--outer-epochs", type=int, default=100)
    ap.add_argument("--outer-lr", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    base = e2e.E2EConfig(outer_epochs=args.outer_epochs, outer_lr=args.outer_lr, seed=args.seed)
    for cfg in (base, replace(base, gamma=args.gamma)):
        r = e2e.e2e_optimize(cfg, progress=show)
        print(f"gamma={cfg.gamma:g} final_metric={r.final_metric:.3e} psnr={r.final_psnr:.2f} kappa={r.final_kappa:.3e}")


if __name__ == "__main__":
    main()
