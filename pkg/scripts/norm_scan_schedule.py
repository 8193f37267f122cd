"""Collar-schedule study for the weighted-norm growth probe.

Solves one fixed high-resolution trajectory set and evaluates the
time-integrated weighted norm over a ladder of shrinking boundary collars,
for weight offsets on both sides of the pair-critical beta. Unlike the
norm-scan CLI experiment, which refines the grid together with the collar,
this keeps dx fixed so the collar can shrink aggressively; the last collar
is allowed to sit within a few grid steps of the boundary, which is
exactly the regime the study is about. Defaults reproduce the recorded
schedule (about a minute on one core).
"""

import argparse
import math
import time

import numpy as np

from halfline.model import params_for_pair_correlation, uniform_interval
from halfline.regularity import (pair_critical_beta,
                                 simulate_norm_scan_levels,
                                 weighted_norm_scan)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=1.0 / math.sqrt(2.0),
                    help="pair correlation (default 1/sqrt 2)")
    ap.add_argument("--horizon", type=float, default=0.25)
    ap.add_argument("--v0", type=float, nargs=2, default=(0.95, 1.05),
                    metavar=("LO", "HI"))
    ap.add_argument("--paths", type=int, default=32)
    ap.add_argument("--steps", type=int, default=2048)
    ap.add_argument("--cells", type=int, default=16384)
    ap.add_argument("--store-every", type=int, default=64)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--collars", type=float, nargs="+",
                    default=[0.128, 0.032, 0.008, 0.002])
    ap.add_argument("--offset", type=float, default=0.2,
                    help="betas are pair-critical -/+ this")
    ap.add_argument("--k", type=int, default=0, choices=range(4))
    return ap.parse_args()


def main():
    args = parse_args()
    params = params_for_pair_correlation(args.rho, horizon=args.horizon)
    v0 = uniform_interval(*args.v0)
    crit = pair_critical_beta(params)
    betas = [crit - args.offset, crit + args.offset]
    if betas[0] <= 0.0:
        raise SystemExit(f"offset {args.offset} exceeds critical {crit:.4f}")

    t0 = time.time()
    level = simulate_norm_scan_levels(
        params, v0, 1, base_steps=args.steps, base_cells=args.cells,
        m_paths=args.paths, seed_id=args.seed,
        store_every=args.store_every)[0]
    dx = level[0].dx
    print(f"solved {args.paths} paths, {args.steps} steps, dx={dx:.3e} "
          f"({time.time() - t0:.0f}s); pair critical beta {crit:.4f}")
    print(f"smallest collar spans {min(args.collars) / dx:.1f} grid steps")

    scan = weighted_norm_scan([level] * len(args.collars), args.k, betas,
                              args.collars)
    ratios = scan.growth_ratios()
    head = "beta      " + "".join(f"  c={c:<9.4g}" for c in args.collars)
    print(head)
    for i, beta in enumerate(betas):
        side = "below" if beta < crit else "above"
        row = "".join(f"  {e:<11.4e}" for e in scan.estimates[i])
        print(f"{beta:<10.4f}{row}  ({side} critical)")
        print("  ratios  " + "".join(f"  {r:<11.4f}" for r in ratios[i]))
    shrink = np.asarray(args.collars[:-1]) / np.asarray(args.collars[1:])
    print("collar shrink factors per level:", np.round(shrink, 3))


if __name__ == "__main__":
    main()
