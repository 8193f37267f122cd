"""Produce the file inputs the plots package renders.

Runs the CLI three times: a noiseless solve, a stochastic solve on the
same grid and initial condition, and a series exponent fit. Prints the
`plots` commands that turn the outputs into the heatmap pair and the
annotated log-log figure.
"""

import argparse
import math
import sys
from pathlib import Path

from halfline.cli import main as halfline


def run(label, *cli_args):
    code = halfline(list(cli_args))
    if code != 0:
        sys.exit(f"{label} run failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("figure-data"))
    ap.add_argument("--sigma-m", type=float, default=0.8,
                    help="common-noise level of the stochastic panel")
    ap.add_argument("--rho", type=float, default=1.0 / math.sqrt(2.0),
                    help="pair correlation for the exponent figure")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    grid = ["--horizon", "0.25", "--n_steps", "256", "--store_every", "16",
            "--dx", "0.02", "--x_right", "6.0", "--sigma_i", "1.0",
            "--seed", str(args.seed)]
    run("deterministic solve", "--experiment", "solve", "--sigma_m", "0.0",
        *grid, "--out", str(args.out / "det"))
    run("stochastic solve", "--experiment", "solve",
        "--sigma_m", repr(args.sigma_m), *grid,
        "--out", str(args.out / "sto"))
    run("exponent fit", "--experiment", "exponent-fit",
        "--rho", repr(args.rho), "--out", str(args.out / "exponent"))

    o = args.out
    print("inputs written; render with:")
    print(f"  plots heatmap {o}/det/solution.bin --out {o}/det.png")
    print(f"  plots heatmap {o}/sto/solution.bin --out {o}/sto.png")
    print(f"  plots exponent {o}/exponent/corner_masses.csv "
          f"{o}/exponent/exponent_fit.csv --out {o}/exponent.png")


if __name__ == "__main__":
    main()
