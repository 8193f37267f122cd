"""Command line front end.

Two subcommands, both file to PNG:

    plots heatmap FILE --out PNG [--vmax V] [--title TEXT]
    plots exponent FILE [FILE ...] --out PNG [--ref-slope S]

heatmap takes one trajectory file (binary dump or t,x,value CSV).
exponent takes point CSVs (eps, mass) in any mix with fit-summary CSVs;
a fit summary applies to the point file listed just before it. Parse
or validation problems exit 1 with a message on stderr.
"""

import argparse
import sys
from pathlib import Path

from .figures import exponent_figure, heatmap_figure, save_png
from .io import ParseError, is_fit_summary, read_exponent_points, \
    read_fit_summary, read_trajectory


def _heatmap(args) -> int:
    traj = read_trajectory(args.file)
    title = args.title
    if title is None:
        p = Path(args.file)
        title = f"{p.parent.name}/{p.stem}" if p.parent.name else p.stem
    fig, _ = heatmap_figure(traj, vmax=args.vmax, title=title)
    save_png(fig, args.out)
    print(f"wrote {args.out}: {traj.times.size} times x {traj.x.size} nodes")
    return 0


def _exponent(args) -> int:
    datasets = []
    fits = {}
    for name in args.files:
        if is_fit_summary(name):
            if not datasets:
                raise ParseError(
                    f"{name}: fit summary listed before any point file")
            fits[len(datasets) - 1] = read_fit_summary(name)
        else:
            datasets.append(read_exponent_points(name))
    fig, infos = exponent_figure(datasets, fits, ref_slope=args.ref_slope)
    save_png(fig, args.out)
    for info in infos:
        ref = info["reference_slope"]
        print(f"{info['label']}: slope {info['slope']:.4f} "
              f"({info['slope_source']}, {info['n_points']} points"
              + (f", reference {ref:.4f}" if ref is not None else "") + ")")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render solver output files to PNG.")
    sub = parser.add_subparsers(dest="command", required=True)

    hm = sub.add_parser("heatmap", help="space-time field heatmap")
    hm.add_argument("file", help="trajectory file (binary dump or CSV)")
    hm.add_argument("--out", required=True, help="output PNG path")
    hm.add_argument("--vmax", type=float, default=None,
                    help="override the color-scale top (default: sup of "
                         "the initial row)")
    hm.add_argument("--title", default=None)
    hm.set_defaults(run=_heatmap)

    ex = sub.add_parser("exponent", help="log-log corner-mass figure")
    ex.add_argument("files", nargs="+",
                    help="point CSVs, optionally followed by their fit "
                         "summaries")
    ex.add_argument("--out", required=True, help="output PNG path")
    ex.add_argument("--ref-slope", type=float, default=None,
                    help="reference slope for point files without a fit "
                         "summary")
    ex.set_defaults(run=_exponent)

    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except (ParseError, OSError, ValueError) as exc:
        print(f"plots: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
