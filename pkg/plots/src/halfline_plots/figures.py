"""Figure builders: space-time heatmaps and log-log exponent plots.

Everything here is a view of parsed files. Rendering is pinned down so a
re-run over the same inputs writes identical bytes: fixed figure sizes,
the Agg backend, nearest-neighbour rasterization of the field, and no
varying metadata in the PNG (see save_png).
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import ExponentPoints, FitSummary, TrajectoryFile  # noqa: E402

HEATMAP_SIZE = (7.2, 4.8)
EXPONENT_SIZE = (6.4, 4.8)
_DPI = 100


def heatmap_figure(traj: TrajectoryFile, vmax=None, title=None):
    """Field values over the (x, t) rectangle, x horizontal, t upward.

    The color scale is anchored at [0, sup of the initial row] so panels
    from different runs of the same initial condition share a palette;
    pass vmax to override. An all-zero file renders as a uniform panel at
    the bottom color.
    """
    if vmax is None:
        vmax = traj.v0_sup
    if vmax <= 0.0:
        vmax = 1.0
    t_top = traj.times[-1] if traj.times[-1] > traj.times[0] else traj.times[0] + 1.0
    fig, ax = plt.subplots(figsize=HEATMAP_SIZE)
    im = ax.imshow(
        traj.values,
        origin="lower",
        aspect="auto",
        interpolation="nearest",
        extent=(traj.x[0], traj.x[-1], traj.times[0], t_top),
        cmap="jet",
        vmin=0.0,
        vmax=vmax,
    )
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="density")
    return fig, im


def _ols_slope(eps, mass):
    coeff = np.polyfit(np.log(eps), np.log(mass), 1)
    return float(coeff[0])


def exponent_figure(datasets, fits=None, ref_slope=None):
    """Log-log scatter per dataset with a slope line and optional reference.

    ``fits`` maps dataset index to a FitSummary; where present, its slope
    is drawn and annotated instead of a locally fitted one, and its
    reference slope adds a dashed guide line. Lines are anchored at the
    dataset's log-log centroid, which is where any least-squares line must
    pass, so a file-provided slope and a local fit overlay identically
    when they agree. Returns the figure and one info dict per dataset.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    fits = fits or {}
    fig, ax = plt.subplots(figsize=EXPONENT_SIZE)
    infos = []
    for i, data in enumerate(datasets):
        loge = np.log(data.eps)
        logm = np.log(data.mass)
        ce, cm = loge.mean(), logm.mean()
        summary = fits.get(i)
        slope = summary.slope if summary is not None else _ols_slope(
            data.eps, data.mass)
        span = np.array([loge.min(), loge.max()])
        line = ax.plot(np.exp(span), np.exp(cm + slope * (span - ce)),
                       lw=1.2, zorder=2)[0]
        ax.plot(data.eps, data.mass, "o", ms=4, color=line.get_color(),
                zorder=3, label=f"{data.label}: slope {slope:.4f}")
        reference = None
        if summary is not None:
            reference = summary.reference_slope
        elif ref_slope is not None:
            reference = float(ref_slope)
        if reference is not None:
            ax.plot(np.exp(span),
                    np.exp(cm - 0.7 + reference * (span - ce)),
                    "--", lw=1.0, color=line.get_color(), zorder=1,
                    label=f"{data.label}: reference {reference:.4f}")
        infos.append({
            "label": data.label,
            "slope": slope,
            "slope_source": "file" if summary is not None else "ols",
            "reference_slope": reference,
            "n_points": int(data.eps.size),
        })
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("corner mass")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return fig, infos


def save_png(fig, path) -> None:
    """Write the figure with pinned dpi and no varying metadata."""
    fig.savefig(path, dpi=_DPI, metadata={"Software": None})
    plt.close(fig)
