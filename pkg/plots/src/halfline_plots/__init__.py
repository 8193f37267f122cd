"""Static figures from halfline solver output files."""

from .figures import exponent_figure, heatmap_figure, save_png
from .io import (ExponentPoints, FitSummary, MissingColumnError, ParseError,
                 TrajectoryFile, read_exponent_points, read_fit_summary,
                 read_trajectory)

__all__ = [
    "ExponentPoints",
    "FitSummary",
    "MissingColumnError",
    "ParseError",
    "TrajectoryFile",
    "exponent_figure",
    "heatmap_figure",
    "read_exponent_points",
    "read_fit_summary",
    "read_trajectory",
    "save_png",
]
