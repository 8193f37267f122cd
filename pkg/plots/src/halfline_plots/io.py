"""Readers for the solver's output files.

This package renders files produced by the halfline CLI and computes
nothing of its own, so the parsers here are written against the documented
byte and column layouts rather than against that package's code. Two
formats exist for trajectories:

* binary dump: little-endian header ``int64 J, int64 K, float64 dx,
  float64 dt`` followed by ``(K+1) x (J+1)`` float64 values row-major,
  where J is the interval count and dt the stored-step spacing;
* long-form CSV with header ``t,x,value``, one node per row.

Exponent data arrives as CSV with ``eps`` and ``mass`` columns, optionally
accompanied by a one-row fit summary whose columns include ``slope`` and
``reference_slope``.
"""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<qqdd")


class ParseError(ValueError):
    """A file does not match its documented layout."""


class MissingColumnError(ParseError):
    def __init__(self, column: str, path):
        self.column = column
        super().__init__(f"{path}: missing column {column!r}")


@dataclass(frozen=True)
class TrajectoryFile:
    """Grid, stored times and field values parsed from one run."""

    x: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.times.size, self.x.size):
            raise ParseError("trajectory dimensions are inconsistent")

    @property
    def v0_sup(self) -> float:
        return float(self.values[0].max(initial=0.0))


def _read_binary(path) -> TrajectoryFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated header")
    j_intervals, k_stored, dx, dt = _HEADER.unpack_from(raw)
    if j_intervals < 1 or k_stored < 0 or dx <= 0.0 or dt < 0.0:
        raise ParseError(f"{path}: inconsistent header fields")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    expect = (k_stored + 1) * (j_intervals + 1)
    if body.size != expect:
        raise ParseError(
            f"{path}: payload holds {body.size} values, header promises "
            f"{expect}"
        )
    if not np.all(np.isfinite(body)):
        raise ParseError(f"{path}: non-finite values in payload")
    return TrajectoryFile(
        x=np.arange(j_intervals + 1) * dx,
        times=np.arange(k_stored + 1) * dt,
        values=body.reshape(k_stored + 1, j_intervals + 1).copy(),
    )


def _read_csv_trajectory(path) -> TrajectoryFile:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "x", "value"]:
            raise ParseError(f"{path}: expected header t,x,value")
        try:
            rows = [(float(t), float(x), float(v)) for t, x, v in reader]
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric row ({exc})") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    ts = np.array([r[0] for r in rows])
    xs = np.array([r[1] for r in rows])
    t_axis = np.unique(ts)
    x_axis = np.unique(xs)
    if t_axis.size * x_axis.size != len(rows):
        raise ParseError(f"{path}: rows do not form a full (t, x) grid")
    values = np.full((t_axis.size, x_axis.size), np.nan)
    ti = np.searchsorted(t_axis, ts)
    xi = np.searchsorted(x_axis, xs)
    values[ti, xi] = [r[2] for r in rows]
    if np.any(np.isnan(values)):
        raise ParseError(f"{path}: duplicate (t, x) rows leave grid holes")
    return TrajectoryFile(x=x_axis, times=t_axis, values=values)


def read_trajectory(path) -> TrajectoryFile:
    """Parse a trajectory file, sniffing binary dump vs long-form CSV."""
    with open(path, "rb") as fh:
        head = fh.read(9)
    if head.startswith(b"t,x,value"):
        return _read_csv_trajectory(path)
    return _read_binary(path)


def _read_table(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        cols = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in cols:
                cell = row.get(name)
                if cell is None or cell == "":
                    raise ParseError(f"{path}: ragged row")
                try:
                    cols[name].append(float(cell))
                except ValueError as exc:
                    raise ParseError(
                        f"{path}: non-numeric cell in {name!r}"
                    ) from exc
    return {name: np.asarray(vals) for name, vals in cols.items()}


@dataclass(frozen=True)
class ExponentPoints:
    """One log-log dataset: radii and their corner masses."""

    label: str
    eps: np.ndarray
    mass: np.ndarray


@dataclass(frozen=True)
class FitSummary:
    """Slope metadata exported next to a dataset by the solver CLI."""

    slope: float
    reference_slope: float


def is_fit_summary(path) -> bool:
    """True when the CSV header announces fit metadata, not points."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
    return "slope" in header


def read_exponent_points(path) -> ExponentPoints:
    cols = _read_table(path)
    for required in ("eps", "mass"):
        if required not in cols:
            raise MissingColumnError(required, path)
    eps = cols["eps"]
    mass = cols["mass"]
    if eps.size < 5:
        raise ParseError(
            f"{path}: need at least 5 points for a slope, got {eps.size}"
        )
    if np.any(eps <= 0.0) or np.any(mass <= 0.0):
        raise ParseError(f"{path}: log axes need positive eps and mass")
    order = np.argsort(eps)
    return ExponentPoints(label=Path(path).parent.name or Path(path).stem,
                          eps=eps[order], mass=mass[order])


def read_fit_summary(path) -> FitSummary:
    cols = _read_table(path)
    for required in ("slope", "reference_slope"):
        if required not in cols:
            raise MissingColumnError(required, path)
    if cols["slope"].size != 1:
        raise ParseError(f"{path}: fit summary must hold exactly one row")
    return FitSummary(slope=float(cols["slope"][0]),
                      reference_slope=float(cols["reference_slope"][0]))
