"""Path-wise finite differences for the half-line equation with common noise.

Each time step splits into an implicit diffusion-drift half (theta scheme,
Crank-Nicolson after a short implicit-Euler startup) and a conservative
semi-Lagrangian transport half that shifts the profile by the common
increment. The split carries the Ito compensation automatically: shifting
by a centered Gaussian increment generates the extra second-order term in
expectation, so the implicit half diffuses with the idiosyncratic variance
only. Both halves are unconditionally stable; the time-step refusal below
guards the splitting accuracy at the absorbing boundary, not stability.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .model import ModelParams
from .particles import CommonPath

_NEG_TOL_FACTOR = 1e-10


class CFLError(RuntimeError):
    """Time step too large for the grid; refusing to run."""


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Closed-form probe with bounded derivatives, vanishing at the origin."""

    name: str
    phi: callable
    d1: callable
    d2: callable


def test_functions(length_scale: float = 4.0) -> dict:
    """Catalog of probes for the weak form.

    The half-sine entry rises over (0, L) and continues constant at 1, so
    its second derivative has a bounded jump at L; everything stays in the
    admissible class (zero at the origin, bounded through phi'').
    """
    length = float(length_scale)

    def sine(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < length, np.sin(0.5 * math.pi * x / length), 1.0)

    def sine_d1(x):
        x = np.asarray(x, dtype=float)
        c = 0.5 * math.pi / length
        return np.where(x < length, c * np.cos(0.5 * math.pi * x / length), 0.0)

    def sine_d2(x):
        x = np.asarray(x, dtype=float)
        c = 0.5 * math.pi / length
        return np.where(x < length, -c * c * np.sin(0.5 * math.pi * x / length), 0.0)

    return {
        "linear-exp": TestFunction(
            "linear-exp",
            lambda x: x * np.exp(-x),
            lambda x: (1.0 - x) * np.exp(-x),
            lambda x: (x - 2.0) * np.exp(-x),
        ),
        "quadratic-exp": TestFunction(
            "quadratic-exp",
            lambda x: x**2 * np.exp(-x),
            lambda x: (2.0 * x - x**2) * np.exp(-x),
            lambda x: (2.0 - 4.0 * x + x**2) * np.exp(-x),
        ),
        "half-sine": TestFunction("half-sine", sine, sine_d1, sine_d2),
        "saturating": TestFunction(
            "saturating",
            lambda x: (1.0 - np.exp(-x)) * np.exp(-x),
            lambda x: 2.0 * np.exp(-2.0 * x) - np.exp(-x),
            lambda x: np.exp(-x) - 4.0 * np.exp(-2.0 * x),
        ),
    }


# ---------------------------------------------------------------------------
# grid trajectory


@dataclass(frozen=True)
class GridDensity:
    """Solution values on a uniform grid at stored times.

    ``values[k, j]`` is V at ``times[k]``, ``x[j]``; the x = 0 column is
    pinned to zero. ``clipped_mass[k]`` is the cumulative interpolation
    undershoot removed up to that stored time (an auditable correction, not
    silent). Derivative trajectories reuse the container with
    ``is_density=False``, which skips the positivity and mass audits.
    """

    x: np.ndarray
    times: np.ndarray
    values: np.ndarray
    params: ModelParams
    v0_sup: float
    clipped_mass: np.ndarray = None
    cfl_warning: bool = False
    is_density: bool = field(default=True)

    def __post_init__(self):
        if self.values.shape != (self.times.size, self.x.size):
            raise ValueError("values must be (n_times, n_nodes)")
        if self.clipped_mass is None:
            object.__setattr__(self, "clipped_mass", np.zeros(self.times.size))
        if not self.is_density:
            return
        if np.any(self.values[:, 0] != 0.0):
            raise ValueError("boundary column x=0 must be pinned to zero")
        floor = -_NEG_TOL_FACTOR * self.v0_sup
        worst = float(self.values.min(initial=0.0))
        if worst < floor:
            raise ValueError(
                f"undershoot {worst:.3e} below tolerance {floor:.3e}"
            )

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> np.ndarray:
        """Trapezoid mass of each stored row."""
        return np.trapezoid(self.values, self.x, axis=1)

    def lp_norm(self, p) -> np.ndarray:
        """Grid L^p norm of each stored row (p = inf for the sup norm)."""
        if p == np.inf or p == "inf":
            return np.abs(self.values).max(axis=1)
        if p <= 0:
            raise ValueError(f"p must be positive or inf, got {p}")
        return np.trapezoid(np.abs(self.values) ** p, self.x, axis=1) ** (1.0 / p)

    def index_of_time(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not stored (nearest {self.times[k]})")
        return k


def default_extent(params: ModelParams, x_max: float) -> float:
    """Right edge far enough that the free density's tail mass is < 1e-10."""
    spread = math.sqrt(params.total_variance_rate * params.horizon)
    return x_max + 12.0 * spread + abs(params.mu) * params.horizon


def _cell_average_init(v0, x: np.ndarray) -> np.ndarray:
    """Initial grid values from CDF differences over cells (exact mass)."""
    h = x[1] - x[0]
    edges = np.concatenate([[0.0], 0.5 * (x[1:] + x[:-1]), [x[-1] + 0.5 * h]])
    cdf = v0.cdf(edges)
    vals = (cdf[1:] - cdf[:-1]) / np.diff(edges)
    vals[0] = 0.0  # Dirichlet node
    return vals


def _shift_cubic(v: np.ndarray, offset: float):
    """Sample v at node positions shifted by ``offset`` grid units.

    Four-point Lagrange interpolation with zero extension on both sides;
    the uniform shift means one fractional weight set serves every node.
    Returns (shifted, clipped) where clipped is the total negative
    undershoot removed (in node units, caller scales by dx).
    """
    base = math.floor(offset)
    lam = offset - base
    w_m1 = -lam * (lam - 1.0) * (lam - 2.0) / 6.0
    w_0 = (lam + 1.0) * (lam - 1.0) * (lam - 2.0) / 2.0
    w_p1 = -(lam + 1.0) * lam * (lam - 2.0) / 2.0
    w_p2 = (lam + 1.0) * lam * (lam - 1.0) / 6.0

    n = v.size
    idx = np.arange(n) + base

    def gather(shifted_idx):
        valid = (shifted_idx >= 0) & (shifted_idx < n)
        out = np.zeros(n)
        out[valid] = v[shifted_idx[valid]]
        return out

    shifted = (w_m1 * gather(idx - 1) + w_0 * gather(idx)
               + w_p1 * gather(idx + 1) + w_p2 * gather(idx + 2))
    negative = shifted < 0.0
    clipped = float(-shifted[negative].sum())
    shifted[negative] = 0.0
    return shifted, clipped


def _theta_matrices(n_unknown: int, dx: float, dt: float, diffusion: float,
                    mu: float, theta: float):
    """Banded (ab) left matrix and right stencil for one theta step.

    Unknowns are nodes 1..J with Dirichlet at node 0 and a zero-gradient
    ghost at the right edge (second difference doubles the inner neighbor,
    centered drift cancels there).
    """
    lo = diffusion / dx**2 + 0.5 * mu / dx      # coefficient of V_{j-1}
    di = -2.0 * diffusion / dx**2               # coefficient of V_j
    hi = diffusion / dx**2 - 0.5 * mu / dx      # coefficient of V_{j+1}

    ab = np.zeros((3, n_unknown))
    ab[0, 1:] = -theta * dt * hi
    ab[1, :] = 1.0 - theta * dt * di
    ab[2, :-1] = -theta * dt * lo
    # right edge: ghost node mirrors the inner neighbor
    ab[2, -2] = -theta * dt * (lo + hi)

    explicit = (1.0 - theta) * dt
    return ab, (explicit * lo, 1.0 + explicit * di, explicit * hi)


def _apply_right(stencil, v_full: np.ndarray) -> np.ndarray:
    """Explicit half of the theta step on the interior unknowns."""
    lo, di, hi = stencil
    u = v_full
    rhs = di * u[1:] + lo * np.concatenate([[0.0], u[1:-1]])
    rhs[:-1] += hi * u[2:]
    rhs[-1] += hi * u[-2]  # ghost mirror
    return rhs


def solve_spde_path(params: ModelParams, v0, common: CommonPath,
                    dx: float = None, store_every: int = 1, *,
                    x_right: float = None,
                    strict_budget: bool = False) -> GridDensity:
    """March the density along one common path.

    Refuses dt > dx outright. The tighter transport budget
    3 sigma_m sqrt(dt) <= dx is recorded as a warning flag when violated
    (both substeps are unconditionally stable; the budget guards boundary
    splitting accuracy) and upgraded to a refusal under ``strict_budget``.
    """
    if x_right is None:
        x_right = default_extent(params, v0.x_max)
    if dx is None:
        dx = x_right / 4096.0
    if dx <= 0.0:
        raise ValueError(f"dx must be positive, got {dx}")
    if v0.x_max >= x_right:
        raise ValueError("initial support must sit inside the grid")
    dt = common.dt
    if dt > dx:
        raise CFLError(f"dt={dt:.3e} exceeds dx={dx:.3e}; refine the path grid")
    budget_ok = 3.0 * params.sigma_m * math.sqrt(dt) <= dx
    if not budget_ok and strict_budget:
        raise CFLError(
            f"3 sigma_m sqrt(dt) = {3*params.sigma_m*math.sqrt(dt):.3e} "
            f"exceeds dx = {dx:.3e} under strict budget"
        )
    n_steps = common.n_steps
    if store_every < 1 or n_steps % store_every:
        raise ValueError("store_every must divide the number of steps")

    n_nodes = int(round(x_right / dx)) + 1
    x = np.linspace(0.0, x_right, n_nodes)
    v = _cell_average_init(v0, x)
    sup0 = float(v0.sup_bound)

    n_unknown = n_nodes - 1
    diffusion = 0.5 * params.sigma_i**2
    rannacher = min(4, n_steps)
    ab_ie, st_ie = _theta_matrices(n_unknown, dx, dt, diffusion, params.mu, 1.0)
    ab_cn, st_cn = _theta_matrices(n_unknown, dx, dt, diffusion, params.mu, 0.5)

    n_stored = n_steps // store_every + 1
    stored = np.empty((n_stored, n_nodes))
    stored_t = np.empty(n_stored)
    clip_log = np.zeros(n_stored)
    stored[0] = v
    stored_t[0] = 0.0
    clipped_total = 0.0
    row = 1

    for k in range(n_steps):
        ab, stencil = (ab_ie, st_ie) if k < rannacher else (ab_cn, st_cn)
        rhs = _apply_right(stencil, v)
        interior = solve_banded((1, 1), ab, rhs)
        v = np.concatenate([[0.0], interior])
        # small theta-scheme undershoot near the jump is clipped with the
        # same audit as the transport substep
        neg = v < 0.0
        if neg.any():
            clipped_total += float(-v[neg].sum()) * dx
            v[neg] = 0.0
        shift = params.sigma_m * float(common.increments[k])
        if shift != 0.0:
            # new profile samples the old one at x - shift
            v, clipped_nodes = _shift_cubic(v, -shift / dx)
            clipped_total += clipped_nodes * dx
            v[0] = 0.0
        if (k + 1) % store_every == 0:
            stored[row] = v
            stored_t[row] = common.times[k + 1]
            clip_log[row] = clipped_total
            row += 1

    return GridDensity(x=x, times=stored_t, values=stored, params=params,
                       v0_sup=sup0, clipped_mass=clip_log,
                       cfl_warning=not budget_ok)


# ---------------------------------------------------------------------------
# weak-form residual


def weak_form_residual(traj: GridDensity, phi: TestFunction,
                       common: CommonPath) -> np.ndarray:
    """Defect of the weak equation at each stored time.

    residual(t_k) = <phi, V_k> - <phi, V_0>
                    - sum_{j<k} [mu <phi', V_j> + (sigma^2/2) <phi'', V_j>] dt
                    - sigma_m sum_{j<k} <phi', V_j> dW_j

    with left-point sums (Ito convention) and trapezoid brackets. Requires
    the trajectory stored at every path step.
    """
    if traj.times.size != common.times.size or not np.allclose(
            traj.times, common.times, rtol=0.0, atol=1e-12):
        raise ValueError("trajectory must be stored on the common path grid")
    x = traj.x
    w = np.ones(x.size)
    w[0] = w[-1] = 0.5
    w *= traj.dx
    b0 = traj.values @ (phi.phi(x) * w)
    b1 = traj.values @ (phi.d1(x) * w)
    b2 = traj.values @ (phi.d2(x) * w)
    p = traj.params
    drift = p.mu * b1 + 0.5 * p.total_variance_rate * b2
    dt = common.dt
    residual = np.empty_like(b0)
    residual[0] = 0.0
    residual[1:] = (
        b0[1:] - b0[0]
        - np.cumsum(drift[:-1]) * dt
        - p.sigma_m * np.cumsum(b1[:-1] * common.increments)
    )
    return residual


# ---------------------------------------------------------------------------
# spatial derivatives


_CENTRAL = {
    1: (np.array([-0.5, 0.0, 0.5]), 1),
    2: (np.array([1.0, -2.0, 1.0]), 1),
    3: (np.array([-0.5, 1.0, 0.0, -1.0, 0.5]), 2),
    4: (np.array([1.0, -4.0, 6.0, -4.0, 1.0]), 2),
}

_FORWARD = {
    1: np.array([-1.5, 2.0, -0.5]),
    2: np.array([2.0, -5.0, 4.0, -1.0]),
    3: np.array([-2.5, 9.0, -12.0, 7.0, -1.5]),
    4: np.array([3.0, -14.0, 26.0, -24.0, 11.0, -2.0]),
}


def spatial_derivatives(traj: GridDensity, k: int) -> GridDensity:
    """Second-order finite-difference derivative of every stored row.

    Central stencils inside, one-sided second-order stencils near the
    edges. The x = 0 node is still reported but carries no meaning for
    norms: derivatives may genuinely blow up there, so norms over
    derivative trajectories must exclude it.
    """
    if not 0 <= k <= 4:
        raise ValueError(f"derivative order must lie in 0..4, got {k}")
    if k == 0:
        return traj
    h = traj.dx
    coeffs, half = _CENTRAL[k]
    width = coeffs.size
    n = traj.x.size
    if n < max(width, _FORWARD[k].size):
        raise ValueError("stencil does not fit in the grid")
    vals = traj.values
    out = np.zeros_like(vals)
    # interior by correlation
    acc = np.zeros((vals.shape[0], n - width + 1))
    for i, c in enumerate(coeffs):
        if c != 0.0:
            acc += c * vals[:, i:i + n - width + 1]
    out[:, half:n - half] = acc
    fwd = _FORWARD[k]
    for j in range(half):
        out[:, j] = vals[:, j:j + fwd.size] @ fwd
        sign = 1.0 if k % 2 == 0 else -1.0
        out[:, n - 1 - j] = sign * (vals[:, n - fwd.size - j:n - j] @ fwd[::-1])
    out /= h**k
    return GridDensity(x=traj.x, times=traj.times, values=out,
                       params=traj.params, v0_sup=traj.v0_sup,
                       clipped_mass=traj.clipped_mass,
                       cfl_warning=traj.cfl_warning, is_density=False)


# ---------------------------------------------------------------------------
# domination bound and external formats


def free_density_bound(params: ModelParams, v0, common: CommonPath, t: float,
                       x) -> np.ndarray:
    """Conditional free density integrated against V0 (no absorption).

    P_t(x; x0) is the Gaussian with mean x0 + mu t + sigma_m W_t and
    variance sigma_i^2 t; the absorbed solution is dominated by this
    integral pointwise per path.
    """
    if not 0.0 < t <= common.horizon:
        raise ValueError(f"t must lie in (0, horizon], got {t}")
    k = common.grid_index(t)
    w_t = float(common.brownian()[k])
    x = np.atleast_1d(np.asarray(x, dtype=float))
    # Gauss-Legendre over the initial support
    nodes, weights = np.polynomial.legendre.leggauss(200)
    a, b = v0.x_min, v0.x_max
    y = 0.5 * (b - a) * (nodes + 1.0) + a
    wq = 0.5 * (b - a) * weights * v0.pdf(y)
    var = params.sigma_i**2 * t
    mean_shift = params.mu * t + params.sigma_m * w_t
    gauss = np.exp(-0.5 * (x[:, None] - y[None, :] - mean_shift) ** 2 / var)
    return (gauss @ wq) / math.sqrt(2.0 * math.pi * var)


def write_grid_dump(file, traj: GridDensity) -> None:
    """Binary trajectory: header (J, K_stored, dx, dt_stored), then rows.

    J is the interval count (nodes minus one); dt_stored is the spacing of
    the stored times. Little-endian int64/int64/float64/float64 header,
    then (K_stored+1) x (J+1) float64 values row-major.
    """
    j_intervals = traj.x.size - 1
    k_stored = traj.times.size - 1
    dt_stored = float(traj.times[1] - traj.times[0]) if k_stored else 0.0
    with open(file, "wb") as fh:
        fh.write(struct.pack("<qqdd", j_intervals, k_stored, traj.dx, dt_stored))
        fh.write(np.ascontiguousarray(traj.values, dtype="<f8").tobytes())


def read_grid_dump(file):
    """Inverse of :func:`write_grid_dump`: (dx, dt_stored, values)."""
    with open(file, "rb") as fh:
        head = fh.read(32)
        if len(head) != 32:
            raise ValueError("truncated dump header")
        j_intervals, k_stored, dx, dt_stored = struct.unpack("<qqdd", head)
        if j_intervals < 1 or k_stored < 0 or dx <= 0.0 or dt_stored < 0.0:
            raise ValueError("inconsistent dump header")
        body = np.frombuffer(fh.read(), dtype="<f8")
    expect = (k_stored + 1) * (j_intervals + 1)
    if body.size != expect:
        raise ValueError("dump body does not match header dimensions")
    return dx, dt_stored, body.reshape(k_stored + 1, j_intervals + 1).copy()


def write_grid_csv(file, traj: GridDensity, x_stride: int = 1,
                   t_stride: int = 1) -> None:
    """Long-form CSV (t, x, value) for small runs and the plotting layer."""
    with open(file, "w", encoding="ascii", newline="\n") as fh:
        fh.write("t,x,value\n")
        for k in range(0, traj.times.size, t_stride):
            t = float(traj.times[k])
            for j in range(0, traj.x.size, x_stride):
                fh.write(f"{t!r},{float(traj.x[j])!r},"
                         f"{float(traj.values[k, j])!r}\n")
