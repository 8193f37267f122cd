"""Particle system driven by a shared noise, absorbed at zero.

Each particle follows  x + mu dt + sigma_m dW + sigma_i dW^i  between grid
times, where W is common to the ensemble and W^i are idiosyncratic. A
Brownian-bridge correction decides whether the particle crossed zero inside
a step, which cuts the first-passage bias from O(sqrt(dt)) to O(dt). The
empirical measure of alive particles estimates the half-line measure-valued
solution, and squares of its corner masses estimate the second moment used
throughout the regularity analysis.

All randomness comes from counter-based Philox streams keyed by
(seed_id, path_index, purpose, step), so any prefix of the computation can
be reproduced independently of scheduling or worker count.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelParams, TruncatedDensity

# purpose tags: the high counter word of each Philox substream
_DRAW_INITIAL = 0
_DRAW_STEP = 1
_DRAW_BRIDGE = 2
_DRAW_TREE_ROOT = 3
_DRAW_TREE_MID = 4


def _stream(seed_id: int, path_index: int, purpose: int, index: int) -> np.random.Generator:
    """Independent generator for one (seed, path, purpose, index) cell.

    The Philox block counter advances through counter[0]; putting the
    purpose and index in the upper words gives every cell 2^128 blocks of
    headroom, so streams can never run into each other.
    """
    key = np.array([seed_id, path_index], dtype=np.uint64)
    counter = np.array([0, 0, index, purpose], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


# ---------------------------------------------------------------------------
# common noise


@dataclass(frozen=True)
class CommonPath:
    """Shared Brownian increments on a uniform grid, W_0 = 0.

    Built as a dyadic midpoint tree: the terminal value is drawn first,
    then each refinement level fills in conditional midpoints. Restricting
    a path built with 2K steps to every other grid point reproduces the
    K-step path bit for bit, which joint-refinement studies rely on.
    """

    times: np.ndarray
    increments: np.ndarray
    seed_id: int
    path_index: int = 0
    values: np.ndarray = None

    def __post_init__(self):
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("times must hold at least two grid points")
        if self.times[0] != 0.0:
            raise ValueError("grid must start at 0")
        steps = np.diff(self.times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid step must be uniform")
        if self.increments.shape != (self.times.size - 1,):
            raise ValueError("increments must have one entry per grid step")
        if self.values is None:
            w = np.empty(self.times.size)
            w[0] = 0.0
            np.cumsum(self.increments, out=w[1:])
            object.__setattr__(self, "values", w)
        elif self.values.shape != self.times.shape or self.values[0] != 0.0:
            raise ValueError("values must cover the grid and start at 0")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.increments.size

    def brownian(self) -> np.ndarray:
        """W on the grid; tree-built paths return the exact node values."""
        return self.values.copy()

    def grid_index(self, t: float) -> int:
        """Index of the grid point equal to t, within rounding slack."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the grid (dt={self.dt})")
        return k


def build_common_path(seed_id: int, horizon: float, n_steps: int,
                      path_index: int = 0) -> CommonPath:
    """Sample the shared noise from its dyadic tree representation."""
    if seed_id < 0 or path_index < 0:
        raise ValueError("seed_id and path_index must be nonnegative")
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if n_steps < 1 or n_steps & (n_steps - 1):
        raise ValueError(f"n_steps must be a power of two, got {n_steps}")
    levels = n_steps.bit_length() - 1
    root = _stream(seed_id, path_index, _DRAW_TREE_ROOT, 0)
    w = np.array([0.0, math.sqrt(horizon) * root.standard_normal()])
    for level in range(1, levels + 1):
        span = horizon / 2 ** (level - 1)
        gen = _stream(seed_id, path_index, _DRAW_TREE_MID, level)
        mids = 0.5 * (w[:-1] + w[1:]) + 0.5 * math.sqrt(span) * gen.standard_normal(
            w.size - 1
        )
        merged = np.empty(2 * w.size - 1)
        merged[::2] = w
        merged[1::2] = mids
        w = merged
    times = np.linspace(0.0, horizon, n_steps + 1)
    return CommonPath(times=times, increments=np.diff(w), seed_id=seed_id,
                      path_index=path_index, values=w)


# ---------------------------------------------------------------------------
# ensemble state


@dataclass(frozen=True)
class Ensemble:
    """Positions and liveness of N particles at one time.

    Dead particles sit at the cemetery value 0 and never move again; alive
    particles are strictly positive.
    """

    positions: np.ndarray
    alive: np.ndarray
    current_time: float
    params: ModelParams
    seed_id: int
    path_index: int = 0
    step_index: int = 0

    def __post_init__(self):
        if self.positions.shape != self.alive.shape or self.positions.ndim != 1:
            raise ValueError("positions and alive must be matching 1-d arrays")
        if np.any(self.positions[self.alive] <= 0.0):
            raise ValueError("alive particles must sit strictly above zero")
        if np.any(self.positions[~self.alive] != 0.0):
            raise ValueError("dead particles must sit at the cemetery value 0")

    @property
    def n_particles(self) -> int:
        return self.positions.size

    @property
    def alive_fraction(self) -> float:
        return int(self.alive.sum()) / self.n_particles

    @property
    def killed_fraction(self) -> float:
        # defined as the complement so the two fractions add to 1 exactly
        return 1.0 - self.alive_fraction


def initialize_ensemble(params: ModelParams, v0, n_particles: int, seed_id: int,
                        path_index: int = 0, stratified: bool = False) -> Ensemble:
    """Draw starting positions from V0 by inverse transform.

    A TruncatedDensity shares its parent's inverse CDF: draws landing below
    the truncation threshold are never born. Running both densities on the
    same seed therefore couples them pathwise, truncated alive set inside
    the full one. ``stratified`` spreads the uniforms over equal strata;
    no distributional equivalence with i.i.d. sampling is claimed.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if seed_id < 0 or path_index < 0:
        raise ValueError("seed_id and path_index must be nonnegative")
    u = _stream(seed_id, path_index, _DRAW_INITIAL, 0).random(n_particles)
    if stratified:
        u = (np.arange(n_particles) + u) / n_particles
    if isinstance(v0, TruncatedDensity):
        positions = np.asarray(v0.base.inv_cdf(u), dtype=float)
        alive = u > v0.birth_threshold
    else:
        positions = np.asarray(v0.inv_cdf(u), dtype=float)
        alive = np.ones(n_particles, dtype=bool)
    alive &= positions > 0.0
    positions = np.where(alive, positions, 0.0)
    return Ensemble(positions=positions, alive=alive, current_time=0.0,
                    params=params, seed_id=seed_id, path_index=path_index)


def survive_step(x_prev, x_next, dt: float, sigma_total2: float):
    """Probability that the bridge between the endpoints stayed positive.

    Zero when the right endpoint is already nonpositive, otherwise
    1 - exp(-2 x_prev x_next / (sigma_total2 dt)). The caller kills with
    the complementary probability.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if sigma_total2 <= 0.0:
        raise ValueError(f"sigma_total2 must be positive, got {sigma_total2}")
    xp = np.asarray(x_prev, dtype=float)
    xn = np.asarray(x_next, dtype=float)
    if np.any(xp <= 0.0):
        raise ValueError("x_prev must be strictly positive")
    # zero out the argument where the endpoint is already nonpositive, so
    # expm1 never sees the sign-flipped overflow and the survival is exact 0
    arg = np.where(xn > 0.0, -2.0 * xp * xn / (sigma_total2 * dt), 0.0)
    prob = -np.expm1(arg)
    if prob.ndim == 0:
        return float(prob)
    return prob


def advance_ensemble(ens: Ensemble, common_increment: float, dt: float) -> Ensemble:
    """One Euler step with the shared increment, then the bridge kill.

    The Gaussian increments are exact in distribution (constant
    coefficients), so the only discretization error is in the killing.
    Idiosyncratic draws and kill uniforms are generated for every index,
    dead or alive, which keeps coupled runs on the same seed aligned
    particle by particle.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    p = ens.params
    advanced_time = ens.current_time + dt
    next_step = ens.step_index + 1
    if not ens.alive.any():
        return replace(ens, current_time=advanced_time, step_index=next_step)
    n = ens.n_particles
    noise = _stream(ens.seed_id, ens.path_index, _DRAW_STEP, ens.step_index
                    ).standard_normal(n)
    kill_u = _stream(ens.seed_id, ens.path_index, _DRAW_BRIDGE, ens.step_index
                     ).random(n)
    proposed = (ens.positions + p.mu * dt + p.sigma_m * common_increment
                + p.sigma_i * math.sqrt(dt) * noise)
    survival = np.zeros(n)
    mask = ens.alive
    if p.total_variance_rate > 0.0:
        survival[mask] = survive_step(ens.positions[mask], proposed[mask], dt,
                                      p.total_variance_rate)
    else:
        survival[mask] = (proposed[mask] > 0.0).astype(float)
    alive = mask & (kill_u < survival)
    positions = np.where(alive, proposed, 0.0)
    return replace(ens, positions=positions, alive=alive,
                   current_time=advanced_time, step_index=next_step)


# ---------------------------------------------------------------------------
# empirical measure


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Sorted alive positions at a fixed time, normalized by the full count.

    Interval masses are counting measures over the open interval (a, b);
    the defect from total mass one equals the killed fraction.
    """

    positions: np.ndarray
    total_count: int

    @classmethod
    def from_ensemble(cls, ens: Ensemble) -> "EmpiricalMeasure":
        return cls(positions=np.sort(ens.positions[ens.alive]),
                   total_count=ens.n_particles)

    @property
    def alive_fraction(self) -> float:
        return self.positions.size / self.total_count

    @property
    def killed_fraction(self) -> float:
        return 1.0 - self.alive_fraction

    def interval_mass(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        lo = int(np.searchsorted(self.positions, a, side="right"))
        hi = int(np.searchsorted(self.positions, b, side="left"))
        return (hi - lo) / self.total_count

    def corner_mass(self, eps: float) -> float:
        return self.interval_mass(0.0, eps)


# ---------------------------------------------------------------------------
# second-moment estimation across outer paths


@dataclass(frozen=True)
class CornerMomentResult:
    """Monte Carlo estimate of the corner second moment per epsilon.

    ``per_path_mass[m, j]`` is the alive mass of (0, eps_j) on outer path m;
    the estimator averages its square across paths. ``terminal_common``
    holds W_t per path so callers can reweight between drifts.
    """

    eps: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    per_path_mass: np.ndarray
    terminal_common: np.ndarray
    time: float
    n_particles: int
    seed_id: int

    @property
    def n_paths(self) -> int:
        return self.per_path_mass.shape[0]


def _corner_single_path(params, v0, n_particles, n_steps, t, eps, seed_id,
                        path_index, stratified):
    common = build_common_path(seed_id, t, n_steps, path_index)
    ens = initialize_ensemble(params, v0, n_particles, seed_id, path_index,
                              stratified)
    for k in range(n_steps):
        ens = advance_ensemble(ens, float(common.increments[k]), common.dt)
    measure = EmpiricalMeasure.from_ensemble(ens)
    masses = np.array([measure.corner_mass(float(e)) for e in eps])
    return masses, float(common.brownian()[-1])


def corner_second_moment(params: ModelParams, v0, n_particles: int,
                         m_paths: int, t: float, eps_list, *,
                         seed_id: int = 0, n_steps: int = 2048,
                         stratified: bool = False,
                         workers: int = 1) -> CornerMomentResult:
    """Estimate E[nu_t(0, eps)^2] for each eps with path-to-path stderr.

    Conditionally on the common path, the corner mass squared estimates the
    second moment, so the outer average runs over independent common paths.
    The same eps grid is used on every path for paired comparisons. Worker
    threads split the outer paths; results do not depend on the split.
    """
    if n_particles < 1000:
        raise ValueError("need at least 10^3 particles")
    if m_paths < 10:
        raise ValueError("need at least 10 outer paths")
    if not 0.0 < t <= params.horizon:
        raise ValueError(f"t must lie in (0, {params.horizon}], got {t}")
    eps = np.asarray(eps_list, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0.0):
        raise ValueError("eps_list must be a 1-d list of positive levels")

    def run(path_index: int):
        return _corner_single_path(params, v0, n_particles, n_steps, t, eps,
                                   seed_id, path_index, stratified)

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, range(m_paths)))
    else:
        rows = [run(m) for m in range(m_paths)]
    per_path = np.vstack([r[0] for r in rows])
    terminal = np.array([r[1] for r in rows])
    squares = per_path**2
    mean = squares.mean(axis=0)
    stderr = squares.std(axis=0, ddof=1) / math.sqrt(m_paths)
    return CornerMomentResult(eps=eps, mean=mean, stderr=stderr,
                              per_path_mass=per_path, terminal_common=terminal,
                              time=float(t), n_particles=n_particles,
                              seed_id=seed_id)


# ---------------------------------------------------------------------------
# change of measure


def girsanov_weight(common: CommonPath, t: float, params: ModelParams) -> float:
    """Density removing the drift: exp(-(mu/sigma_m) W_t - mu^2 t / (2 sigma_m^2)).

    Evaluated on the discrete path at a grid time. Averaging it over paths
    returns 1 (martingale property); weighting by it converts expectations
    with drift mu into driftless ones.
    """
    if params.sigma_m <= 0.0:
        raise ValueError("change of measure needs sigma_m > 0")
    k = common.grid_index(t)
    w_t = float(common.increments[:k].sum())
    mu = params.mu
    return math.exp(-(mu / params.sigma_m) * w_t
                    - 0.5 * mu * mu * t / params.sigma_m**2)


# ---------------------------------------------------------------------------
# external formats


def write_corner_csv(result: CornerMomentResult, per_path_file, summary_file) -> None:
    """Emit the per-path table and the per-eps summary.

    Per-path columns: path_id, t, eps, nu_mass, nu_mass_sq. Summary
    columns: eps, mean, stderr. Numbers use repr so identical runs emit
    identical bytes.
    """
    with open(per_path_file, "w", encoding="ascii", newline="\n") as fh:
        fh.write("path_id,t,eps,nu_mass,nu_mass_sq\n")
        for m in range(result.n_paths):
            for j, eps in enumerate(result.eps):
                mass = float(result.per_path_mass[m, j])
                fh.write(f"{m},{result.time!r},{float(eps)!r},{mass!r},"
                         f"{mass * mass!r}\n")
    with open(summary_file, "w", encoding="ascii", newline="\n") as fh:
        fh.write("eps,mean,stderr\n")
        for j, eps in enumerate(result.eps):
            fh.write(f"{float(eps)!r},{float(result.mean[j])!r},"
                     f"{float(result.stderr[j])!r}\n")


def dump_positions(file, dt: float, positions: np.ndarray) -> None:
    """Binary trajectory dump: header (N, K, dt), then row-major positions.

    ``positions`` has K+1 rows (times 0..K dt) of N columns. Layout:
    little-endian int64 N, int64 K, float64 dt, then K+1 rows of N float64.
    """
    if positions.ndim != 2:
        raise ValueError("positions must be a (K+1, N) matrix")
    rows, n = positions.shape
    with open(file, "wb") as fh:
        fh.write(struct.pack("<qqd", n, rows - 1, float(dt)))
        fh.write(np.ascontiguousarray(positions, dtype="<f8").tobytes())


def read_positions_dump(file):
    """Inverse of :func:`dump_positions`; returns (dt, positions)."""
    with open(file, "rb") as fh:
        head = fh.read(24)
        if len(head) != 24:
            raise ValueError("truncated dump header")
        n, k, dt = struct.unpack("<qqd", head)
        if n < 1 or k < 0 or dt <= 0.0:
            raise ValueError(f"inconsistent dump header (N={n}, K={k}, dt={dt})")
        body = np.frombuffer(fh.read(), dtype="<f8")
    if body.size != (k + 1) * n:
        raise ValueError("dump body does not match header dimensions")
    return dt, body.reshape(k + 1, n).copy()


def simulate_trajectory(params: ModelParams, v0, n_particles: int, t: float,
                        n_steps: int, seed_id: int, path_index: int = 0,
                        store_stride: int = 1):
    """Run one path and keep the position matrix at strided times.

    Returns (times, positions, alive) with positions[j] the ensemble state
    at times[j]; row 0 is the initial condition. Intended for small N
    diagnostic dumps, not production estimation.
    """
    if store_stride < 1 or n_steps % store_stride:
        raise ValueError("store_stride must divide n_steps")
    common = build_common_path(seed_id, t, n_steps, path_index)
    ens = initialize_ensemble(params, v0, n_particles, seed_id, path_index)
    stored_t = [0.0]
    stored_x = [ens.positions.copy()]
    stored_a = [ens.alive.copy()]
    for k in range(n_steps):
        ens = advance_ensemble(ens, float(common.increments[k]), common.dt)
        if (k + 1) % store_stride == 0:
            stored_t.append(ens.current_time)
            stored_x.append(ens.positions.copy())
            stored_a.append(ens.alive.copy())
    return np.array(stored_t), np.vstack(stored_x), np.vstack(stored_a)
