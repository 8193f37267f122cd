"""Parameters, boundary weights and initial densities for the half-line lab.

The model is a drift-diffusion on (0, infinity) absorbed at the origin, with
a common Brownian driver shared by all particles (amplitude ``sigma_m``) and
an independent idiosyncratic driver per particle (amplitude ``sigma_i``).
This module holds the parameter container and its derived corner geometry,
the power-exponential weight family used by the weighted-norm experiments,
and a small catalog of initial densities with exact CDFs so that particle
positions can be drawn by inverse-CDF sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri


def wedge_angle(rho: float) -> float:
    """Opening angle of the planar cone obtained by whitening a correlated
    pair of Brownian coordinates killed on leaving the quadrant.

    Args:
        rho: correlation of the two coordinates, in [0, 1).

    Returns:
        pi/2 + arcsin(rho), in [pi/2, pi).
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"correlation must lie in [0, 1), got {rho}")
    return 0.5 * math.pi + math.asin(rho)


@dataclass(frozen=True)
class Geometry:
    rho: float
    alpha: float
    critical_beta: float


def derive_geometry(sigma_m: float, sigma_i: float) -> Geometry:
    """Corner geometry derived from the two noise amplitudes.

    rho is the common-to-total amplitude ratio sigma_m / sqrt(sigma_m^2 +
    sigma_i^2), alpha = pi/2 + arcsin(rho) and the critical weight exponent
    is pi/alpha - 1. Rejects sigma_i <= 0 (the idiosyncratic driver must be
    nondegenerate) and sigma_m < 0.
    """
    if sigma_i <= 0.0:
        raise ValueError(f"sigma_i must be positive, got {sigma_i}")
    if sigma_m < 0.0:
        raise ValueError(f"sigma_m must be nonnegative, got {sigma_m}")
    rho = sigma_m / math.hypot(sigma_m, sigma_i)
    alpha = wedge_angle(rho)
    return Geometry(rho=rho, alpha=alpha, critical_beta=math.pi / alpha - 1.0)


@dataclass(frozen=True)
class ModelParams:
    """Immutable coefficient set for one run.

    Attributes:
        mu: drift.
        sigma_m: common-noise amplitude, >= 0.
        sigma_i: idiosyncratic amplitude, > 0.
        horizon: terminal time T, > 0.
    """

    mu: float
    sigma_m: float
    sigma_i: float
    horizon: float

    def __post_init__(self) -> None:
        if self.sigma_i <= 0.0:
            raise ValueError(f"sigma_i must be positive, got {self.sigma_i}")
        if self.sigma_m < 0.0:
            raise ValueError(f"sigma_m must be nonnegative, got {self.sigma_m}")
        if self.horizon <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def total_variance_rate(self) -> float:
        return self.sigma_m**2 + self.sigma_i**2

    @property
    def rho(self) -> float:
        return self.sigma_m / math.sqrt(self.total_variance_rate)

    @property
    def alpha(self) -> float:
        return wedge_angle(self.rho)

    @property
    def critical_beta(self) -> float:
        return math.pi / self.alpha - 1.0

    @property
    def pair_correlation(self) -> float:
        """Correlation of two solution samples driven by the same common noise.

        Two particles sharing the common driver but carrying independent
        idiosyncratic noise have covariance sigma_m^2 t and variance
        (sigma_m^2 + sigma_i^2) t each, so their correlation is rho**2, not
        rho. Second-moment comparisons against the planar-cone analytics must
        use this value for the cone parameter.
        """
        return self.sigma_m**2 / self.total_variance_rate

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.rho, self.alpha, self.critical_beta)


def params_for_pair_correlation(
    pair_rho: float, mu: float = 0.0, sigma_i: float = 1.0, horizon: float = 1.0
) -> ModelParams:
    """Coefficients whose two-sample correlation equals ``pair_rho``.

    Solves sigma_m^2 / (sigma_m^2 + sigma_i^2) = pair_rho for sigma_m at the
    given sigma_i.
    """
    if not 0.0 <= pair_rho < 1.0:
        raise ValueError(f"pair correlation must lie in [0, 1), got {pair_rho}")
    sigma_m = sigma_i * math.sqrt(pair_rho / (1.0 - pair_rho))
    return ModelParams(mu=mu, sigma_m=sigma_m, sigma_i=sigma_i, horizon=horizon)


# ---------------------------------------------------------------------------
# boundary weights


def weight_eval(c: float, x):
    """Evaluate the boundary weight w_c(x) = x**c * exp(-x) for x > 0.

    Computed as exp(c*log(x) - x) so that negative exponents at tiny x stay
    inside float range (no overflow down to x = 1e-12 for |c| <= 8).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("weight is defined for x > 0 only")
    out = np.exp(c * np.log(x) - x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class WeightFunction:
    """The weight w_c(x) = x**c exp(-x) as a callable with its exponent."""

    exponent_c: float

    def __call__(self, x):
        return weight_eval(self.exponent_c, x)


# ---------------------------------------------------------------------------
# initial densities

_NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class InitialDensity:
    """A compactly supported probability density on (0, infinity).

    The density is described by closed-form pdf/cdf/inverse-cdf callables so
    sampling is exact. ``sup_bound`` is the essential supremum and
    ``x_min``/``x_max`` bracket the support.
    """

    kind: str
    x_min: float
    x_max: float
    sup_bound: float
    _pdf: Callable = field(repr=False)
    _cdf: Callable = field(repr=False)
    _inv_cdf: Callable = field(repr=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.x_min < self.x_max:
            raise ValueError("support must satisfy 0 <= x_min < x_max")
        # normalization audit on a fine grid; closed forms should be exact
        total = float(self._cdf(np.array([self.x_max]))[0])
        if abs(total - 1.0) > _NORMALIZATION_TOL:
            raise ValueError(
                f"density integrates to {total!r}, off by more than {_NORMALIZATION_TOL}"
            )

    def pdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self._pdf(x)

    def cdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self._cdf(x)

    def inv_cdf(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((u < 0.0) | (u > 1.0)):
            raise ValueError("inverse CDF argument must lie in [0, 1]")
        return self._inv_cdf(u)

    def interval_mass(self, lo: float, hi: float) -> float:
        lo_c, hi_c = self.cdf(np.array([lo, hi]))
        return float(hi_c - lo_c)

    def truncate_below(self, a: float) -> "TruncatedDensity":
        """Sub-probability start obtained by deleting all mass below ``a``."""
        return TruncatedDensity(base=self, cut=a)


@dataclass(frozen=True)
class TruncatedDensity:
    """V0 restricted to (cut, infinity), kept as a sub-probability measure.

    Sampling shares the parent's inverse CDF: a uniform draw below the
    parent CDF at the cut means the particle is never born. With shared
    seeds this couples the truncated system under the full one pathwise.
    """

    base: InitialDensity
    cut: float

    @property
    def birth_threshold(self) -> float:
        return float(self.base.cdf(np.array([self.cut]))[0])

    @property
    def x_max(self) -> float:
        return self.base.x_max

    @property
    def sup_bound(self) -> float:
        return self.base.sup_bound


def uniform_interval(a: float, b: float) -> InitialDensity:
    """Uniform density on (a, b), 0 <= a < b."""
    if not 0.0 <= a < b:
        raise ValueError(f"need 0 <= a < b, got ({a}, {b})")
    h = 1.0 / (b - a)

    def pdf(x):
        return np.where((x > a) & (x < b), h, 0.0)

    def cdf(x):
        return np.clip((x - a) * h, 0.0, 1.0)

    def inv(u):
        return a + u * (b - a)

    return InitialDensity("uniform-interval", a, b, h, pdf, cdf, inv)


def step_density(a: float, mid: float, b: float, left_mass: float) -> InitialDensity:
    """Two-level histogram density: mass ``left_mass`` spread on (a, mid) and
    the rest on (mid, b)."""
    if not (0.0 <= a < mid < b):
        raise ValueError(f"need 0 <= a < mid < b, got ({a}, {mid}, {b})")
    if not 0.0 < left_mass < 1.0:
        raise ValueError("left_mass must lie strictly between 0 and 1")
    h1 = left_mass / (mid - a)
    h2 = (1.0 - left_mass) / (b - mid)

    def pdf(x):
        out = np.zeros_like(x)
        out[(x > a) & (x <= mid)] = h1
        out[(x > mid) & (x < b)] = h2
        return out

    def cdf(x):
        left = np.clip((x - a) * h1, 0.0, left_mass)
        right = np.clip((x - mid) * h2, 0.0, 1.0 - left_mass)
        return left + right

    def inv(u):
        lo = a + u / h1
        hi = mid + (u - left_mass) / h2
        return np.where(u <= left_mass, lo, hi)

    return InitialDensity("step", a, b, max(h1, h2), pdf, cdf, inv)


def truncated_gaussian(center: float, width: float, lo: float, hi: float) -> InitialDensity:
    """Gaussian bump restricted and renormalized to (lo, hi) with lo >= 0."""
    if width <= 0.0:
        raise ValueError("width must be positive")
    if not 0.0 <= lo < hi:
        raise ValueError(f"need 0 <= lo < hi, got ({lo}, {hi})")
    z_lo = (lo - center) / width
    z_hi = (hi - center) / width
    mass = ndtr(z_hi) - ndtr(z_lo)
    if mass <= 0.0:
        raise ValueError("window carries no Gaussian mass")

    def pdf(x):
        z = (x - center) / width
        vals = np.exp(-0.5 * z * z) / (width * math.sqrt(2.0 * math.pi) * mass)
        return np.where((x > lo) & (x < hi), vals, 0.0)

    def cdf(x):
        z = np.clip((x - center) / width, z_lo, z_hi)
        return (ndtr(z) - ndtr(z_lo)) / mass

    def inv(u):
        return center + width * ndtri(ndtr(z_lo) + u * mass)

    peak = pdf(np.array([min(max(center, lo), hi)]))[0]
    sup = float(max(peak, pdf(np.array([lo + 1e-12]))[0], pdf(np.array([hi - 1e-12]))[0]))
    return InitialDensity("truncated-gaussian", lo, hi, sup, pdf, cdf, inv)


def tabulated_grid(xs, vals, normalize: bool = False) -> InitialDensity:
    """Piecewise-linear density through the nodes (xs, vals).

    The CDF is the exact integral of the linear interpolant (piecewise
    quadratic); sampling inverts it cell by cell. With ``normalize`` the
    node values are rescaled so the trapezoid integral is exactly 1.
    """
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if xs.ndim != 1 or xs.shape != vals.shape or xs.size < 2:
        raise ValueError("need matching 1-d arrays with at least two nodes")
    if np.any(np.diff(xs) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if xs[0] < 0.0:
        raise ValueError("support must lie in [0, infinity)")
    if np.any(vals < 0.0):
        raise ValueError("density values must be nonnegative")
    total = float(np.trapezoid(vals, xs))
    if normalize:
        if total <= 0.0:
            raise ValueError("cannot normalize a zero table")
        vals = vals / total
        total = 1.0
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(xs))))
    # kill accumulated rounding so the last node is exactly the total mass
    cum[-1] = total

    def pdf(x):
        inside = (x >= xs[0]) & (x <= xs[-1])
        return np.where(inside, np.interp(x, xs, vals), 0.0)

    def cdf(x):
        xc = np.clip(x, xs[0], xs[-1])
        idx = np.clip(np.searchsorted(xs, xc, side="right") - 1, 0, xs.size - 2)
        dx = xc - xs[idx]
        slope = (vals[idx + 1] - vals[idx]) / (xs[idx + 1] - xs[idx])
        return cum[idx] + vals[idx] * dx + 0.5 * slope * dx * dx

    def inv(u):
        target = u * total
        idx = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, xs.size - 2)
        width = xs[idx + 1] - xs[idx]
        a_coef = 0.5 * (vals[idx + 1] - vals[idx]) / width
        b_coef = vals[idx]
        c_coef = cum[idx] - target
        # solve a t^2 + b t + c = 0 for t in [0, width]; stable branch
        disc = np.maximum(b_coef * b_coef - 4.0 * a_coef * c_coef, 0.0)
        lin = np.where(b_coef > 0.0, -c_coef / np.where(b_coef == 0.0, 1.0, b_coef), 0.0)
        quad = (-b_coef + np.sqrt(disc)) / np.where(a_coef == 0.0, 1.0, 2.0 * a_coef)
        t = np.where(np.abs(a_coef) * width < 1e-14 * np.maximum(b_coef, 1e-300), lin, quad)
        return xs[idx] + np.clip(t, 0.0, width)

    return InitialDensity("tabulated-grid", float(xs[0]), float(xs[-1]), float(vals.max()), pdf, cdf, inv)


def catalog() -> dict:
    """Default instance of each supported initial-density kind."""
    xs = np.linspace(0.5, 2.5, 81)
    bump = np.maximum(0.0, 1.0 - ((xs - 1.5) / 0.9) ** 2) ** 2
    return {
        "uniform-interval": uniform_interval(1.0, 2.0),
        "step": step_density(0.6, 1.2, 2.2, 0.35),
        "truncated-gaussian": truncated_gaussian(1.5, 0.25, 0.7, 2.5),
        "tabulated-grid": tabulated_grid(xs, bump, normalize=True),
    }
