"""Heat-kernel smoothing on the half line.

Gaussian kernel, its absorbing (image) and reflected variants, closed-form
kernel derivatives through a coefficient recurrence, smoothed fields and
their remainder parts, weighted L2 norms against w_c(x) = x^c exp(-x), and
an energy-balance probe that itemizes the terms produced by applying Ito's
formula to the squared weighted norm of a smoothed solution field.

Sources are duck-typed: anything with ``positions``/``total_count`` is an
empirical measure (exact finite sums, no quadrature error), anything with
``x``/``values`` is a density on a grid (trapezoid quadrature).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import weight_eval

_TWO_PI = 2.0 * math.pi


class GridResolutionError(ValueError):
    """Raised when a quadrature grid cannot resolve the requested integral."""


@dataclass(frozen=True)
class HeatKernelParams:
    delta: float

    def __post_init__(self) -> None:
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")


def gauss_kernel(delta: float, x):
    """Centered Gaussian density with variance delta."""
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x / delta) / math.sqrt(_TWO_PI * delta)
    return out if out.ndim else float(out)


def absorbing_kernel(delta: float, x, y):
    """Image-charge kernel p(x-y) - p(x+y); vanishes on either axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return gauss_kernel(delta, x - y) - gauss_kernel(delta, x + y)


def reflected_kernel(delta: float, x, y):
    """Even-extension kernel p(x-y) + p(x+y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return gauss_kernel(delta, x - y) + gauss_kernel(delta, x + y)


# ---------------------------------------------------------------------------
# derivatives of the Gaussian kernel


@dataclass(frozen=True)
class DerivativeCoeffs:
    """Coefficients c_i of d^n/dx^n p_delta = sum_i c_i x^(2i-n) delta^(-i) p_delta."""

    order_n: int
    coeffs: dict

    def reconstruct(self, delta: float, x):
        x = np.asarray(x, dtype=float)
        p = gauss_kernel(delta, x)
        acc = np.zeros_like(p)
        for i, c in self.coeffs.items():
            acc += c * x ** (2 * i - self.order_n) * delta ** (-i)
        return acc * p


def derivative_coeffs(n: int) -> DerivativeCoeffs:
    """Coefficient table for the n-th Gaussian-kernel derivative.

    Induction: differentiating c x^(2i-n) d^-i p adds the power-rule term
    (2i-n) c x^(2i-n-1) d^-i p and the chain-rule term -c x^(2i-n+1) d^-(i+1) p,
    giving c_i^(n+1) = (2i-n) c_i^n - c_(i-1)^n with c_0^0 = 1.
    """
    if n < 0:
        raise ValueError(f"order must be nonnegative, got {n}")
    coeffs = {0: 1.0}
    for m in range(n):
        nxt: dict = {}
        for i, c in coeffs.items():
            power_term = (2 * i - m) * c
            if power_term != 0.0:
                nxt[i] = nxt.get(i, 0.0) + power_term
            nxt[i + 1] = nxt.get(i + 1, 0.0) - c
        coeffs = {i: c for i, c in nxt.items() if c != 0.0}
    return DerivativeCoeffs(order_n=n, coeffs=coeffs)


def gauss_derivative(delta: float, x, n: int):
    """n-th derivative of the Gaussian kernel, closed form."""
    if n == 0:
        return gauss_kernel(delta, x)
    return derivative_coeffs(n).reconstruct(delta, x)


# ---------------------------------------------------------------------------
# sources and smoothed fields


@dataclass(frozen=True)
class PointSource:
    """Empirical measure: each position carries mass 1/total_count."""

    positions: np.ndarray
    total_count: int


@dataclass(frozen=True)
class GridSource:
    """Density tabulated on a (strictly increasing) grid."""

    x: np.ndarray
    values: np.ndarray


def _resolve_source(source):
    if hasattr(source, "positions"):
        pos = np.asarray(source.positions, dtype=float)
        n_total = int(getattr(source, "total_count", pos.size))
        if n_total <= 0:
            raise ValueError("empirical source needs a positive total count")
        return "empirical", pos, n_total
    if hasattr(source, "x") and hasattr(source, "values"):
        xs = np.asarray(source.x, dtype=float)
        vals = np.asarray(source.values, dtype=float)
        if xs.shape != vals.shape or xs.ndim != 1:
            raise ValueError("grid source needs matching 1-d x/values")
        return "grid", xs, vals
    raise TypeError(
        "source must expose positions/total_count (empirical) or x/values (grid)"
    )


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def _kernel_matrix(delta: float, x_eval: np.ndarray, y: np.ndarray, n: int,
                   reflected: bool) -> np.ndarray:
    """Matrix of d^n/dx^n applied to the absorbing (or reflected) kernel.

    d^n G(x,y) = p^(n)(x-y) -/+ p^(n)(x+y); the reflected kernel flips the
    image sign.
    """
    diff = x_eval[:, None] - y[None, :]
    summ = x_eval[:, None] + y[None, :]
    sign = 1.0 if reflected else -1.0
    return gauss_derivative(delta, diff, n) + sign * gauss_derivative(delta, summ, n)


def _apply_kernel(delta, x_eval, n, reflected, source, chunk=8192):
    kind, a, b = _resolve_source(source)
    out = np.zeros(x_eval.size, dtype=float)
    if kind == "empirical":
        pos, n_total = a, b
        for lo in range(0, pos.size, chunk):
            block = pos[lo : lo + chunk]
            out += _kernel_matrix(delta, x_eval, block, n, reflected).sum(axis=1)
        out /= n_total
    else:
        xs, vals = a, b
        wts = _trapezoid_weights(xs) * vals
        for lo in range(0, xs.size, chunk):
            out += _kernel_matrix(delta, x_eval, xs[lo : lo + chunk], n, reflected) @ wts[lo : lo + chunk]
    return out


@dataclass(frozen=True)
class SmoothedField:
    x: np.ndarray
    values: np.ndarray
    order_n: int
    delta: float
    source_tag: str

    def to_csv(self, path) -> None:
        np.savetxt(
            path,
            np.column_stack([self.x, self.values]),
            delimiter=",",
            header="x,value",
            comments="",
        )


def flatness_bound(delta: float, sup_bound: float, x):
    """Linear-in-x ceiling for a smoothed bounded density near the origin.

    For a source with density bound S, T(x) <= integral of G against S dy
    and expanding 1 - exp(-2xy/delta) <= 2xy/delta inside the Gaussian
    integral gives T(x) <= (2 x S / delta) (x + sqrt(delta / 2 pi)).
    """
    x = np.asarray(x, dtype=float)
    return (2.0 * x * sup_bound / delta) * (x + math.sqrt(delta / _TWO_PI))


def smooth_density(source, delta: float, n: int, x_grid) -> SmoothedField:
    """Smoothed source field T^(n) on x_grid.

    n >= 0 applies the n-th x-derivative of the absorbing kernel; n = -1
    returns the running integral of T^(0) from the origin (cumulative
    trapezoid with the exact T(0) = 0 endpoint).
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if n < -1:
        raise ValueError(f"order must be >= -1, got {n}")
    x_grid = np.asarray(x_grid, dtype=float)
    kind = _resolve_source(source)[0]
    if n == -1:
        # G(0, y) = 0, so anchor the cumulative integral with a virtual origin
        xs = np.concatenate(([0.0], x_grid)) if x_grid[0] > 0.0 else x_grid
        base = _apply_kernel(delta, xs, 0, False, source)
        vals = np.concatenate(([0.0], np.cumsum(0.5 * (base[1:] + base[:-1]) * np.diff(xs))))
        if x_grid[0] > 0.0:
            vals = vals[1:]
        return SmoothedField(x_grid, vals, -1, delta, kind)
    vals = _apply_kernel(delta, x_grid, n, False, source)
    return SmoothedField(x_grid, vals, n, delta, kind)


def smooth_density_reflected(source, delta: float, n: int, x_grid) -> SmoothedField:
    """Reflected-kernel counterpart T^r(n); used by the remainder identity."""
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if n < 0:
        raise ValueError("reflected field is defined for n >= 0")
    x_grid = np.asarray(x_grid, dtype=float)
    vals = _apply_kernel(delta, x_grid, n, True, source)
    return SmoothedField(x_grid, vals, n, delta, _resolve_source(source)[0])


def remainder(source, delta: float, n: int, x_grid) -> SmoothedField:
    """Remainder field R^(n) = T^(n) - T^r(n) = -2 d^n/dx^n of the image part.

    Computed directly from the image term (one kernel pass) rather than by
    subtraction; the identity with T - T^r is a test target.
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if n < -1:
        raise ValueError(f"order must be >= -1, got {n}")
    x_grid = np.asarray(x_grid, dtype=float)
    kind, a, b = _resolve_source(source)

    def image_part(xs):
        out = np.zeros(xs.size, dtype=float)
        if kind == "empirical":
            pos, n_total = a, b
            for lo in range(0, pos.size, 8192):
                block = pos[lo : lo + 8192]
                out += gauss_derivative(
                    delta, xs[:, None] + block[None, :], max(n, 0)
                ).sum(axis=1)
            out /= n_total
        else:
            wts = _trapezoid_weights(a) * b
            out = gauss_derivative(delta, xs[:, None] + a[None, :], max(n, 0)) @ wts
        return -2.0 * out

    if n == -1:
        xs = np.concatenate(([0.0], x_grid)) if x_grid[0] > 0.0 else x_grid
        base = image_part(xs)
        vals = np.concatenate(([0.0], np.cumsum(0.5 * (base[1:] + base[:-1]) * np.diff(xs))))
        if x_grid[0] > 0.0:
            vals = vals[1:]
        return SmoothedField(x_grid, vals, -1, delta, kind)
    return SmoothedField(x_grid, image_part(x_grid), n, delta, kind)


# ---------------------------------------------------------------------------
# evaluation grids and weighted norms


def default_grid(x_max: float, x_min: float = 1e-6, ratio: float = 1.05,
                 splice: float = 0.1, step: float = 0.005) -> np.ndarray:
    """Geometric refinement near the boundary spliced to a uniform far grid."""
    if x_max <= splice:
        raise ValueError("x_max must exceed the splice point")
    n_geo = int(math.ceil(math.log(splice / x_min) / math.log(ratio)))
    geo = x_min * ratio ** np.arange(n_geo + 1)
    geo = geo[geo < splice]
    uni = np.arange(splice, x_max + 0.5 * step, step)
    return np.concatenate([geo, uni])


def weighted_l2_norm(fld, c: float) -> float:
    """Squared weighted L2 norm: trapezoid of (w_c(x) field(x))^2 on the grid.

    Guards against silent truncation: the final trapezoid panel must carry
    less than 1e-8 of the total, and negative exponents require a grid that
    starts at or below 1e-5 and refines geometrically into the boundary.
    A grid node at exactly 0 is allowed only when the field vanishes there
    and c > -1 (then the integrand extends continuously by 0).
    """
    if isinstance(fld, tuple):
        xs, vals = fld
    else:
        xs, vals = fld.x, fld.values
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if xs.ndim != 1 or xs.shape != vals.shape or xs.size < 3:
        raise ValueError("need matching 1-d grid/values with at least 3 points")
    if not np.all(np.isfinite(vals)):
        raise ValueError("field contains non-finite values")

    if xs[0] == 0.0:
        if c <= -1.0 or vals[0] != 0.0:
            raise GridResolutionError(
                "grid node at 0 needs a vanishing field and c > -1"
            )
        g0 = np.concatenate(([0.0], (weight_eval(c, xs[1:]) * vals[1:]) ** 2))
    else:
        g0 = (weight_eval(c, xs) * vals) ** 2

    if c < 0.0:
        x_lead = xs[1] if xs[0] == 0.0 else xs[0]
        x_next = xs[2] if xs[0] == 0.0 else xs[1]
        if x_lead > 1e-5:
            raise GridResolutionError(
                f"negative exponent c={c}: grid must start at or below 1e-5, "
                f"got {x_lead}"
            )
        if (x_next - x_lead) > 0.5 * x_next:
            raise GridResolutionError(
                "negative exponent requires geometric refinement toward 0"
            )

    panels = 0.5 * (g0[1:] + g0[:-1]) * np.diff(xs)
    total = float(panels.sum())
    if total == 0.0:
        return 0.0
    if panels[-1] >= 1e-8 * total:
        raise GridResolutionError(
            f"grid too short: final panel carries {panels[-1] / total:.2e} "
            "of the integral (limit 1e-8)"
        )
    return total


# ---------------------------------------------------------------------------
# energy-balance probe


@dataclass(frozen=True)
class EnergyBalance:
    """Itemized balance for the squared weighted norm of a smoothed field.

    ``terms`` holds the nine named balance entries; ``lhs`` is the
    diffusion-energy side they should reproduce. ``residual`` is
    lhs - sum(terms). Two further pathwise quantities are reported, not
    folded in: the quadratic-variation cross term and the martingale sum,
    whose population means are zero only in expectation.
    """

    terms: dict
    lhs: float
    residual: float
    cross_term: float
    martingale_term: float
    order_n: int
    beta: float
    delta: float

    @property
    def residual_full(self) -> float:
        return self.residual - self.cross_term - self.martingale_term

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["term_name", "value", "residual"])
            wr.writerow(["lhs_diffusion_energy", f"{self.lhs:.17g}", f"{self.residual:.17g}"])
            for k, v in self.terms.items():
                wr.writerow([k, f"{v:.17g}", f"{self.residual:.17g}"])
            wr.writerow(["qv_cross_term", f"{self.cross_term:.17g}", f"{self.residual:.17g}"])
            wr.writerow(["martingale_sum", f"{self.martingale_term:.17g}", f"{self.residual:.17g}"])


def energy_identity_probe(trajectory, delta: float, n: int, beta: float,
                          params, common=None, x_eval: Optional[np.ndarray] = None,
                          time_stride: int = 1) -> EnergyBalance:
    """Evaluate the weighted energy balance along one solved trajectory.

    The trajectory must expose ``x`` (J,), ``times`` (K+1,) and ``values``
    (K+1, J). ``common`` supplies the shared Brownian increments used in the
    pathwise martingale sum; it may be omitted when the common amplitude is
    zero. Time integrals use the trapezoid rule on the stored grid; the
    martingale sum uses left-point evaluation. ``time_stride`` coarsens the
    stored time grid for the deterministic integrals (the martingale sum
    ignores it and always walks every step).
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    if n < 0:
        raise ValueError("probe defined for n >= 0")
    times = np.asarray(trajectory.times, dtype=float)
    v_path = np.asarray(trajectory.values, dtype=float)
    y = np.asarray(trajectory.x, dtype=float)
    if v_path.shape != (times.size, y.size):
        raise ValueError("trajectory values must be shaped (n_times, n_grid)")
    sig_m, sig_i, mu = params.sigma_m, params.sigma_i, params.mu
    if sig_m > 0.0:
        if common is None:
            raise ValueError("common path required when sigma_m > 0")
        inc = np.asarray(common.increments, dtype=float)
        if inc.size != times.size - 1:
            raise ValueError(
                f"common path has {inc.size} increments for {times.size - 1} steps"
            )
        ct = np.asarray(getattr(common, "times", times), dtype=float)
        if ct.size == times.size and not np.allclose(ct, times, atol=1e-12):
            raise ValueError("common path times disagree with trajectory times")
    else:
        inc = np.zeros(times.size - 1)

    if x_eval is None:
        x_eval = default_grid(float(y[-1]))
    x_eval = np.asarray(x_eval, dtype=float)

    c = n - 0.5 * beta
    wq = _trapezoid_weights(x_eval)
    w_c2 = weight_eval(c, x_eval) ** 2
    w_ch2 = weight_eval(c - 0.5, x_eval) ** 2
    w_c12 = weight_eval(c - 1.0, x_eval) ** 2

    # time-independent kernel matrices: fields at all times via one matmul each
    src_w = _trapezoid_weights(y)
    k_n = _kernel_matrix(delta, x_eval, y, n, False) * src_w
    k_n1 = _kernel_matrix(delta, x_eval, y, n + 1, False) * src_w
    k_r1 = -2.0 * gauss_derivative(delta, x_eval[:, None] + y[None, :], n + 1) * src_w

    t_n = v_path @ k_n.T       # (K+1, X)
    t_n1 = v_path @ k_n1.T
    r_n1 = v_path @ k_r1.T

    def norms_sq(fields, w2):
        return (fields * fields * w2) @ wq

    def cross(fa, fb, w2):
        return (fa * fb * w2) @ wq

    sl = slice(None, None, max(int(time_stride), 1))
    t_sub = times[sl]
    if t_sub[-1] != times[-1]:
        t_sub = np.append(t_sub, times[-1])
        subsel = np.append(np.arange(times.size)[sl], times.size - 1)
    else:
        subsel = np.arange(times.size)[sl]

    def t_int(series_full):
        return float(np.trapezoid(series_full[subsel], t_sub))

    sig2 = sig_m**2 + sig_i**2
    norm_c_n = norms_sq(t_n, w_c2)
    norm_ch_n = norms_sq(t_n, w_ch2)
    norm_c1_n = norms_sq(t_n, w_c12)
    norm_c_n1 = norms_sq(t_n1, w_c2)
    norm_c_r1 = norms_sq(r_n1, w_c2)
    cross_tr = cross(t_n, r_n1, w_c2)
    cross_qv = cross(t_n1, r_n1, w_c2)
    mart_integrand = cross(t_n, t_n1 - r_n1, w_c2)

    terms = {
        "initial_norm": float(norm_c_n[0]),
        "final_norm_negated": -float(norm_c_n[-1]),
        "drift_same_weight": -2.0 * mu * t_int(norm_c_n),
        "drift_shifted_weight": 2.0 * mu * c * t_int(norm_ch_n),
        "diffusion_same_weight": 2.0 * sig2 * t_int(norm_c_n),
        "diffusion_shifted_weight": -4.0 * sig2 * c * t_int(norm_ch_n),
        "diffusion_double_shift": 2.0 * sig2 * c * (c - 0.5) * t_int(norm_c1_n),
        "remainder_energy": sig_m**2 * t_int(norm_c_r1),
        "drift_remainder_coupling": 2.0 * mu * t_int(cross_tr),
    }
    lhs = sig_i**2 * t_int(norm_c_n1)
    cross_term = -2.0 * sig_m**2 * t_int(cross_qv)
    martingale = -2.0 * sig_m * float(np.dot(mart_integrand[:-1], inc))
    residual = lhs - sum(terms.values())
    return EnergyBalance(
        terms=terms,
        lhs=lhs,
        residual=residual,
        cross_term=cross_term,
        martingale_term=martingale,
        order_n=n,
        beta=beta,
        delta=delta,
    )
