"""Command-line front end: one entry point, seven experiment types.

Configuration is a flat ``key = value`` text file plus command-line
overrides (``--key=value`` or ``--key value`` for any config key). Every
field is validated before any computation starts. Each run writes its
output files plus ``manifest.txt`` into the output directory; feeding that
manifest back through ``--config`` reproduces the outputs byte for byte.

Exit codes: 0 success, 2 invalid configuration (the error record names the
offending field), 3 numerical refusal (stability budget or series
truncation), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .fdsolver import (CFLError, default_extent, solve_spde_path,
                       write_grid_csv, write_grid_dump)
from .model import (ModelParams, catalog, params_for_pair_correlation,
                    wedge_angle)
from .particles import build_common_path, dump_positions, simulate_trajectory
from .regularity import (SharpnessConfig, fit_corner_exponent, log_uniform_eps,
                         pair_cone_angle, pair_critical_beta,
                         remainder_decay_scan, series_corner_masses,
                         sharpness_report, simulate_norm_scan_levels,
                         weighted_norm_scan, write_run_manifest)
from .wedge import TruncationError, tabulate_corner_envelope

EXPERIMENTS = ("simulate", "solve", "wedge-tab", "exponent-fit", "sharpness",
               "norm-scan", "remainder-scan")

_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; carries the field it blames."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# ---------------------------------------------------------------------------
# value parsing


def _as_float(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}")
    if not math.isfinite(val):
        raise ConfigError(f"must be finite, got {text!r}")
    return val


def _as_int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ConfigError(f"not an integer: {text!r}")


def _as_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _as_float_list(text: str):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty list")
    return [_as_float(p) for p in parts]


def _as_str(text: str) -> str:
    return text.strip()


def _canon(value) -> str:
    """Canonical manifest spelling; round-trips through the parsers."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


# ---------------------------------------------------------------------------
# schemas

_MODEL_KEYS = {
    "mu": (_as_float, None, 0.0),
    "sigma_m": (_as_float, lambda v: v >= 0.0, None),
    "sigma_i": (_as_float, lambda v: v > 0.0, 1.0),
    "rho": (_as_float, lambda v: 0.0 <= v < 1.0, None),
    "horizon": (_as_float, lambda v: v > 0.0, 1.0),
}

_V0_KEY = {
    "v0": (_as_str, lambda v: v in catalog(), "uniform-interval"),
}

_EPS_KEYS = {
    "eps_lo": (_as_float, lambda v: v > 0.0, 1e-3),
    "eps_hi": (_as_float, lambda v: v > 0.0, 1e-1),
    "n_eps": (_as_int, lambda v: v >= 5, 12),
}

SCHEMAS = {
    "simulate": {
        **_MODEL_KEYS, **_V0_KEY,
        "n_particles": (_as_int, lambda v: v >= 1, 2000),
        "t": (_as_float, lambda v: v > 0.0, None),
        "n_steps": (_as_int, lambda v: v >= 1, 512),
        "store_stride": (_as_int, lambda v: v >= 1, 8),
        "path_index": (_as_int, lambda v: v >= 0, 0),
    },
    "solve": {
        **_MODEL_KEYS, **_V0_KEY,
        "n_steps": (_as_int, lambda v: v >= 1, 512),
        "store_every": (_as_int, lambda v: v >= 1, 8),
        "dx": (_as_float, lambda v: v > 0.0, None),
        "x_right": (_as_float, lambda v: v > 0.0, None),
        "path_index": (_as_int, lambda v: v >= 0, 0),
        "csv_x_stride": (_as_int, lambda v: v >= 1, 16),
        "csv_t_stride": (_as_int, lambda v: v >= 1, 1),
    },
    "wedge-tab": {
        "rho": (_as_float, lambda v: 0.0 <= v < 1.0, _REQUIRED),
        "start_x": (_as_float, lambda v: v > 0.0, 1.0),
        "start_y": (_as_float, lambda v: v > 0.0, 1.0),
        "ts": (_as_float_list, lambda v: all(t > 0.0 for t in v),
               [0.25, 0.5, 1.0]),
        "beta": (_as_float, lambda v: v > 0.0, None),
        **_EPS_KEYS,
    },
    "exponent-fit": {
        **_MODEL_KEYS,
        "start": (_as_float, lambda v: v > 0.0, 1.0),
        "t": (_as_float, lambda v: v > 0.0, 1.0),
        **_EPS_KEYS,
    },
    "sharpness": {
        **_MODEL_KEYS, **_V0_KEY,
        "beta": (_as_float, lambda v: v > 0.0, None),
        "t": (_as_float, lambda v: v > 0.0, 1.0),
        "tolerance": (_as_float, lambda v: v > 0.0, 0.05),
        "include_mc": (_as_bool, None, False),
        "mc_eps_lo": (_as_float, lambda v: v > 0.0, 0.05),
        "mc_eps_hi": (_as_float, lambda v: v > 0.0, 0.5),
        "n_particles": (_as_int, lambda v: v >= 1000, 20_000),
        "m_paths": (_as_int, lambda v: v >= 10, 16),
        "n_steps": (_as_int, lambda v: v >= 1, 512),
        **_EPS_KEYS,
    },
    "norm-scan": {
        **_MODEL_KEYS, **_V0_KEY,
        "k": (_as_int, lambda v: 0 <= v <= 3, 0),
        "betas": (_as_float_list, lambda v: all(b > 0.0 for b in v), None),
        "n_levels": (_as_int, lambda v: v >= 1, 3),
        "base_steps": (_as_int, lambda v: v >= 1, 256),
        "base_cells": (_as_int, lambda v: v >= 2, 1024),
        "m_paths": (_as_int, lambda v: v >= 1, 8),
        "collars": (_as_float_list, lambda v: all(c > 0.0 for c in v), None),
        "store_every": (_as_int, lambda v: v >= 1, None),
        "x_right": (_as_float, lambda v: v > 0.0, None),
    },
    "remainder-scan": {
        **_MODEL_KEYS, **_V0_KEY,
        "n": (_as_int, lambda v: v >= 0, 0),
        "beta": (_as_float, lambda v: v > 0.0, None),
        "deltas": (_as_float_list, lambda v: all(d > 0.0 for d in v),
                   [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125,
                    0.0015625]),
        "t": (_as_float, lambda v: v > 0.0, None),
        "n_paths": (_as_int, lambda v: v >= 1, 4),
        "n_steps": (_as_int, lambda v: v >= 1, 256),
        "store_every": (_as_int, lambda v: v >= 1, 16),
    },
}

_GLOBAL_KEYS = {
    "seed": (_as_int, lambda v: v >= 0, 0),
    "threads": (_as_int, lambda v: v >= 1, None),
}


def resolve_config(experiment: str, raw: dict) -> dict:
    """Parse and range-check every raw string; fill defaults.

    Unknown keys are rejected by name. ``content_hash`` is tolerated and
    dropped so a manifest can be re-fed directly as a config file.
    """
    if experiment not in SCHEMAS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; choose from "
            + ", ".join(EXPERIMENTS), field="experiment")
    schema = {**SCHEMAS[experiment], **_GLOBAL_KEYS}
    resolved = {"experiment": experiment}
    for key, text in raw.items():
        if key in ("experiment", "content_hash"):
            continue
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment "
                              f"{experiment}", field=key)
        parse, check, _ = schema[key]
        try:
            value = parse(text)
        except ConfigError as err:
            raise ConfigError(f"{key}: {err}", field=key)
        if check is not None and not check(value):
            raise ConfigError(f"{key} = {text} is out of range", field=key)
        resolved[key] = value
    for key, (_, _, default) in schema.items():
        if key in resolved:
            continue
        if default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}", field=key)
        if default is not None:
            resolved[key] = default
    if "threads" not in resolved:
        resolved["threads"] = os.cpu_count() or 1
    return resolved


def _build_params(cfg: dict) -> ModelParams:
    has_rho = "rho" in cfg
    has_sm = "sigma_m" in cfg
    if has_rho == has_sm:
        raise ConfigError(
            "model needs exactly one of rho (pair correlation) or sigma_m",
            field="rho" if has_rho else "sigma_m")
    if has_rho:
        return params_for_pair_correlation(cfg["rho"], mu=cfg["mu"],
                                           sigma_i=cfg["sigma_i"],
                                           horizon=cfg["horizon"])
    return ModelParams(mu=cfg["mu"], sigma_m=cfg["sigma_m"],
                       sigma_i=cfg["sigma_i"], horizon=cfg["horizon"])


# ---------------------------------------------------------------------------
# output helpers


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(c) for c in row) + "\n")


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return repr(float(value))


# ---------------------------------------------------------------------------
# experiment runners


def _run_simulate(cfg: dict, out: Path) -> None:
    params = _build_params(cfg)
    v0 = catalog()[cfg["v0"]]
    t = cfg.get("t", params.horizon)
    cfg["t"] = t
    if cfg["n_steps"] % cfg["store_stride"]:
        raise ConfigError("store_stride must divide n_steps",
                          field="store_stride")
    times, positions, alive = simulate_trajectory(
        params, v0, cfg["n_particles"], t, cfg["n_steps"], cfg["seed"],
        path_index=cfg["path_index"], store_stride=cfg["store_stride"])
    killed = np.where(alive, positions, 0.0)
    dump_positions(out / "positions.bin", float(times[1] - times[0]), killed)
    frac = alive.mean(axis=1)
    mean_pos = np.where(frac > 0.0,
                        killed.sum(axis=1) / np.maximum(alive.sum(axis=1), 1),
                        0.0)
    _write_csv(out / "simulate_summary.csv",
               ["t", "alive_fraction", "mean_alive_position"],
               zip(times, frac, mean_pos))


def _run_solve(cfg: dict, out: Path) -> None:
    params = _build_params(cfg)
    v0 = catalog()[cfg["v0"]]
    if cfg["n_steps"] % cfg["store_every"]:
        raise ConfigError("store_every must divide n_steps",
                          field="store_every")
    common = build_common_path(cfg["seed"], params.horizon, cfg["n_steps"],
                               path_index=cfg["path_index"])
    traj = solve_spde_path(params, v0, common, dx=cfg.get("dx"),
                           store_every=cfg["store_every"],
                           x_right=cfg.get("x_right"))
    write_grid_dump(out / "solution.bin", traj)
    write_grid_csv(out / "solution.csv", traj, cfg["csv_x_stride"],
                   cfg["csv_t_stride"])


def _run_wedge_tab(cfg: dict, out: Path) -> None:
    alpha = wedge_angle(cfg["rho"])
    limit = math.pi / alpha - 1.0
    beta = cfg.get("beta", 0.5 * limit)
    if not 0.0 < beta < limit:
        raise ConfigError(
            f"beta must lie in (0, {limit:.4f}) at rho = {cfg['rho']}",
            field="beta")
    cfg["beta"] = beta
    if cfg["eps_hi"] <= cfg["eps_lo"]:
        raise ConfigError("eps_hi must exceed eps_lo", field="eps_hi")
    eps = log_uniform_eps(cfg["eps_lo"], cfg["eps_hi"], cfg["n_eps"])
    rows = tabulate_corner_envelope(cfg["rho"],
                                    (cfg["start_x"], cfg["start_y"]),
                                    cfg["ts"], eps, beta)
    _write_csv(out / "wedge_table.csv",
               ["eps", "t", "corner_mass", "envelope"], rows)


def _run_exponent_fit(cfg: dict, out: Path) -> None:
    params = _build_params(cfg)
    if cfg["eps_hi"] <= cfg["eps_lo"]:
        raise ConfigError("eps_hi must exceed eps_lo", field="eps_hi")
    if not cfg["t"] <= params.horizon:
        raise ConfigError("t must not exceed the horizon", field="t")
    eps = log_uniform_eps(cfg["eps_lo"], cfg["eps_hi"], cfg["n_eps"])
    start = (cfg["start"], cfg["start"])
    masses = series_corner_masses(params, start, cfg["t"], eps)
    fit = fit_corner_exponent(masses, eps)
    _write_csv(out / "corner_masses.csv", ["eps", "mass"],
               zip(eps, masses))
    reference = 2.0 + math.pi / pair_cone_angle(params)
    _write_csv(out / "exponent_fit.csv",
               ["slope", "intercept", "stderr_slope", "r_squared",
                "n_points", "reference_slope"],
               [(fit.slope, fit.intercept, fit.stderr_slope, fit.r_squared,
                 fit.n_points, reference)])


def _run_sharpness(cfg: dict, out: Path) -> None:
    params = _build_params(cfg)
    v0 = catalog()[cfg["v0"]]
    limit = pair_critical_beta(params)
    beta = cfg.get("beta", limit - 0.1)
    if not 0.0 < beta < limit:
        raise ConfigError(
            f"beta must lie in (0, {limit:.4f}); pass beta explicitly",
            field="beta")
    cfg["beta"] = beta
    if cfg["eps_hi"] <= cfg["eps_lo"]:
        raise ConfigError("eps_hi must exceed eps_lo", field="eps_hi")
    if cfg["mc_eps_hi"] <= cfg["mc_eps_lo"]:
        raise ConfigError("mc_eps_hi must exceed mc_eps_lo",
                          field="mc_eps_hi")
    if not cfg["t"] <= params.horizon:
        raise ConfigError("t must not exceed the horizon", field="t")
    sc = SharpnessConfig(beta=beta, t=cfg["t"], eps_lo=cfg["eps_lo"],
                         eps_hi=cfg["eps_hi"], n_eps=cfg["n_eps"],
                         tolerance=cfg["tolerance"],
                         include_mc=cfg["include_mc"],
                         mc_eps_lo=cfg["mc_eps_lo"],
                         mc_eps_hi=cfg["mc_eps_hi"],
                         n_particles=cfg["n_particles"],
                         m_paths=cfg["m_paths"], n_steps=cfg["n_steps"],
                         seed_id=cfg["seed"], workers=cfg["threads"])
    rep = sharpness_report(params, v0, sc)
    mc = rep.mc_fit
    _write_csv(out / "sharpness.csv",
               ["window_lo", "window_hi", "series_slope", "series_stderr",
                "series_upper_ok", "series_lower_ok", "mc_slope",
                "mc_stderr", "mc_upper_ok", "mc_lower_ok", "passed"],
               [(rep.window[0], rep.window[1], rep.series_fit.slope,
                 rep.series_fit.stderr_slope, rep.series_upper_ok,
                 rep.series_lower_ok,
                 None if mc is None else mc.slope,
                 None if mc is None else mc.stderr_slope,
                 rep.mc_upper_ok, rep.mc_lower_ok, rep.passed)])


def _run_norm_scan(cfg: dict, out: Path) -> None:
    params = _build_params(cfg)
    v0 = catalog()[cfg["v0"]]
    critical = pair_critical_beta(params)
    betas = cfg.get("betas")
    if betas is None:
        betas = [critical - 0.2, critical + 0.2]
        if betas[0] <= 0.0:
            raise ConfigError(
                "default betas need pair critical beta > 0.2; pass betas",
                field="betas")
    cfg["betas"] = betas
    n_levels = cfg["n_levels"]
    collars = cfg.get("collars")
    if collars is None:
        collars = [0.2 / 2**l for l in range(n_levels)]
    cfg["collars"] = collars
    if len(collars) != n_levels:
        raise ConfigError("need one collar per level", field="collars")
    if any(c2 >= c1 for c1, c2 in zip(collars, collars[1:])):
        raise ConfigError("collars must be strictly decreasing",
                          field="collars")
    x_right = cfg.get("x_right") or default_extent(params, v0.x_max)
    cfg["x_right"] = x_right
    for lvl, collar in enumerate(collars):
        dx_lvl = x_right / (cfg["base_cells"] * 2**lvl)
        if collar <= dx_lvl:
            raise ConfigError(
                f"collar {collar} at level {lvl} does not clear its grid "
                f"step {dx_lvl:.3e}", field="collars")
    levels = simulate_norm_scan_levels(params, v0, n_levels,
                                       base_steps=cfg["base_steps"],
                                       base_cells=cfg["base_cells"],
                                       m_paths=cfg["m_paths"],
                                       seed_id=cfg["seed"],
                                       store_every=cfg.get("store_every"),
                                       x_right=x_right)
    scan = weighted_norm_scan(levels, cfg["k"], betas, collars)
    ratios = scan.growth_ratios()
    rows = []
    for i, beta in enumerate(betas):
        for lvl in range(n_levels):
            rows.append((cfg["k"], beta, lvl, collars[lvl],
                         scan.estimates[i, lvl],
                         None if lvl == 0 else ratios[i, lvl - 1]))
    _write_csv(out / "norm_scan.csv",
               ["k", "beta", "level", "collar", "estimate", "ratio"], rows)


def _run_remainder_scan(cfg: dict, out: Path) -> None:
    params = _build_params(cfg)
    v0 = catalog()[cfg["v0"]]
    limit = pair_critical_beta(params)
    beta = cfg.get("beta", limit - 0.1)
    if not 0.0 < beta < limit:
        raise ConfigError(
            f"beta must lie in (0, {limit:.4f}); pass beta explicitly",
            field="beta")
    cfg["beta"] = beta
    deltas = cfg["deltas"]
    if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
        raise ConfigError("deltas must be strictly decreasing",
                          field="deltas")
    t = cfg.get("t", params.horizon)
    cfg["t"] = t
    if not 0.0 < t <= params.horizon:
        raise ConfigError("t must lie in (0, horizon]", field="t")
    if cfg["n_steps"] % cfg["store_every"]:
        raise ConfigError("store_every must divide n_steps",
                          field="store_every")
    values = remainder_decay_scan(params, v0, cfg["n"], beta, deltas, t=t,
                                  n_paths=cfg["n_paths"],
                                  n_steps=cfg["n_steps"],
                                  store_every=cfg["store_every"],
                                  seed_id=cfg["seed"])
    _write_csv(out / "remainder_scan.csv", ["delta", "value"],
               zip(deltas, values))


_RUNNERS = {
    "simulate": _run_simulate,
    "solve": _run_solve,
    "wedge-tab": _run_wedge_tab,
    "exponent-fit": _run_exponent_fit,
    "sharpness": _run_sharpness,
    "norm-scan": _run_norm_scan,
    "remainder-scan": _run_remainder_scan,
}


# ---------------------------------------------------------------------------
# argv plumbing


def _read_config_file(path: str) -> dict:
    cfg = {}
    with open(path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line without '=': {line!r}")
            key, value = [part.strip() for part in line.split("=", 1)]
            cfg[key] = value
    return cfg


def _fold_overrides(rest) -> dict:
    overrides = {}
    i = 0
    while i < len(rest):
        token = rest[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            key = body
            if i + 1 >= len(rest) or rest[i + 1].startswith("--"):
                raise ConfigError(f"flag --{key} needs a value", field=key)
            value = rest[i + 1]
            i += 2
        if not key:
            raise ConfigError(f"malformed flag {token!r}")
        overrides[key.replace("-", "_")] = value
    return overrides


def _emit_error(kind: str, message: str, field=None) -> None:
    record = {"error": kind, "field": field, "message": message}
    sys.stderr.write(json.dumps(record) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="halfline", allow_abbrev=False,
        description="Half-line SPDE experiments: particle runs, grid "
                    "solves, cone tables, exponent fits, sharpness and "
                    "norm/remainder scans.")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--experiment", help="one of: " + ", ".join(EXPERIMENTS))
    parser.add_argument("--seed", help="base seed (unsigned integer)")
    parser.add_argument("--threads", help="worker threads for outer paths")
    parser.add_argument("--out", help="output directory", required=False)
    ns, rest = parser.parse_known_args(argv)

    try:
        raw = {}
        if ns.config:
            raw.update(_read_config_file(ns.config))
        raw.update(_fold_overrides(rest))
        for flag in ("experiment", "seed", "threads"):
            value = getattr(ns, flag)
            if value is not None:
                raw[flag] = value
        experiment = raw.pop("experiment", None)
        if experiment is None:
            raise ConfigError("an experiment must be named (--experiment)",
                              field="experiment")
        if ns.out is None:
            raise ConfigError("an output directory is required (--out)",
                              field="out")
        cfg = resolve_config(experiment, raw)
    except ConfigError as err:
        _emit_error("invalid-config", str(err), getattr(err, "field", None))
        return 2
    except OSError as err:
        _emit_error("io-failure", str(err))
        return 4

    out = Path(ns.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _RUNNERS[experiment](cfg, out)
        manifest = {k: _canon(v) for k, v in cfg.items()}
        write_run_manifest(out / "manifest.txt", manifest)
    except ConfigError as err:
        _emit_error("invalid-config", str(err), getattr(err, "field", None))
        return 2
    except (CFLError, TruncationError) as err:
        _emit_error("numerical-refusal", str(err))
        return 3
    except ValueError as err:
        _emit_error("invalid-config", str(err))
        return 2
    except OSError as err:
        _emit_error("io-failure", str(err))
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
