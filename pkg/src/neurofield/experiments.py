"""Experiment runner: one spec file in, a directory of CSVs plus ``manifest.json`` out.

Each kind has desk-scale and paper-scale defaults for its params; values set
under ``params`` in the spec win over both.  Model keys under ``model`` are
applied on top of the kind's default model (see :mod:`neurofield.config`);
kinds that sweep presets take the preset names from ``params.presets`` and
apply the remaining model keys to every preset.

Every stochastic work item gets its own seed ``derive_seed(seed, ...)``
keyed by its position in the sweep, so results do not depend on the
worker count (``NEUROFIELD_WORKERS``) or on scheduling.  CSV floats are
written with ``repr`` and rows in sweep order, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .branching import BranchingParams, StopTime, empirical_cv_check
from .config import ExperimentSpec, model_from_dict, model_to_dict
from .meanfield import (
    SolverError, build_linear_system, net_current_gain, relative_errors, solve_linear,
    solve_periodic, solve_quadratic,
)
from .mfe import (
    MfeParams, event_size, limit_oracle_errors, limit_r_i, sweep_tau_i,
    theorem_constants, verify_limit_theorem,
)
from .model import (
    PRESETS, TYPES, ConfigError, E, I, ModelConfig, TimeConstants,
    neighbor_probabilities,
)
from .rng import derive_seed
from .simulator import (
    INIT_MODES, InitSpec, SpikeLog, default_backend, simulate, worker_count,
    write_accounting_csv, write_spikes_csv,
)
from .statistics import (
    CorrelationResult, coefficient_of_variation, correlate, first_event_size,
    firing_rates, pooled_correlation, pooled_miss_fraction,
)

log = logging.getLogger(__name__)

ALL_PRESETS = ("SYN", "HOM", "REG1", "REG2", "REG3")
LAMBDAS = [1000.0 * k for k in range(1, 9)]
C_FIGURE = 2.0 / 15.0   # gate-filling rate used for the MFE figure experiments


def _tau_grid(lo: float, hi: float, step: float) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + k * step, 10) for k in range(n + 1)]


# param -> (desk default, paper default)
KINDS: dict[str, dict[str, tuple[Any, Any]]] = {
    "raster": {
        "duration_ms": (1000.0, 2000.0),
        "burn_in_ms": (0.0, 0.0),
        "init": ("all-zero", "all-zero"),
    },
    "rate-sweep": {
        "presets": (list(ALL_PRESETS), list(ALL_PRESETS)),
        "lambdas": (LAMBDAS, LAMBDAS),
        "duration_ms": (2000.0, 10000.0),
        "burn_in_ms": (500.0, 500.0),
        "trajectories": (1, 4),
        "init": ("all-zero", "all-zero"),
    },
    "meanfield-compare": {
        "presets": (list(ALL_PRESETS), list(ALL_PRESETS)),
        "lambdas": ([6000.0], LAMBDAS),
        "duration_ms": (2000.0, 10000.0),
        "burn_in_ms": (500.0, 500.0),
        "trajectories": (1, 4),
        "init": ("all-zero", "all-zero"),
    },
    "miss-fractions": {
        "presets": (list(ALL_PRESETS), list(ALL_PRESETS)),
        "lambda_even": (6000.0, 6000.0),
        "duration_ms": (2000.0, 10000.0),
        "burn_in_ms": (500.0, 500.0),
        "trajectories": (1, 4),
        "init": ("all-zero", "all-zero"),
    },
    "correlation-decay": {
        "presets": (list(ALL_PRESETS), list(ALL_PRESETS)),
        "lambda_even": (6000.0, 6000.0),
        "trajectories": (60, 240),
        "windows": (500, 2000),
        "window_ms": (15.0, 15.0),
        "burn_in_ms": (500.0, 500.0),
        "reference": (2, 2),
        "selector": ("total", "total"),
        "init": ("all-zero", "all-zero"),
    },
    "mfe-sweep": {
        "tau_is": (_tau_grid(1.0, 9.0, 1.0), _tau_grid(1.0, 9.0, 0.1)),
        "lambdas": ([0.0, 2000.0, 4000.0], [0.0, 2000.0, 4000.0]),
        "initial": ([0.0, 20.0, 0.0, 0.0, 5.0, 0.0], [0.0, 20.0, 0.0, 0.0, 5.0, 0.0]),
        "tau_e": (2.0, 2.0),
        "c_e": (C_FIGURE, C_FIGURE),
        "c_i": (C_FIGURE, C_FIGURE),
        "cap_ms": (20.0, 20.0),
        "dt": (1e-3, 1e-3),
    },
    "mfe-two-pop": {
        "tau_is": (_tau_grid(1.0, 9.0, 1.0), _tau_grid(1.0, 9.0, 0.1)),
        "ratios": ([0.0, 0.15], [0.0, 0.15]),
        "initial": ([[1.0, 30.0, 0.0, 0.0, 10.0, 0.0], [0.0, 10.0, 0.0, 0.0, 2.0, 0.0]],) * 2,
        "tau_e": (2.0, 2.0),
        "lambda_hz": (0.0, 0.0),
        "c_e": (C_FIGURE, C_FIGURE),
        "c_i": (C_FIGURE, C_FIGURE),
        "cap_ms": (20.0, 20.0),
        "dt": (1e-3, 1e-3),
    },
    "cv-sweep": {
        "tau_is": (_tau_grid(1.0, 9.0, 0.1), _tau_grid(1.0, 9.0, 0.1)),
        "repeats": (500, 10000),
        "duration_ms": (100.0, 100.0),
        "bin_ms": (1.0, 1.0),
        "onset_frac": (0.05, 0.05),
        "floor_frac": (0.02, 0.02),
        "init": ("mixture", "mixture"),
        "branching_samples": (100000, 100000),
        "branching_stops": ([["fixed", 4], ["uniform", 3, 6]], [["fixed", 4], ["uniform", 3, 6]]),
    },
    "limit-theorem-check": {
        "h0": (5.0, 5.0),
        "tau_i_large": (1e6, 1e6),
        "t_end": (60.0, 60.0),
        "dt": (1e-3, 1e-3),
        "c_e": (C_FIGURE, C_FIGURE),
        "c_i": (C_FIGURE, C_FIGURE),
    },
}

DEFAULT_MODELS: dict[str, dict] = {
    "raster": {"preset": "REG2", "lambda_even": 6000.0, "rows": 3, "cols": 3},
    "rate-sweep": {"rows": 3, "cols": 3},
    "meanfield-compare": {"rows": 3, "cols": 3},
    "miss-fractions": {"rows": 3, "cols": 3},
    "correlation-decay": {"rows": 1, "cols": 22},
    "mfe-sweep": {"preset": "HOM", "rows": 1, "cols": 1},
    "mfe-two-pop": {"preset": "HOM", "rows": 1, "cols": 2},
    "cv-sweep": {"preset": "HOM", "rows": 1, "cols": 1, "lambda_e": 3000.0, "lambda_i": 3000.0,
                 "tau_ee": 2.0, "tau_ie": 2.0, "tau_r": 4.0},
    "limit-theorem-check": {"preset": "HOM", "rows": 1, "cols": 1},
}

PRESET_SWEEPS = ("rate-sweep", "meanfield-compare", "miss-fractions", "correlation-decay")


MANIFEST_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "neurofield run manifest",
    "type": "object",
    "required": ["schema_version", "kind", "seed", "scale", "spec", "params", "versions",
                 "backend", "workers", "wall_time_s", "outputs"],
    "properties": {
        "schema_version": {"const": 1},
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "scale": {"enum": ["desk", "paper"]},
        "spec": {"type": "object"},
        "params": {"type": "object"},
        "versions": {
            "type": "object",
            "required": ["neurofield", "python", "numpy", "scipy"],
            "additionalProperties": {"type": "string"},
        },
        "backend": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "wall_time_s": {"type": "number", "minimum": 0},
        "outputs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["file", "columns", "rows", "sha256"],
                "properties": {
                    "file": {"type": "string"},
                    "columns": {"type": "array", "items": {"type": "string"}},
                    "rows": {"type": "integer", "minimum": 0},
                    "sha256": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


class ExperimentError(RuntimeError):
    """A module error raised while running an experiment, with its context."""


@dataclass
class Table:
    name: str
    header: tuple[str, ...]
    rows: list[tuple]


def resolve_params(spec: ExperimentSpec) -> dict:
    """Kind defaults for the spec's scale, overridden by ``spec.params``."""
    defaults = KINDS[spec.kind]
    idx = 0 if spec.scale == "desk" else 1
    params = {k: v[idx] for k, v in defaults.items()}
    for k, v in spec.params.items():
        if k not in defaults:
            raise ConfigError(f"unknown param {k!r} for kind {spec.kind!r}")
        params[k] = v
    _check_params(spec.kind, params)
    return params


def _check_params(kind: str, p: dict) -> None:
    def positive(name):
        if name in p and not (isinstance(p[name], (int, float)) and p[name] > 0):
            raise ConfigError(f"param {name} must be positive, got {p[name]!r}")

    for name in ("duration_ms", "window_ms", "trajectories", "windows", "repeats", "dt",
                 "cap_ms", "t_end", "h0", "tau_e", "bin_ms", "branching_samples", "tau_i_large"):
        positive(name)
    for name in ("trajectories", "windows", "repeats", "branching_samples", "reference"):
        if name in p and not isinstance(p[name], int):
            raise ConfigError(f"param {name} must be an integer, got {p[name]!r}")
    if "init" in p and p["init"] not in INIT_MODES:
        raise ConfigError(f"param init must be one of {INIT_MODES}, got {p['init']!r}")
    if "presets" in p:
        bad = [x for x in p["presets"] if x not in PRESETS]
        if bad or not p["presets"]:
            raise ConfigError(f"unknown preset(s) {bad}; allowed: {sorted(PRESETS)}")
    if "burn_in_ms" in p and p["burn_in_ms"] < 0:
        raise ConfigError("param burn_in_ms must be >= 0")
    if "tau_is" in p and (not p["tau_is"] or min(p["tau_is"]) <= 0):
        raise ConfigError("param tau_is must be a nonempty list of positive values")
    if p.get("selector", "total") not in ("E", "I", "total"):
        raise ConfigError(f"param selector must be E, I or total, got {p['selector']!r}")


# ----------------------------------------------------------------------------
# helpers


def _fmt(x) -> str | int:
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _pool_map(fn: Callable, items: Sequence) -> list:
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (8 * n))))


def base_model(spec: ExperimentSpec, **extra) -> ModelConfig:
    values = {**DEFAULT_MODELS[spec.kind], **spec.model, **extra}
    return model_from_dict(values)


def sweep_model(spec: ExperimentSpec, name: str, lambda_even: float) -> ModelConfig:
    if "preset" in spec.model or "lambda_even" in spec.model:
        raise ConfigError(f"kind {spec.kind!r} sweeps presets; set params.presets and lambda values instead")
    return base_model(spec, preset=name, lambda_even=float(lambda_even))


def _simulate_item(args):
    config, init, t_end, burn_in, reduce = args
    lg = simulate(config, init, t_end, burn_in)
    return reduce(lg)


def _run_trajectories(points: list[tuple[ModelConfig, tuple[int, ...]]], params: dict,
                      t_end: float, seed: int, reduce: Callable) -> list[list]:
    """Simulate ``params['trajectories']`` runs per point; results grouped per point."""
    n = params.get("trajectories", 1)
    items = []
    for config, key in points:
        for r in range(n):
            init = InitSpec(params["init"], seed=derive_seed(seed, *key, r))
            items.append((config, init, t_end, params["burn_in_ms"], reduce))
    flat = _pool_map(_simulate_item, items)
    return [flat[i * n:(i + 1) * n] for i in range(len(points))]


def _strip_spikes(log_: SpikeLog) -> SpikeLog:
    """Counts only, so the log is cheap to send between processes."""
    empty = np.empty(0)
    return replace(log_, times=empty, gids=np.empty(0, dtype=np.int64))


def _rates_and_counts(log_: SpikeLog):
    return firing_rates(log_), _strip_spikes(log_)


def _window_reduce(log_: SpikeLog, window_ms: float, selector: str) -> np.ndarray:
    from .statistics import window_counts
    wc = window_counts(log_, window_ms)
    return np.stack([wc.series(p, selector) for p in range(log_.config.grid.size)])


# ----------------------------------------------------------------------------
# kinds


def _raster(spec: ExperimentSpec, p: dict) -> list[Table]:
    config = base_model(spec)
    burn = p["burn_in_ms"]
    lg = simulate(config, InitSpec(p["init"], seed=derive_seed(spec.seed, 0)), burn + p["duration_ms"], burn)
    rates = firing_rates(lg)
    rows = []
    for q in range(config.grid.size):
        idx = config.grid.unflat(q)
        for t in (E, I):
            rows.append((idx.m, idx.n, TYPES[t], _fmt(rates.rate[q, t])))
    return [
        Table("spikes.csv", (), [("__log__", lg)]),
        Table("accounting.csv", (), [("__log__", lg)]),
        Table("rates.csv", ("pop_m", "pop_n", "type", "rate_hz"), rows),
    ]


def _rate_sweep(spec: ExperimentSpec, p: dict) -> list[Table]:
    points = []
    for i, name in enumerate(p["presets"]):
        for j, lam in enumerate(p["lambdas"]):
            points.append((sweep_model(spec, name, lam), (i, j)))
    t_end = p["burn_in_ms"] + p["duration_ms"]
    results = _run_trajectories(points, p, t_end, spec.seed, firing_rates)
    rows = []
    for (config, (i, j)), tables in zip(points, results):
        # network mean over populations, then mean and SE over trajectories
        per_traj = np.stack([t.rate.mean(axis=0) for t in tables])
        mean = per_traj.mean(axis=0)
        se = per_traj.std(axis=0, ddof=1) / math.sqrt(len(tables)) if len(tables) > 1 else [math.nan] * 2
        for t in (E, I):
            rows.append((p["presets"][i], _fmt(float(p["lambdas"][j])), TYPES[t], _fmt(mean[t]),
                         _fmt(se[t]), len(tables)))
    return [Table("rates_vs_lambda.csv",
                  ("preset", "lambda_even", "type", "rate_hz", "se_hz", "n_trajectories"), rows)]


def _solve_all(config: ModelConfig):
    out = {}
    for name, fn in (
        ("lin", lambda: solve_linear(build_linear_system(config))),
        ("quad", lambda: solve_quadratic(config)),
        ("per", lambda: solve_periodic(config)),
    ):
        try:
            out[name] = fn()
        except (SolverError, ValueError) as exc:
            log.warning("%s model failed: %s", name, exc)
            out[name] = None
    return out


def _meanfield_compare(spec: ExperimentSpec, p: dict) -> list[Table]:
    points = []
    for i, name in enumerate(p["presets"]):
        for j, lam in enumerate(p["lambdas"]):
            points.append((sweep_model(spec, name, lam), (i, j)))
    t_end = p["burn_in_ms"] + p["duration_ms"]
    results = _run_trajectories(points, p, t_end, spec.seed, firing_rates)
    rows, summary = [], []
    nan2 = np.full(2, math.nan)
    for (config, (i, j)), tables in zip(points, results):
        emp = np.mean([t.rate for t in tables], axis=0) / 1000.0
        sols = _solve_all(config)
        hz = {k: (s.as_hz() if s is not None else np.full((config.grid.size, 2), math.nan))
              for k, s in sols.items()}
        for q in range(config.grid.size):
            idx = config.grid.unflat(q)
            f = emp[q]
            rel = {}
            for k in ("lin", "quad", "per"):
                g = hz[k][q] / 1000.0
                with np.errstate(invalid="ignore", divide="ignore"):
                    rel[k] = np.where(f > 0, (f - g) / f, math.nan) if sols[k] is not None else nan2
            rows.append((p["presets"][i], _fmt(float(p["lambdas"][j])), idx.m, idx.n,
                         _fmt(f[0] * 1000.0), _fmt(f[1] * 1000.0),
                         *(_fmt(hz[k][q, t]) for k in ("lin", "quad", "per") for t in (E, I)),
                         *(_fmt(rel[k][t]) for k in ("lin", "quad", "per") for t in (E, I))))
        for k in ("lin", "quad", "per"):
            if sols[k] is None:
                summary.append((p["presets"][i], _fmt(float(p["lambdas"][j])), k, "nan", "nan", 0))
                continue
            rep = relative_errors(emp, sols[k])
            summary.append((p["presets"][i], _fmt(float(p["lambdas"][j])), k, _fmt(rep.rel_e),
                            _fmt(rep.rel_i), rep.excluded))
    header = ("preset", "lambda_even", "pop_m", "pop_n", "f_emp_E", "f_emp_I",
              "f_lin_E", "f_lin_I", "f_quad_E", "f_quad_I", "f_per_E", "f_per_I",
              "rel_lin_E", "rel_lin_I", "rel_quad_E", "rel_quad_I", "rel_per_E", "rel_per_I")
    return [Table("meanfield.csv", header, rows),
            Table("meanfield_rel.csv", ("preset", "lambda_even", "model", "rel_E", "rel_I", "excluded"),
                  summary)]


def _miss_fractions(spec: ExperimentSpec, p: dict) -> list[Table]:
    points = [(sweep_model(spec, name, p["lambda_even"]), (i,)) for i, name in enumerate(p["presets"])]
    t_end = p["burn_in_ms"] + p["duration_ms"]
    results = _run_trajectories(points, p, t_end, spec.seed, _rates_and_counts)
    miss_rows, df_rows = [], []
    for (config, (i,)), res in zip(points, results):
        name = p["presets"][i]
        emp = np.mean([r[0].rate for r in res], axis=0)
        eps = pooled_miss_fraction([r[1] for r in res])
        for q in range(config.grid.size):
            idx = config.grid.unflat(q)
            for src in (E, I):
                for tgt in (E, I):
                    miss_rows.append((name, f"{TYPES[src]}->{TYPES[tgt]}", idx.m, idx.n,
                                      _fmt(eps[tgt, src, q])))
        try:
            d_e, d_i = net_current_gain(eps, emp / 1000.0, config)
        except ValueError:
            d_e = d_i = np.full(config.grid.size, math.nan)
        for q in range(config.grid.size):
            idx = config.grid.unflat(q)
            df_rows.append((name, idx.m, idx.n, _fmt(emp[q, E]), _fmt(emp[q, I]),
                            _fmt(d_e[q]), _fmt(d_i[q])))
    return [
        Table("miss.csv", ("preset", "channel", "pop_m", "pop_n", "epsilon"), miss_rows),
        Table("delta_f.csv", ("preset", "pop_m", "pop_n", "f_E_hz", "f_I_hz", "delta_f_E", "delta_f_I"),
              df_rows),
    ]


def _correlation_decay(spec: ExperimentSpec, p: dict) -> list[Table]:
    points = [(sweep_model(spec, name, p["lambda_even"]), (i,)) for i, name in enumerate(p["presets"])]
    config0 = points[0][0]
    if config0.grid.rows != 1:
        raise ConfigError("correlation-decay expects a single-row grid (rows: 1)")
    ref = p["reference"]
    if not 1 <= ref <= config0.grid.cols:
        raise ConfigError(f"reference column {ref} outside 1..{config0.grid.cols}")
    t_end = p["burn_in_ms"] + p["windows"] * p["window_ms"]
    reduce = functools.partial(_window_reduce, window_ms=p["window_ms"], selector=p["selector"])
    results = _run_trajectories(points, p, t_end, spec.seed, reduce)
    rows = []
    for (config, (i,)), series in zip(points, results):
        for k in range(1, config.grid.cols + 1):
            per = []
            for s in series:
                cov, r = correlate(s[ref - 1], s[k - 1])
                per.append(CorrelationResult((ref - 1, p["selector"]), (k - 1, p["selector"]),
                                             cov, r, s.shape[1]))
            pooled = pooled_correlation(per)
            rows.append((p["presets"][i], k, k - ref, _fmt(pooled.pearson), _fmt(pooled.covariance),
                         pooled.n_samples, sum(r.defined for r in per)))
    return [Table("cordecay.csv",
                  ("preset", "k", "distance", "pearson", "covariance", "n_samples", "n_trajectories"),
                  rows)]


def _mfe_params(spec: ExperimentSpec, p: dict, lam_hz: float) -> MfeParams:
    config = base_model(spec)
    return MfeParams.from_config(config, tau_e=p.get("tau_e"), lam_hz=lam_hz,
                                 c_e=p["c_e"], c_i=p["c_i"])


def _mfe_sweep(spec: ExperimentSpec, p: dict) -> list[Table]:
    rows = []
    taus = [float(t) for t in p["tau_is"]]
    mp = _mfe_params(spec, p, 0.0)
    lams = [float(x) for x in p["lambdas"]]
    batches = sweep_tau_i(p["initial"], mp, taus, p["cap_ms"], p["dt"], lams=[x / 1000.0 for x in lams])
    for lam, trajs in zip(lams, batches):
        for tau, tr in zip(taus, trajs):
            se, si, ts = event_size(tr, p["cap_ms"])
            rows.append((_fmt(float(lam)), _fmt(tau), _fmt(se), _fmt(si), _fmt(ts)))
    return [Table("mfe_sweep.csv", ("lambda_hz", "tau_i", "size_e", "size_i", "t_stop"), rows)]


def _mfe_two_pop(spec: ExperimentSpec, p: dict) -> list[Table]:
    config = base_model(spec)
    grid = config.grid
    init = np.asarray(p["initial"], dtype=float)
    if init.shape != (grid.size, 6):
        raise ConfigError(f"initial must list {grid.size} sextuples for a {grid.rows}x{grid.cols} grid")
    taus = [float(t) for t in p["tau_is"]]
    rows = []
    for ratio in p["ratios"]:
        rho = neighbor_probabilities(config.synapse.p_local, float(ratio))
        mp = replace(_mfe_params(spec, p, p["lambda_hz"]),
                     rho_ee=rho[E][E], rho_ie=rho[I][E], rho_ei=rho[E][I], rho_ii=rho[I][I])
        trajs = sweep_tau_i(init, mp, taus, p["cap_ms"], p["dt"], grid=grid)
        for tau, tr in zip(taus, trajs):
            for q in range(grid.size):
                idx = grid.unflat(q)
                se, si, ts = event_size(tr, p["cap_ms"], pop=q)
                end = tr.states[-1, q]
                rows.append((_fmt(float(ratio)), _fmt(tau), idx.m, idx.n, _fmt(end[2]), _fmt(end[5]),
                             _fmt(se), _fmt(si), _fmt(ts)))
    return [Table("mfe_grid.csv", ("ratio_e", "tau_i", "pop_m", "pop_n", "r_e_cap", "r_i_cap",
                                   "size_e", "size_i", "t_stop"), rows)]


def _cv_item(args):
    config, init, duration, n_ref, bin_ms, onset, floor = args
    lg = simulate(config, init, duration)
    te = lg.times[lg.types == E]
    return first_event_size(te, n_ref, bin_ms, duration, onset, floor)[0]


def _cv_sweep(spec: ExperimentSpec, p: dict) -> list[Table]:
    config = base_model(spec)
    taus = [float(t) for t in p["tau_is"]]
    n = p["repeats"]
    items = []
    for j, tau in enumerate(taus):
        t = config.time
        cfg = replace(config, time=TimeConstants(t.tau_ee, t.tau_ie, tau, t.tau_r))
        for r in range(n):
            items.append((cfg, InitSpec(p["init"], seed=derive_seed(spec.seed, j, r)),
                          p["duration_ms"], config.n_e, p["bin_ms"], p["onset_frac"], p["floor_frac"]))
    sizes = np.array(_pool_map(_cv_item, items), dtype=float).reshape(len(taus), n)
    rows = []
    for tau, s in zip(taus, sizes):
        rows.append((_fmt(tau), n, _fmt(s.mean()), _fmt(s.std(ddof=1) if n > 1 else math.nan),
                     _fmt(coefficient_of_variation(s)), _fmt(float(np.mean(s == 0)))))
    syn = config.synapse
    brows = []
    for b, stop in enumerate(p["branching_stops"]):
        st = StopTime("fixed", a=int(stop[1])) if stop[0] == "fixed" else \
            StopTime("uniform", a=int(stop[1]), b=int(stop[2]))
        bp = BranchingParams.uniform_voltage(config.n_e, syn.p_local[E][E], syn.strength[E][E],
                                             config.voltage.threshold, st)
        rep = empirical_cv_check(bp, p["branching_samples"], derive_seed(spec.seed, len(taus), b))
        label = f"fixed-{st.a}" if st.kind == "fixed" else f"uniform-{st.a}-{st.b}"
        brows.append((label, _fmt(rep.mu), _fmt(rep.bound), _fmt(rep.cv), _fmt(rep.se),
                      rep.n_samples, _fmt(rep.margin)))
    return [
        Table("cv_vs_tau_i.csv", ("tau_i", "repeats", "mean_size", "sd_size", "cv", "zero_fraction"), rows),
        Table("branching.csv", ("stop", "mu", "bound", "empirical_cv", "bootstrap_se", "n_samples", "margin"),
              brows),
    ]


def _limit_theorem(spec: ExperimentSpec, p: dict) -> list[Table]:
    mp = _mfe_params(spec, {**p, "tau_e": 1.0}, 0.0)
    h0 = p["h0"]
    orc = limit_oracle_errors(mp, h0, p["t_end"], p["dt"])
    m, alpha, beta = theorem_constants(mp)
    rep = verify_limit_theorem(mp, h0, p["tau_i_large"], p["t_end"], p["dt"])
    r_star = orc.closed.r_star
    rows = [
        ("delta_e", _fmt(orc.closed.delta_e)),
        ("delta_i", _fmt(orc.closed.delta_i)),
        ("m", _fmt(m)),
        ("alpha", _fmt(alpha)),
        ("beta", _fmt(beta)),
        ("r_star", _fmt(r_star)),
        ("r_i_closed_form", _fmt(limit_r_i(mp, r_star, h0))),
        ("limit_r_e", _fmt(orc.r_e)),
        ("limit_r_i", _fmt(orc.r_i)),
        ("max_err_u", _fmt(orc.max_err_u)),
        ("max_err_h", _fmt(orc.max_err_h)),
        ("large_tau_r_e", _fmt(rep.r_e)),
        ("large_tau_r_i", _fmt(rep.r_i)),
        ("margin_e", _fmt(rep.margin_e)),
        ("margin_i", _fmt(rep.margin_i)),
        ("holds", int(rep.holds)),
    ]
    return [Table("limit_theorem.csv", ("quantity", "value"), rows)]


RUNNERS: dict[str, Callable[[ExperimentSpec, dict], list[Table]]] = {
    "raster": _raster,
    "rate-sweep": _rate_sweep,
    "meanfield-compare": _meanfield_compare,
    "miss-fractions": _miss_fractions,
    "correlation-decay": _correlation_decay,
    "mfe-sweep": _mfe_sweep,
    "mfe-two-pop": _mfe_two_pop,
    "cv-sweep": _cv_sweep,
    "limit-theorem-check": _limit_theorem,
}


# ----------------------------------------------------------------------------
# output


def _write_table(table: Table, path: Path) -> tuple[tuple[str, ...], int]:
    if table.rows and table.rows[0][0] == "__log__":
        lg = table.rows[0][1]
        if table.name == "spikes.csv":
            write_spikes_csv(lg, path)
        else:
            write_accounting_csv(lg, path)
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = tuple(next(r))
            n = sum(1 for _ in r)
        return header, n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        w.writerows(table.rows)
    return table.header, len(table.rows)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict[str, str]:
    import scipy
    return {"neurofield": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def default_out_dir(spec: ExperimentSpec) -> Path:
    return Path(spec.out) if spec.out else Path("runs") / f"{spec.kind}-seed{spec.seed}"


def run_experiment(spec: ExperimentSpec, out_dir=None) -> dict:
    """Run ``spec``, write its CSVs and ``manifest.json`` into ``out_dir``; return the manifest."""
    if spec.kind not in RUNNERS:
        raise ConfigError(f"unknown experiment kind {spec.kind!r}")
    params = resolve_params(spec)
    out = Path(out_dir) if out_dir is not None else default_out_dir(spec)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    log.info("running %s (seed %d, %s scale) into %s", spec.kind, spec.seed, spec.scale, out)
    try:
        tables = RUNNERS[spec.kind](spec, params)
    except ConfigError:
        raise
    except Exception as exc:
        raise ExperimentError(f"{spec.kind}: {type(exc).__name__}: {exc}") from exc
    outputs = []
    for table in tables:
        path = out / table.name
        header, n = _write_table(table, path)
        outputs.append({"file": table.name, "columns": list(header), "rows": n, "sha256": _sha256(path)})
    manifest = {
        "schema_version": 1,
        "kind": spec.kind,
        "seed": spec.seed,
        "scale": spec.scale,
        "spec": spec.to_dict(),
        "params": params,
        "versions": _versions(),
        "backend": default_backend(),
        "workers": worker_count(),
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "outputs": outputs,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=False)
        fh.write("\n")
    return manifest


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def model_dicts(spec: ExperimentSpec) -> list[dict]:
    """The explicit model mappings an experiment uses (for inspection)."""
    params = resolve_params(spec)
    if spec.kind in PRESET_SWEEPS:
        lams = params.get("lambdas", [params.get("lambda_even", 6000.0)])
        return [model_to_dict(sweep_model(spec, n, lam)) for n in params["presets"] for lam in lams]
    return [model_to_dict(base_model(spec))]
