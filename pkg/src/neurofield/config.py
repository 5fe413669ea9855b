"""YAML files for models and experiments.

A model is a flat mapping.  It either names a preset and overrides some of
its fields, or lists the fields directly (missing ones take the common
defaults)::

    preset: REG2          # optional
    lambda_even: 6000     # spikes/s, only with a preset
    rows: 1
    cols: 22
    tau_i: 4.5            # any field below overrides the preset

Field names: ``rows cols n_e n_i threshold reversal`` ``p_ee p_ie p_ei p_ii``
(local connection probabilities, target letter first), ``rho_*``
(neighbour probabilities), ``s_*`` (strengths), ``tau_ee tau_ie tau_i tau_r``
(ms), ``lambda_e lambda_i`` (spikes/s: a number or a rows x cols list) and
``allow_self_kick``.  Overriding ``p_*`` does not rescale ``rho_*``.

An experiment file has the top-level keys ``kind seed scale out model
params``; see :mod:`neurofield.experiments` for the kinds and their params.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .model import (
    COMMON, E, I, ConfigError, DriveField, GridSpec, ModelConfig, SynapseMatrix,
    TimeConstants, VoltageSpec, check, preset,
)

PAIR_KEYS = {"ee": (E, E), "ie": (I, E), "ei": (E, I), "ii": (I, I)}
MODEL_KEYS = (
    "preset", "lambda_even", "rows", "cols", "n_e", "n_i", "threshold", "reversal",
    *(f"p_{k}" for k in PAIR_KEYS), *(f"rho_{k}" for k in PAIR_KEYS),
    *(f"s_{k}" for k in PAIR_KEYS),
    "tau_ee", "tau_ie", "tau_i", "tau_r", "lambda_e", "lambda_i", "allow_self_kick",
)
TOP_KEYS = ("kind", "seed", "scale", "out", "model", "params")
SCALES = ("desk", "paper")


class SpecError(ConfigError):
    """Invalid experiment or model file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


# ----------------------------------------------------------------------------
# model <-> flat mapping


def _matrix(values: dict, prefix: str, base) -> tuple:
    m = [list(row) for row in base]
    for key, (tgt, src) in PAIR_KEYS.items():
        name = f"{prefix}_{key}"
        if name in values:
            m[tgt][src] = float(values[name])
    return tuple(tuple(row) for row in m)


def _drive_grid(value, grid: GridSpec, name: str) -> tuple[tuple[float, ...], ...]:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full((grid.rows, grid.cols), float(arr))
    if arr.shape != (grid.rows, grid.cols):
        raise ConfigError(f"{name}: expected a number or a {grid.rows}x{grid.cols} list, got shape {arr.shape}")
    return tuple(tuple(float(x) for x in row) for row in arr)


def model_from_dict(values: dict) -> ModelConfig:
    unknown = sorted(set(values) - set(MODEL_KEYS))
    if unknown:
        raise ConfigError(f"unknown model key(s): {', '.join(unknown)}")
    v = dict(values)
    rows = int(v.get("rows", 3 if "preset" in v else 1))
    cols = int(v.get("cols", 3 if "preset" in v else 1))
    grid = GridSpec(rows, cols)
    if "preset" in v:
        base = preset(str(v["preset"]), float(v.get("lambda_even", 6000.0)), grid)
    else:
        if "lambda_even" in v:
            raise ConfigError("lambda_even needs a preset; use lambda_e/lambda_i instead")
        missing = [k for k in ("tau_ee", "tau_ie", "tau_i", "lambda_e") if k not in v]
        if missing:
            raise ConfigError(f"model without preset must set {', '.join(missing)}")
        zero = ((0.0, 0.0), (0.0, 0.0))
        base = ModelConfig(
            grid=grid, n_e=COMMON["n_e"], n_i=COMMON["n_i"],
            voltage=VoltageSpec(COMMON["threshold"], COMMON["reversal"]),
            synapse=SynapseMatrix(COMMON["p_local"], zero, COMMON["strength"]),
            time=TimeConstants(float(v["tau_ee"]), float(v["tau_ie"]), float(v["tau_i"]), COMMON["tau_r"]),
            drive=DriveField.uniform(grid, 0.0),
        )
    syn = SynapseMatrix(
        p_local=_matrix(v, "p", base.synapse.p_local),
        p_neighbor=_matrix(v, "rho", base.synapse.p_neighbor),
        strength=_matrix(v, "s", base.synapse.strength),
    )
    t = base.time
    time = TimeConstants(
        float(v.get("tau_ee", t.tau_ee)), float(v.get("tau_ie", t.tau_ie)),
        float(v.get("tau_i", t.tau_i)), float(v.get("tau_r", t.tau_r)),
    )
    lam_e = _drive_grid(v["lambda_e"], grid, "lambda_e") if "lambda_e" in v else base.drive.lambda_e
    lam_i = _drive_grid(v.get("lambda_i", v.get("lambda_e")), grid, "lambda_i") \
        if ("lambda_i" in v or "lambda_e" in v) else base.drive.lambda_i
    config = ModelConfig(
        grid=grid,
        n_e=int(v.get("n_e", base.n_e)),
        n_i=int(v.get("n_i", base.n_i)),
        voltage=VoltageSpec(int(v.get("threshold", base.voltage.threshold)),
                            int(v.get("reversal", base.voltage.reversal))),
        synapse=syn,
        time=time,
        drive=DriveField(lam_e, lam_i),
        allow_self_kick=bool(v.get("allow_self_kick", base.allow_self_kick)),
    )
    return check(config)


def model_to_dict(config: ModelConfig) -> dict:
    """Explicit flat mapping (no preset) that :func:`model_from_dict` maps back to ``config``."""
    out: dict[str, Any] = {
        "rows": config.grid.rows,
        "cols": config.grid.cols,
        "n_e": config.n_e,
        "n_i": config.n_i,
        "threshold": config.voltage.threshold,
        "reversal": config.voltage.reversal,
    }
    syn = config.synapse
    for prefix, mat in (("p", syn.p_local), ("rho", syn.p_neighbor), ("s", syn.strength)):
        for key, (tgt, src) in PAIR_KEYS.items():
            out[f"{prefix}_{key}"] = float(mat[tgt][src])
    out["tau_ee"] = config.time.tau_ee
    out["tau_ie"] = config.time.tau_ie
    out["tau_i"] = config.time.tau_i
    out["tau_r"] = config.time.tau_r
    out["lambda_e"] = [list(row) for row in config.drive.lambda_e]
    out["lambda_i"] = [list(row) for row in config.drive.lambda_i]
    out["allow_self_kick"] = config.allow_self_kick
    return out


def dump_yaml(data: dict) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


# ----------------------------------------------------------------------------
# experiment files


@dataclass
class ExperimentSpec:
    kind: str
    seed: int
    scale: str = "desk"
    out: str | None = None
    model: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "seed": self.seed, "scale": self.scale}
        if self.out is not None:
            d["out"] = self.out
        d["model"] = copy.deepcopy(self.model)
        d["params"] = copy.deepcopy(self.params)
        return d


def _key_lines(node) -> dict:
    """Map ``key -> (line, child node)`` for a YAML mapping node."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, val in node.value:
            out[k.value] = (k.start_mark.line + 1, val)
    return out


def parse_spec_text(text: str) -> ExperimentSpec:
    from .experiments import KINDS, model_dicts, resolve_params

    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SpecError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                        mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise SpecError("experiment file must be a mapping", 1)
    lines = _key_lines(root)

    def line_of(key, section=None):
        if section is None:
            return lines.get(key, (None, None))[0]
        sub = _key_lines(lines.get(section, (None, None))[1])
        return sub.get(key, (None, None))[0]

    for key in data:
        if key not in TOP_KEYS:
            raise SpecError(f"unknown key {key!r} (allowed: {', '.join(TOP_KEYS)})", line_of(key), key)
    if "kind" not in data:
        raise SpecError("missing required key 'kind'", 1, "kind")
    kind = data["kind"]
    if kind not in KINDS:
        raise SpecError(f"unknown experiment kind {kind!r} (allowed: {', '.join(KINDS)})",
                        line_of("kind"), "kind")
    if "seed" not in data:
        raise SpecError("missing required key 'seed'", 1, "seed")
    seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise SpecError(f"seed must be a nonnegative integer, got {seed!r}", line_of("seed"), "seed")
    scale = data.get("scale", "desk")
    if scale not in SCALES:
        raise SpecError(f"scale must be one of {SCALES}, got {scale!r}", line_of("scale"), "scale")
    model = data.get("model") or {}
    if not isinstance(model, dict):
        raise SpecError("model must be a mapping", line_of("model"), "model")
    for key in model:
        if key not in MODEL_KEYS:
            raise SpecError(f"unknown model key {key!r}", line_of(key, "model"), key)
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise SpecError("params must be a mapping", line_of("params"), "params")
    for key in params:
        if key not in KINDS[kind]:
            raise SpecError(f"unknown param {key!r} for kind {kind!r} (allowed: {', '.join(KINDS[kind])})",
                            line_of(key, "params"), key)
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise SpecError("out must be a string path", line_of("out"), "out")
    spec = ExperimentSpec(kind=kind, seed=seed, scale=scale, out=out, model=model, params=params)
    try:
        resolve_params(spec)
    except ConfigError as exc:
        raise SpecError(str(exc), line_of("params")) from None
    try:
        # the merged models the experiment will build
        model_dicts(spec)
    except ConfigError as exc:
        raise SpecError(str(exc), line_of("model")) from None
    return spec


def parse_config(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec_text(fh.read())


def spec_to_text(spec: ExperimentSpec) -> str:
    return dump_yaml(spec.to_dict())
