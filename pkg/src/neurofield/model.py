"""Grid model definition: parameter types, topology, derived constants and presets.

Conventions
-----------
* Neuron types are indexed ``E = 0`` and ``I = 1``.
* Every 2x2 parameter matrix is indexed ``[target][source]``, so
  ``strength[E][I]`` is the size of an inhibitory kick landing on an
  excitatory neuron (``S_EI``).
* Grid positions are 1-based ``(m, n)`` pairs; flat population indices are
  0-based and row-major, ``p = (m - 1) * cols + (n - 1)``.
* Time is in milliseconds.  Drive rates are stored in spikes/second (the unit
  they are usually quoted in) and converted with :meth:`DriveField.per_ms`.

The grid height and the spiking threshold are often written with the same
letter; here they live in :class:`GridSpec` and :class:`VoltageSpec`
respectively and are never mixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

E, I = 0, 1
TYPES = ("E", "I")


class ConfigError(ValueError):
    """Raised for malformed model parameters or out-of-range indices."""


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def flat(self, idx: "PopulationIndex") -> int:
        return (idx.m - 1) * self.cols + (idx.n - 1)

    def unflat(self, p: int) -> "PopulationIndex":
        return PopulationIndex(p // self.cols + 1, p % self.cols + 1)

    def indices(self) -> list["PopulationIndex"]:
        return [self.unflat(p) for p in range(self.size)]

    def contains(self, idx: "PopulationIndex") -> bool:
        return 1 <= idx.m <= self.rows and 1 <= idx.n <= self.cols


@dataclass(frozen=True, order=True)
class PopulationIndex:
    m: int
    n: int

    def __iter__(self):
        return iter((self.m, self.n))


@dataclass(frozen=True)
class VoltageSpec:
    threshold: int = 100
    reversal: int = 66


@dataclass(frozen=True)
class SynapseMatrix:
    """Connection probabilities and kick strengths, indexed ``[target][source]``."""

    p_local: tuple[tuple[float, float], tuple[float, float]]
    p_neighbor: tuple[tuple[float, float], tuple[float, float]]
    strength: tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class TimeConstants:
    tau_ee: float
    tau_ie: float
    tau_i: float
    tau_r: float = 4.0

    def kick_delay(self, target: int, source: int) -> float:
        """Mean delay of a pending kick; E kicks depend on the target type."""
        if source == I:
            return self.tau_i
        return self.tau_ee if target == E else self.tau_ie


@dataclass(frozen=True)
class DriveField:
    """External Poisson drive per population in spikes/second, shape ``(rows, cols)``."""

    lambda_e: tuple[tuple[float, ...], ...]
    lambda_i: tuple[tuple[float, ...], ...]

    @classmethod
    def uniform(cls, grid: GridSpec, rate_e: float, rate_i: float | None = None) -> "DriveField":
        rate_i = rate_e if rate_i is None else rate_i
        return cls(
            tuple(tuple(float(rate_e) for _ in range(grid.cols)) for _ in range(grid.rows)),
            tuple(tuple(float(rate_i) for _ in range(grid.cols)) for _ in range(grid.rows)),
        )

    def per_ms(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat (row-major) drive vectors in kicks per millisecond."""
        return (
            np.asarray(self.lambda_e, dtype=float).ravel() / 1000.0,
            np.asarray(self.lambda_i, dtype=float).ravel() / 1000.0,
        )


@dataclass(frozen=True)
class ModelConfig:
    grid: GridSpec
    n_e: int
    n_i: int
    voltage: VoltageSpec
    synapse: SynapseMatrix
    time: TimeConstants
    drive: DriveField
    # A spiking neuron may draw itself as a postsynaptic target; the kick is
    # then always missed because the neuron is refractory.
    allow_self_kick: bool = True

    def n_of(self, q: int) -> int:
        return self.n_e if q == E else self.n_i

    @property
    def n_per_pop(self) -> int:
        return self.n_e + self.n_i

    def with_drive(self, lambda_e, lambda_i=None) -> "ModelConfig":
        lambda_i = lambda_e if lambda_i is None else lambda_i
        drive = DriveField(_as_grid_tuple(lambda_e), _as_grid_tuple(lambda_i))
        return replace(self, drive=drive)


@dataclass(frozen=True)
class DerivedConstants:
    """Mean total kick sizes per unit presynaptic rate, indexed ``[target][source]``.

    ``c`` collects input from the home population, ``d`` from one nearest
    neighbour population.
    """

    c: tuple[tuple[float, float], tuple[float, float]]
    d: tuple[tuple[float, float], tuple[float, float]]


def _as_grid_tuple(values) -> tuple[tuple[float, ...], ...]:
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    return tuple(tuple(float(x) for x in row) for row in arr)


def _mat(values) -> tuple[tuple[float, float], tuple[float, float]]:
    (a, b), (c, d) = values
    return ((float(a), float(b)), (float(c), float(d)))


# ----------------------------------------------------------------------------
# topology


def neighbors(grid: GridSpec, idx: PopulationIndex) -> set[PopulationIndex]:
    """Nearest neighbours of ``idx`` (Manhattan distance 1, no wraparound)."""
    if not grid.contains(idx):
        raise ConfigError(f"population {tuple(idx)} outside {grid.rows}x{grid.cols} grid")
    out = set()
    for dm, dn in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        cand = PopulationIndex(idx.m + dm, idx.n + dn)
        if grid.contains(cand):
            out.add(cand)
    return out


def neighbor_lists(grid: GridSpec) -> list[list[int]]:
    """Sorted flat neighbour indices for every flat population index."""
    return [
        sorted(grid.flat(nb) for nb in neighbors(grid, grid.unflat(p)))
        for p in range(grid.size)
    ]


def population_label(grid: GridSpec, idx: PopulationIndex) -> int:
    """Column-major 1-based label ``(n - 1) * rows + m`` used for drive parity and rasters."""
    return (idx.n - 1) * grid.rows + idx.m


# ----------------------------------------------------------------------------
# constants


def derived_constants(config: ModelConfig) -> DerivedConstants:
    syn = config.synapse
    sizes = (config.n_e, config.n_i)
    c = tuple(
        tuple(sizes[src] * syn.p_local[tgt][src] * syn.strength[tgt][src] for src in (E, I))
        for tgt in (E, I)
    )
    d = tuple(
        tuple(sizes[src] * syn.p_neighbor[tgt][src] * syn.strength[tgt][src] for src in (E, I))
        for tgt in (E, I)
    )
    return DerivedConstants(c=c, d=d)


def kick_magnitude(s: float, rng: np.random.Generator) -> int:
    """Integer kick size ``floor(s) + Bernoulli(s - floor(s))``; its mean is ``s``."""
    base = math.floor(s)
    frac = s - base
    if frac > 0.0 and rng.random() < frac:
        return base + 1
    return base


# ----------------------------------------------------------------------------
# validation


def validate(config: ModelConfig) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out: list[str] = []
    g = config.grid
    if not (isinstance(g.rows, int) and g.rows >= 1):
        out.append(f"grid.rows: must be a positive integer, got {g.rows!r}")
    if not (isinstance(g.cols, int) and g.cols >= 1):
        out.append(f"grid.cols: must be a positive integer, got {g.cols!r}")
    for name in ("n_e", "n_i"):
        val = getattr(config, name)
        if not (isinstance(val, int) and val >= 0):
            out.append(f"{name}: must be a nonnegative integer, got {val!r}")
    if isinstance(config.n_e, int) and isinstance(config.n_i, int) and config.n_e + config.n_i < 1:
        out.append("n_e + n_i: must be at least 1")
    if config.voltage.threshold < 1:
        out.append(f"voltage.threshold: must be >= 1, got {config.voltage.threshold}")
    if config.voltage.reversal < 0:
        out.append(f"voltage.reversal: must be >= 0, got {config.voltage.reversal}")
    syn = config.synapse
    for tgt in (E, I):
        for src in (E, I):
            key = TYPES[tgt] + TYPES[src]
            p = syn.p_local[tgt][src]
            if not 0.0 <= p <= 1.0:
                out.append(f"synapse.p_local[{key}] (P_{key}): must lie in [0, 1], got {p}")
            r = syn.p_neighbor[tgt][src]
            if not 0.0 <= r <= 1.0:
                out.append(f"synapse.p_neighbor[{key}] (rho_{key}): must lie in [0, 1], got {r}")
            s = syn.strength[tgt][src]
            if not s > 0.0:
                out.append(f"synapse.strength[{key}] (S_{key}): must be > 0, got {s}")
    for name in ("tau_ee", "tau_ie", "tau_i", "tau_r"):
        val = getattr(config.time, name)
        if not val > 0.0:
            out.append(f"time.{name}: must be > 0, got {val}")
    for name in ("lambda_e", "lambda_i"):
        arr = np.asarray(getattr(config.drive, name), dtype=float)
        if arr.shape != (g.rows, g.cols):
            out.append(f"drive.{name}: shape {arr.shape} does not match grid {(g.rows, g.cols)}")
        elif (arr < 0).any() or not np.isfinite(arr).all():
            out.append(f"drive.{name}: rates must be finite and >= 0")
    return out


def check(config: ModelConfig) -> ModelConfig:
    problems = validate(config)
    if problems:
        raise ConfigError("; ".join(problems))
    return config


# ----------------------------------------------------------------------------
# presets

COMMON = dict(
    n_e=300,
    n_i=100,
    threshold=100,
    reversal=66,
    p_local=((0.15, 0.5), (0.5, 0.4)),
    strength=((5.0, 3.0), (2.0, 3.5)),
    tau_r=4.0,
)

# name -> (tau_ee, tau_ie, tau_i, ratio_e, zeta)
PRESETS: dict[str, tuple[float, float, float, float, float]] = {
    "HOM": (4.0, 1.2, 4.5, 0.10, 11 / 12),
    "SYN": (0.9, 0.9, 4.5, 0.15, 11 / 12),
    "REG1": (1.6, 1.2, 4.5, 0.05, 11 / 12),
    "REG2": (1.6, 1.2, 4.5, 0.15, 11 / 12),
    "REG3": (1.6, 1.2, 4.5, 0.15, 1 / 2),
}

RATIO_I_OVER_E = 0.6


def neighbor_probabilities(p_local, ratio_e: float, ratio_i: float | None = None):
    """``rho[Q][E] = ratio_e * P[Q][E]`` and ``rho[Q][I] = ratio_i * P[Q][I]``."""
    if ratio_i is None:
        ratio_i = RATIO_I_OVER_E * ratio_e
    return tuple(
        (ratio_e * p_local[tgt][E], ratio_i * p_local[tgt][I]) for tgt in (E, I)
    )


def alternating_drive(grid: GridSpec, lambda_even: float, zeta: float) -> DriveField:
    """``lambda_even`` where the column-major label is even, ``zeta * lambda_even`` where odd."""
    rows = []
    for m in range(1, grid.rows + 1):
        row = []
        for n in range(1, grid.cols + 1):
            label = population_label(grid, PopulationIndex(m, n))
            row.append(float(lambda_even) if label % 2 == 0 else float(zeta * lambda_even))
        rows.append(tuple(row))
    rates = tuple(rows)
    return DriveField(rates, rates)


def preset(name: str, lambda_even: float = 6000.0, grid: GridSpec | None = None) -> ModelConfig:
    """Build one of the five named networks (HOM, SYN, REG1, REG2, REG3)."""
    key = name.upper()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    if lambda_even < 0:
        raise ConfigError(f"lambda_even must be >= 0, got {lambda_even}")
    grid = grid or GridSpec(3, 3)
    tau_ee, tau_ie, tau_i, ratio_e, zeta = PRESETS[key]
    p_local = COMMON["p_local"]
    synapse = SynapseMatrix(
        p_local=p_local,
        p_neighbor=neighbor_probabilities(p_local, ratio_e),
        strength=COMMON["strength"],
    )
    return ModelConfig(
        grid=grid,
        n_e=COMMON["n_e"],
        n_i=COMMON["n_i"],
        voltage=VoltageSpec(COMMON["threshold"], COMMON["reversal"]),
        synapse=synapse,
        time=TimeConstants(tau_ee, tau_ie, tau_i, COMMON["tau_r"]),
        drive=alternating_drive(grid, lambda_even, zeta),
    )


def preset_zeta(name: str) -> float:
    return PRESETS[name.upper()][4]


def preset_ratio_e(name: str) -> float:
    return PRESETS[name.upper()][3]


def isolated_neuron(rate_hz: float = 6000.0, threshold: int = 100, tau_r: float = 4.0) -> ModelConfig:
    """A single unconnected excitatory neuron under Poisson drive."""
    grid = GridSpec(1, 1)
    zero = ((0.0, 0.0), (0.0, 0.0))
    return ModelConfig(
        grid=grid,
        n_e=1,
        n_i=0,
        voltage=VoltageSpec(threshold, 66),
        synapse=SynapseMatrix(zero, zero, COMMON["strength"]),
        time=TimeConstants(1.0, 1.0, 1.0, tau_r),
        drive=DriveField.uniform(grid, rate_hz, 0.0),
    )


def iter_types() -> Iterable[tuple[int, str]]:
    return enumerate(TYPES)
