"""Exact simulation of the grid jump process.

The heavy lifting happens in an event kernel (compiled C when available,
pure Python otherwise).  This module wraps it with initial conditions, a
state snapshot, spike logs with kick-miss accounting, ensembles and CSV I/O.

Backend selection happens at import: the compiled kernel is used when it
imports, unless ``NEUROFIELD_BACKEND=python`` is set.  Both kernels consume
the random stream identically, so results do not depend on the backend.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import _engine_py
from ._layout import CHANNELS, PEND_NAMES, REFRACTORY, Layout, build_layout, pend_slot
from .model import E, I, TYPES, ConfigError, ModelConfig, PopulationIndex, population_label
from .rng import init_generator, kernel_state, trajectory_seeds

try:
    from . import _engine as _compiled
except ImportError:  # pragma: no cover - exercised only without a build
    _compiled = None

HORIZON = _engine_py.HORIZON
ABSORBING = _engine_py.ABSORBING
WORKERS_ENV = "NEUROFIELD_WORKERS"
BACKEND_ENV = "NEUROFIELD_BACKEND"


def available_backends() -> list[str]:
    return (["cython"] if _compiled is not None else []) + ["python"]


def default_backend() -> str:
    want = os.environ.get(BACKEND_ENV, "auto").lower()
    if want == "python" or _compiled is None:
        if want == "cython":
            raise ConfigError("compiled backend requested but not built")
        return "python"
    return "cython"


def _engine_class(backend: str | None):
    backend = backend or default_backend()
    if backend == "python":
        return _engine_py.PyEngine
    if backend == "cython":
        if _compiled is None:
            raise ConfigError("compiled backend requested but not built")
        return _compiled.Engine
    raise ConfigError(f"unknown backend {backend!r}; expected one of {available_backends()}")


@lru_cache(maxsize=64)
def _layout_for(config: ModelConfig) -> Layout:
    return build_layout(config)


# ----------------------------------------------------------------------------
# initial conditions

INIT_MODES = ("all-refractory", "all-zero", "uniform-range", "mixture")


@dataclass(frozen=True)
class InitSpec:
    """Initial voltages.  ``mixture`` draws Uniform{lo..hi} with probability
    ``p_uniform`` and otherwise the integer part of Normal(mean, sd), clamped
    to the voltage range."""

    mode: str = "all-zero"
    seed: int = 0
    lo: int = 0
    hi: int = 80
    p_uniform: float = 0.2
    gauss_mean: float = 0.0
    gauss_sd: float = 20.0

    def with_seed(self, seed: int) -> "InitSpec":
        return replace(self, seed=seed)


def _check_init(spec: InitSpec, config: ModelConfig) -> None:
    if spec.mode not in INIT_MODES:
        raise ConfigError(f"init mode must be one of {INIT_MODES}, got {spec.mode!r}")
    if spec.seed < 0:
        raise ConfigError(f"init seed must be nonnegative, got {spec.seed}")
    if spec.mode in ("uniform-range", "mixture"):
        vmin, vmax = -config.voltage.reversal, config.voltage.threshold - 1
        if not vmin <= spec.lo <= spec.hi <= vmax:
            raise ConfigError(
                f"init range [{spec.lo}, {spec.hi}] must satisfy {vmin} <= lo <= hi <= {vmax}"
            )
    if spec.mode == "mixture":
        if not 0.0 <= spec.p_uniform <= 1.0:
            raise ConfigError(f"p_uniform must lie in [0, 1], got {spec.p_uniform}")
        if not spec.gauss_sd >= 0.0:
            raise ConfigError(f"gauss_sd must be >= 0, got {spec.gauss_sd}")


def initial_voltages(config: ModelConfig, spec: InitSpec) -> np.ndarray:
    """Flat voltage vector (``REFRACTORY`` marks refractory neurons)."""
    _check_init(spec, config)
    n = config.grid.size * config.n_per_pop
    if spec.mode == "all-refractory":
        return np.full(n, REFRACTORY, dtype=np.int64)
    if spec.mode == "all-zero":
        return np.zeros(n, dtype=np.int64)
    rng = init_generator(spec.seed)
    unif = rng.integers(spec.lo, spec.hi + 1, size=n)
    if spec.mode == "uniform-range":
        return unif.astype(np.int64)
    pick = rng.random(n) < spec.p_uniform
    gauss = np.trunc(rng.normal(spec.gauss_mean, spec.gauss_sd, size=n))
    gauss = np.clip(gauss, -config.voltage.reversal, config.voltage.threshold - 1)
    return np.where(pick, unif, gauss).astype(np.int64)


# ----------------------------------------------------------------------------
# state


class NetworkState:
    """Live simulation state: neurons, pending kicks and the event kernel.

    Use :func:`init` to construct.  A state is single-threaded while it runs.
    """

    def __init__(self, config: ModelConfig, engine, layout: Layout):
        self.config = config
        self.engine = engine
        self.layout = layout

    @property
    def clock(self) -> float:
        return self.engine.clock

    @property
    def backend(self) -> str:
        return self.engine.backend

    def _reshape(self, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = self.config
        per_pop = flat.reshape(c.grid.size, c.n_per_pop)
        return per_pop[:, : c.n_e], per_pop[:, c.n_e:]

    def snapshot(self) -> dict:
        """Per-neuron arrays, shaped ``(n_pop, n_type)`` for each type.

        ``voltage`` is masked (``refractory`` is True) where a neuron is in
        the refractory state.
        """
        a = self.engine.arrays()
        refr = a["v"] == REFRACTORY
        out = {}
        for name, arr in (("voltage", a["v"]), ("refractory", refr),
                          ("pending_e", a["h_e"]), ("pending_i", a["h_i"])):
            e_part, i_part = self._reshape(arr)
            out[name] = (e_part.copy(), i_part.copy())
        return out

    def pools(self) -> dict[str, np.ndarray]:
        """Aggregate counts per channel and population, as the kernel keeps them."""
        a = self.engine.arrays()
        c = self.config
        pools = {
            "ext-E": np.full(c.grid.size, c.n_e, dtype=np.int64),
            "ext-I": np.full(c.grid.size, c.n_i, dtype=np.int64),
        }
        for slot, name in enumerate(PEND_NAMES):
            pools["pend-" + name] = a["pend_count"][slot].copy()
        pools["refr-E"] = a["refr_count"][E].copy()
        pools["refr-I"] = a["refr_count"][I].copy()
        return pools

    def recount(self) -> dict[str, np.ndarray]:
        """The same pools recomputed from per-neuron state."""
        s = self.snapshot()
        c = self.config
        pools = {
            "ext-E": np.full(c.grid.size, c.n_e, dtype=np.int64),
            "ext-I": np.full(c.grid.size, c.n_i, dtype=np.int64),
        }
        for tgt in (E, I):
            for src in (E, I):
                h = s["pending_e" if src == E else "pending_i"][tgt]
                pools["pend-" + PEND_NAMES[pend_slot(tgt, src)]] = h.sum(axis=1)
        pools["refr-E"] = s["refractory"][E].sum(axis=1).astype(np.int64)
        pools["refr-I"] = s["refractory"][I].sum(axis=1).astype(np.int64)
        return pools


def init(config: ModelConfig, spec: InitSpec, backend: str | None = None,
         t0: float = 0.0) -> NetworkState:
    """Build a state: voltages per ``spec``, no pending kicks, seeded kernel."""
    layout = _layout_for(config)
    volts = initial_voltages(config, spec)
    engine = _engine_class(backend)(layout, volts, kernel_state(spec.seed), t0)
    return NetworkState(config, engine, layout)


def init_from_voltages(config: ModelConfig, voltages, seed: int, backend: str | None = None,
                       t0: float = 0.0) -> NetworkState:
    """Build a state from an explicit flat voltage vector (``REFRACTORY`` marks refractory)."""
    layout = _layout_for(config)
    v = np.asarray(voltages, dtype=np.int64).copy()
    if v.shape != (layout.n_neurons,):
        raise ConfigError(f"expected {layout.n_neurons} voltages, got shape {v.shape}")
    live = v[v != REFRACTORY]
    if live.size and (live.min() < -config.voltage.reversal or live.max() >= config.voltage.threshold):
        raise ConfigError("voltages must lie in [-reversal, threshold - 1] or be REFRACTORY")
    engine = _engine_class(backend)(layout, v, kernel_state(seed), t0)
    return NetworkState(config, engine, layout)


# ----------------------------------------------------------------------------
# spike logs


@dataclass
class SpikeLog:
    """Spikes and kick accounting over the interval ``[t_start, t_start + elapsed)``.

    ``times``/``gids`` list spikes in time order (``gid = pop * (n_e + n_i) + k``
    with 0-based ``k``, excitatory first).  Count arrays are indexed
    ``[target][source][pop]``; external arrays ``[type][pop]``.
    """

    config: ModelConfig
    t_start: float
    elapsed: float
    times: np.ndarray
    gids: np.ndarray
    delivered: np.ndarray
    missed: np.ndarray
    refractory_time: np.ndarray
    ext_arrivals: np.ndarray
    ext_missed: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return self.t_start + self.elapsed

    @property
    def n_spikes(self) -> int:
        return int(self.times.size)

    @property
    def pops(self) -> np.ndarray:
        return self.gids // self.config.n_per_pop

    @property
    def types(self) -> np.ndarray:
        return (self.gids % self.config.n_per_pop >= self.config.n_e).astype(np.int64)

    def events(self) -> list[tuple[float, PopulationIndex, str, int]]:
        """Spikes as ``(time, population, type, k)`` with 1-based ``k`` within the population."""
        grid = self.config.grid
        npp = self.config.n_per_pop
        return [
            (float(t), grid.unflat(int(g) // npp), TYPES[int(q)], int(g) % npp + 1)
            for t, g, q in zip(self.times, self.gids, self.types)
        ]

    def slice(self, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.searchsorted(self.times, [t0, t1], side="left")
        return self.times[lo:hi], self.gids[lo:hi]


def _counters(engine) -> dict[str, np.ndarray]:
    a = engine.arrays()
    out = {}
    for key in ("delivered", "missed"):
        arr = a[key]
        # slot = 2 * source + target  ->  [target][source][pop]
        out[key] = np.stack([np.stack([arr[pend_slot(t, s)] for s in (E, I)]) for t in (E, I)])
    for key in ("refr_time", "ext_arrivals", "ext_missed"):
        out[key] = a[key].copy()
    return out


def step(state: NetworkState, t_end: float = float("inf")) -> tuple[str, int]:
    """Apply a single event; returns ``(channel name, spiking gid or -1)``.

    The names are ``horizon`` when the next event lies past ``t_end`` and
    ``absorbing`` when no event can occur.
    """
    ch, g = state.engine.step(t_end)
    if ch == HORIZON:
        return "horizon", -1
    if ch == ABSORBING:
        return "absorbing", -1
    return CHANNELS[ch], g


def run(state: NetworkState, t_end: float) -> SpikeLog:
    """Advance ``state`` to ``t_end`` and return the log of that interval."""
    t0 = state.clock
    if not t_end > t0:
        raise ConfigError(f"t_end={t_end} must exceed the current clock {t0}")
    eng = state.engine
    before = _counters(eng)
    eng.clear_spikes()
    status = eng.advance(t_end)
    after = _counters(eng)
    times, gids = eng.spikes()
    eng.clear_spikes()
    diff = {k: after[k] - before[k] for k in after}
    return SpikeLog(
        config=state.config,
        t_start=t0,
        elapsed=t_end - t0,
        times=times,
        gids=gids,
        delivered=diff["delivered"],
        missed=diff["missed"],
        refractory_time=diff["refr_time"],
        ext_arrivals=diff["ext_arrivals"],
        ext_missed=diff["ext_missed"],
        meta={"backend": state.backend, "absorbed": status == ABSORBING},
    )


def simulate(config: ModelConfig, spec: InitSpec, t_end: float, burn_in: float = 0.0,
             backend: str | None = None) -> SpikeLog:
    """Initialise, discard ``burn_in`` ms, then log until ``t_end``."""
    state = init(config, spec, backend)
    if burn_in > 0.0:
        if not burn_in < t_end:
            raise ConfigError(f"burn_in={burn_in} must be below t_end={t_end}")
        state.engine.advance(burn_in)
        state.engine.clear_spikes()
    log = run(state, t_end)
    log.meta["seed"] = spec.seed
    return log


def _ensemble_item(args):
    config, spec, t_end, burn_in, backend, reduce = args
    log = simulate(config, spec, t_end, burn_in, backend)
    return reduce(log) if reduce is not None else log


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def run_ensemble(config: ModelConfig, spec: InitSpec, t_end: float, n_trajectories: int,
                 seed: int, burn_in: float = 0.0, backend: str | None = None,
                 reduce: Callable[[SpikeLog], object] | None = None,
                 workers: int | None = None) -> list:
    """Independent trajectories seeded by ``trajectory_seeds(seed, n)``.

    ``reduce`` (if given) maps each log to a smaller summary inside the
    worker.  Results come back in trajectory order whatever the worker
    count, so the output does not depend on scheduling.
    """
    if n_trajectories < 1:
        raise ConfigError(f"n_trajectories must be >= 1, got {n_trajectories}")
    seeds = trajectory_seeds(seed, n_trajectories)
    items = [(config, spec.with_seed(s), t_end, burn_in, backend, reduce) for s in seeds]
    n_workers = min(worker_count(workers), n_trajectories)
    if n_workers == 1:
        return [_ensemble_item(it) for it in items]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_ensemble_item, items))


# ----------------------------------------------------------------------------
# CSV


SPIKE_HEADER = ("time_ms", "pop_m", "pop_n", "type", "neuron_index", "flat_index")
ACCOUNT_HEADER = ("channel", "pop_m", "pop_n", "delivered", "missed", "refractory_neuron_ms")


def fmt_float(x: float) -> str:
    return repr(float(x))


def write_spikes_csv(log: SpikeLog, path) -> None:
    """Spike log as CSV.  ``neuron_index`` is the 1-based position ``k`` in the
    population; ``flat_index`` is ``label * (n_e + n_i) + k`` with the
    column-major population label used for rasters."""
    cfg = log.config
    grid = cfg.grid
    npp = cfg.n_per_pop
    labels = [population_label(grid, grid.unflat(p)) for p in range(grid.size)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPIKE_HEADER)
        for t, g in zip(log.times.tolist(), log.gids.tolist()):
            p, k = divmod(g, npp)
            idx = grid.unflat(p)
            w.writerow((fmt_float(t), idx.m, idx.n, "E" if k < cfg.n_e else "I", k + 1,
                        labels[p] * npp + k + 1))


def read_spikes_csv(path, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_spikes_csv`: ``(times, gids)``."""
    grid = config.grid
    times, gids = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != SPIKE_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        for row in r:
            p = grid.flat(PopulationIndex(int(row[1]), int(row[2])))
            times.append(float(row[0]))
            gids.append(p * config.n_per_pop + int(row[4]) - 1)
    return np.array(times, dtype=float), np.array(gids, dtype=np.int64)


def account_rows(log: SpikeLog) -> list[tuple]:
    """Rows of the kick-accounting sidecar.

    Pending channels report delivered/missed synaptic kicks and the target
    type's refractory neuron-ms; external channels report arrivals and
    arrivals that found their neuron refractory.
    """
    grid = log.config.grid
    rows = []
    for p in range(grid.size):
        idx = grid.unflat(p)
        for q in (E, I):
            rows.append(("ext-" + TYPES[q], idx.m, idx.n, int(log.ext_arrivals[q, p]),
                         int(log.ext_missed[q, p]), fmt_float(log.refractory_time[q, p])))
        for src in (E, I):
            for tgt in (E, I):
                rows.append(("pend-" + TYPES[tgt] + TYPES[src], idx.m, idx.n,
                             int(log.delivered[tgt, src, p]), int(log.missed[tgt, src, p]),
                             fmt_float(log.refractory_time[tgt, p])))
    return rows


def write_accounting_csv(log: SpikeLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCOUNT_HEADER)
        w.writerows(account_rows(log))


def merge_counts(logs: Sequence[SpikeLog]) -> dict[str, np.ndarray]:
    """Summed accounting arrays over several logs of the same configuration."""
    keys = ("delivered", "missed", "refractory_time", "ext_arrivals", "ext_missed")
    out = {k: sum(getattr(lg, k) for lg in logs) for k in keys}
    out["elapsed"] = float(sum(lg.elapsed for lg in logs))
    return out
