"""Estimators on spike logs: rates, windowed counts, correlations, miss fractions.

Sample variances and covariances use the ``n - 1`` convention throughout.
Times are absolute simulation times in ms; ``burn_in`` is an absolute time
before which spikes are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import E, I
from .simulator import SpikeLog

DEFAULT_BURN_IN = 500.0
SELECTORS = ("E", "I", "total")


@dataclass(frozen=True)
class RateTable:
    """Per-neuron firing rates in Hz, shape ``(n_pop, 2)`` (E, I columns)."""

    rate: np.ndarray
    counts: np.ndarray
    duration_ms: float


@dataclass(frozen=True)
class WindowCounts:
    """Spike counts per window, shape ``(n_pop, 2, n_windows)``."""

    window_ms: float
    t0: float
    counts: np.ndarray

    @property
    def n_windows(self) -> int:
        return self.counts.shape[2]

    def series(self, pop: int, selector: str) -> np.ndarray:
        if selector == "E":
            return self.counts[pop, E]
        if selector == "I":
            return self.counts[pop, I]
        if selector == "total":
            return self.counts[pop].sum(axis=0)
        raise ValueError(f"selector must be one of {SELECTORS}, got {selector!r}")


@dataclass(frozen=True)
class CorrelationResult:
    a: tuple[int, str]
    b: tuple[int, str]
    covariance: float
    pearson: float          # nan when undefined
    n_samples: int

    @property
    def defined(self) -> bool:
        return not math.isnan(self.pearson)


def _window(log: SpikeLog, burn_in: float) -> tuple[float, float]:
    t0 = max(log.t_start, burn_in)
    t1 = log.t_end
    if not t1 > t0:
        raise ValueError(f"no data after burn-in: burn_in={burn_in}, log ends at {t1}")
    return t0, t1


def firing_rates(log: SpikeLog, burn_in: float = 0.0) -> RateTable:
    t0, t1 = _window(log, burn_in)
    cfg = log.config
    times, gids = log.slice(t0, t1)
    npp = cfg.n_per_pop
    pops = gids // npp
    types = (gids % npp >= cfg.n_e).astype(np.int64)
    counts = np.zeros((cfg.grid.size, 2), dtype=np.int64)
    np.add.at(counts, (pops, types), 1)
    sizes = np.array([cfg.n_e, cfg.n_i], dtype=float)
    dur = t1 - t0
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(sizes > 0, counts / (sizes * dur) * 1000.0, 0.0)
    return RateTable(rate=rate, counts=counts, duration_ms=dur)


def ensemble_rates(tables: Sequence[RateTable]) -> tuple[np.ndarray, np.ndarray]:
    """Mean rate and its standard error across independent trajectories."""
    arr = np.stack([t.rate for t in tables])
    mean = arr.mean(axis=0)
    if len(tables) < 2:
        return mean, np.full_like(mean, np.nan)
    return mean, arr.std(axis=0, ddof=1) / math.sqrt(len(tables))


def window_counts(log: SpikeLog, window_ms: float, burn_in: float = 0.0) -> WindowCounts:
    """Counts in consecutive windows from ``max(t_start, burn_in)``; the partial last window is dropped."""
    if not window_ms > 0:
        raise ValueError(f"window must be positive, got {window_ms}")
    t0, t1 = _window(log, burn_in)
    cfg = log.config
    k = int(math.floor((t1 - t0) / window_ms + 1e-9))
    counts = np.zeros((cfg.grid.size, 2, k), dtype=np.int64)
    if k == 0:
        return WindowCounts(window_ms, t0, counts)
    times, gids = log.slice(t0, t0 + k * window_ms)
    w = np.minimum(((times - t0) / window_ms).astype(np.int64), k - 1)
    npp = cfg.n_per_pop
    np.add.at(counts, (gids // npp, (gids % npp >= cfg.n_e).astype(np.int64), w), 1)
    return WindowCounts(window_ms, t0, counts)


def dictionary_map(xi: Sequence[int], n):
    """Bucket index: smallest ``i`` (1-based) with ``n <= xi[i]``, else ``len(xi) + 1``."""
    edges = np.asarray(xi)
    if edges.size and np.any(np.diff(edges) <= 0):
        raise ValueError(f"dictionary must be strictly increasing, got {list(xi)}")
    out = np.searchsorted(edges, np.asarray(n), side="left") + 1
    return int(out) if np.ndim(out) == 0 else out


def correlate(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Sample covariance and Pearson coefficient (nan if either variance is 0)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two series of equal length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    cov = float(dx @ dy) / (x.size - 1)
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return cov, math.nan
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return cov, max(-1.0, min(1.0, r))


def spike_correlation(counts: WindowCounts, a: tuple[int, str], b: tuple[int, str],
                      dictionary: Sequence[int] | None = None) -> CorrelationResult:
    """Correlation of windowed counts of population/selector pairs ``a`` and ``b``."""
    if counts.n_windows < 2:
        raise ValueError(f"need at least 2 windows, got {counts.n_windows}")
    x = counts.series(*a)
    y = counts.series(*b)
    if dictionary is not None:
        x = dictionary_map(dictionary, x)
        y = dictionary_map(dictionary, y)
    cov, r = correlate(x, y)
    return CorrelationResult(tuple(a), tuple(b), cov, r, int(counts.n_windows))


def pooled_correlation(results: Sequence[CorrelationResult]) -> CorrelationResult:
    """Sample-size-weighted mean over trajectories (undefined entries skipped)."""
    ok = [r for r in results if r.defined]
    if not ok:
        first = results[0]
        return CorrelationResult(first.a, first.b, math.nan, math.nan, 0)
    w = np.array([r.n_samples for r in ok], dtype=float)
    cov = float(np.dot(w, [r.covariance for r in ok]) / w.sum())
    rho = float(np.dot(w, [r.pearson for r in ok]) / w.sum())
    return CorrelationResult(ok[0].a, ok[0].b, cov, rho, int(w.sum()))


def additional_miss_fraction(log: SpikeLog) -> np.ndarray:
    """``missed / delivered - refractory_time / (n_target * elapsed)``, shape ``(2, 2, n_pop)``
    indexed ``[target][source][pop]``; nan where nothing was delivered."""
    cfg = log.config
    sizes = np.array([cfg.n_e, cfg.n_i], dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac_time = log.refractory_time / (sizes[:, None] * log.elapsed)
        frac_time = np.where(sizes[:, None] > 0, frac_time, 0.0)
        miss = log.missed / log.delivered
    eps = miss - frac_time[:, None, :]
    return np.where(log.delivered > 0, eps, np.nan)


def pooled_miss_fraction(logs: Sequence[SpikeLog]) -> np.ndarray:
    """Additional miss fraction from counts summed over several logs."""
    cfg = logs[0].config
    sizes = np.array([cfg.n_e, cfg.n_i], dtype=float)
    delivered = sum(lg.delivered for lg in logs)
    missed = sum(lg.missed for lg in logs)
    refr = sum(lg.refractory_time for lg in logs)
    elapsed = sum(lg.elapsed for lg in logs)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac_time = np.where(sizes[:, None] > 0, refr / (sizes[:, None] * elapsed), 0.0)
        eps = missed / delivered - frac_time[:, None, :]
    return np.where(delivered > 0, eps, np.nan)


def harmonic(n: int) -> float:
    return math.fsum(1.0 / k for k in range(1, n + 1))


def window_size_heuristic(n_q: int, tau_q: float, threshold: int, lam: float,
                          tau_r: float) -> tuple[float, float]:
    """Window bounds: expected maximum of ``n_q`` exponential delays, and one drive cycle.

    ``lam`` is the per-neuron drive in kicks/ms.
    """
    if min(n_q, tau_q, threshold, lam, tau_r) <= 0:
        raise ValueError("all inputs must be positive")
    return tau_q * harmonic(n_q), threshold / lam + tau_r


def coefficient_of_variation(samples) -> float:
    """Sample sd / sample mean; nan when the mean is 0 or fewer than 2 samples."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return math.nan
    m = x.mean()
    if m == 0.0:
        return math.nan
    return float(x.std(ddof=1) / m)


def bootstrap_se(samples, stat, n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of ``stat`` (a function of a 1-D array)."""
    x = np.asarray(samples)
    rng = np.random.default_rng(seed)
    vals = np.array([stat(x[rng.integers(0, x.size, x.size)]) for _ in range(n_boot)])
    return float(vals.std(ddof=1))


def first_event_size(times: np.ndarray, n_ref: int, bin_ms: float = 1.0,
                     t_max: float = 100.0, onset_frac: float = 0.05,
                     floor_frac: float = 0.02) -> tuple[int, float, float]:
    """Spike count of the first synchronous volley in a sorted spike-time array.

    Spikes are binned at ``bin_ms``.  The volley starts in the first bin with
    at least ``onset_frac * n_ref`` spikes and extends in both directions over
    adjacent bins holding at least ``floor_frac * n_ref`` spikes.  Returns
    ``(size, start, stop)``; size 0 when no bin reaches the onset level.
    """
    nb = int(round(t_max / bin_ms))
    h = np.bincount((np.asarray(times)[np.asarray(times) < nb * bin_ms] / bin_ms).astype(np.int64),
                    minlength=nb)[:nb]
    on = max(1, math.ceil(onset_frac * n_ref))
    low = max(1, math.ceil(floor_frac * n_ref))
    hit = np.nonzero(h >= on)[0]
    if hit.size == 0:
        return 0, math.nan, math.nan
    a = b = int(hit[0])
    while a > 0 and h[a - 1] >= low:
        a -= 1
    while b + 1 < nb and h[b + 1] >= low:
        b += 1
    return int(h[a:b + 1].sum()), a * bin_ms, (b + 1) * bin_ms
