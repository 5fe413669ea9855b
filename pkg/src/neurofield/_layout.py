"""Flattened, engine-ready form of a :class:`ModelConfig`.

Both the compiled kernel and the pure-Python kernel consume the arrays built
here, so every table (alias tables, drive prefix sums, integer Bernoulli
thresholds) is computed once, in one place, and bitwise-identical input is
guaranteed for the two backends.

Neuron layout: global id ``g = pop * (n_e + n_i) + k`` with excitatory
neurons at ``k < n_e``.

Channel layout (event classes of the jump process)::

    0 ext-E   1 ext-I
    2 pend-EE 3 pend-IE 4 pend-EI 5 pend-II     (target, source)
    6 refr-E  7 refr-I

Pending channel ``2 + 2 * source + target`` holds kicks from ``source``
neurons waiting to land on ``target`` neurons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import E, I, ModelConfig, check, neighbor_lists

CHANNELS = (
    "ext-E", "ext-I",
    "pend-EE", "pend-IE", "pend-EI", "pend-II",
    "refr-E", "refr-I",
)
EXT_E, EXT_I, PEND_EE, PEND_IE, PEND_EI, PEND_II, REFR_E, REFR_I = range(8)
PEND_NAMES = ("EE", "IE", "EI", "II")
REFRACTORY = -(2**31)
TWO64 = 2**64
TWO32 = 2**32


def pend_channel(target: int, source: int) -> int:
    return 2 + 2 * source + target


def pend_slot(target: int, source: int) -> int:
    """Index 0..3 of a pending channel in per-channel accounting arrays."""
    return 2 * source + target


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """Binomial(n, p) pmf for 0 < p < 1, in log space so subnormal p stays finite."""
    k = np.arange(n + 1)
    logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    pmf = np.exp(logc + k * math.log(p) + (n - k) * math.log1p(-p))
    return pmf / pmf.sum()


def alias_table(pmf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table with 32-bit integer acceptance thresholds.

    Sampling: ``col = (hi32 * K) >> 32``; accept ``col`` when
    ``lo32 < thresh[col]``, else take ``alias[col]``.
    """
    k = len(pmf)
    scaled = np.asarray(pmf, dtype=float) * k / float(np.sum(pmf))
    prob = np.zeros(k)
    alias = np.arange(k, dtype=np.int64)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    thresh = np.minimum(np.round(prob * TWO32), TWO32).astype(np.int64)
    return thresh, alias


def fraction_threshold(q: float) -> int:
    """Integer cut such that ``next64() < cut`` has probability ``q``."""
    if q <= 0.0:
        return 0
    return min(int(q * TWO64), TWO64 - 1)


@dataclass
class Layout:
    n_pop: int
    n_e: int
    n_i: int
    threshold: int
    reversal: int
    allow_self_kick: bool
    inv_tau: np.ndarray        # (4,) per pending slot
    inv_tau_r: float
    ext_rate: np.ndarray       # (2, n_pop) per-population totals, kicks/ms
    ext_total: np.ndarray      # (2,)
    ext_sum: float             # total external kick rate, all types and populations
    ext_thresh: np.ndarray     # (2 * n_pop,) alias table over (type, population)
    ext_alias: np.ndarray
    kick_base: np.ndarray      # (4,) floor of strength per pending slot
    kick_frac: np.ndarray      # (4,) uint64-as-object thresholds for the +1 Bernoulli
    nb_ptr: np.ndarray         # CSR neighbour lists
    nb_idx: np.ndarray
    # Binomial target-count tables: index [slot * 3 + kind], kind 0 = home
    # population, 1 = home population without the spiking neuron, 2 = neighbour.
    tab_offset: np.ndarray
    tab_size: np.ndarray
    tab_thresh: np.ndarray
    tab_alias: np.ndarray

    @property
    def n_per_pop(self) -> int:
        return self.n_e + self.n_i

    @property
    def n_neurons(self) -> int:
        return self.n_pop * self.n_per_pop


def build_layout(config: ModelConfig) -> Layout:
    check(config)
    syn = config.synapse
    lam_e, lam_i = config.drive.per_ms()
    n_pop = config.grid.size
    ext_rate = np.vstack([lam_e * config.n_e, lam_i * config.n_i])
    ext_total = np.array([math.fsum(ext_rate[E]), math.fsum(ext_rate[I])])
    ext_sum = math.fsum(ext_rate.ravel())
    if ext_sum > 0:
        ext_thresh, ext_alias = alias_table(ext_rate.ravel())
    else:
        ext_thresh = np.zeros(2 * n_pop, dtype=np.int64)
        ext_alias = np.arange(2 * n_pop, dtype=np.int64)

    inv_tau = np.zeros(4)
    kick_base = np.zeros(4, dtype=np.int64)
    kick_frac = np.zeros(4, dtype=np.uint64)
    for tgt in (E, I):
        for src in (E, I):
            slot = pend_slot(tgt, src)
            inv_tau[slot] = 1.0 / config.time.kick_delay(tgt, src)
            s = syn.strength[tgt][src]
            base = math.floor(s)
            kick_base[slot] = base
            kick_frac[slot] = fraction_threshold(s - base)

    nbs = neighbor_lists(config.grid)
    nb_ptr = np.zeros(n_pop + 1, dtype=np.int64)
    for p, lst in enumerate(nbs):
        nb_ptr[p + 1] = nb_ptr[p] + len(lst)
    nb_idx = np.array([q for lst in nbs for q in lst], dtype=np.int64)

    offsets, sizes, threshs, aliases = [], [], [], []
    pos = 0
    for src in (E, I):
        for tgt in (E, I):
            n_tgt = config.n_of(tgt)
            for kind, (n, p) in enumerate((
                (n_tgt, syn.p_local[tgt][src]),
                (max(n_tgt - 1, 0), syn.p_local[tgt][src]),
                (n_tgt, syn.p_neighbor[tgt][src]),
            )):
                if 0.0 < p < 1.0:
                    pmf = binomial_pmf(n, p)
                elif p <= 0.0:
                    pmf = np.zeros(n + 1)
                    pmf[0] = 1.0
                else:
                    pmf = np.zeros(n + 1)
                    pmf[n] = 1.0
                th, al = alias_table(pmf)
                offsets.append(pos)
                sizes.append(n + 1)
                threshs.append(th)
                aliases.append(al)
                pos += n + 1
    return Layout(
        n_pop=n_pop,
        n_e=config.n_e,
        n_i=config.n_i,
        threshold=config.voltage.threshold,
        reversal=config.voltage.reversal,
        allow_self_kick=config.allow_self_kick,
        inv_tau=inv_tau,
        inv_tau_r=1.0 / config.time.tau_r,
        ext_rate=ext_rate,
        ext_total=ext_total,
        ext_sum=ext_sum,
        ext_thresh=ext_thresh,
        ext_alias=ext_alias,
        kick_base=kick_base,
        kick_frac=kick_frac,
        nb_ptr=nb_ptr,
        nb_idx=nb_idx,
        tab_offset=np.array(offsets, dtype=np.int64),
        tab_size=np.array(sizes, dtype=np.int64),
        tab_thresh=np.concatenate(threshs).astype(np.int64),
        tab_alias=np.concatenate(aliases).astype(np.int64),
    )
