"""Pure-Python event kernel.

Reference implementation of the jump-process kernel.  The compiled backend
(``_kernel.c``, wrapped by ``_engine.pyx``) ports it step for step and must
consume the random stream identically.  Any change here has to be mirrored
there (``tests/test_backends.py`` checks bitwise agreement).

Two clocks drive the process.  External kicks form a Poisson stream whose
total rate never changes, so the next arrival is scheduled once and kept.
Internal events (pending-kick deliveries and refractory exits) share one
exponential clock whose rate depends on the state; it is redrawn after every
event that changes that rate, which by memorylessness leaves the law of the
process unchanged.  Scheduled times survive a horizon stop, so advancing to
``t1`` and then to ``t2`` is the same trajectory as advancing to ``t2``.
"""

from __future__ import annotations

import math

import numpy as np

from ._layout import Layout, REFRACTORY
from .rng import Xoshiro256

HORIZON = -1
ABSORBING = -2
_LO32 = 0xFFFFFFFF


class PyEngine:
    backend = "python"

    def __init__(self, layout: Layout, voltages: np.ndarray, rng_state, t0: float = 0.0):
        self.lay = layout
        n_pop = layout.n_pop
        self.n_pop = n_pop
        self.n_e = layout.n_e
        self.n_i = layout.n_i
        self.npp = layout.n_e + layout.n_i
        self.threshold = layout.threshold
        self.reversal = layout.reversal
        self.allow_self = bool(layout.allow_self_kick)
        self.inv_tau = [float(x) for x in layout.inv_tau]
        self.inv_tau_r = float(layout.inv_tau_r)
        self.kick_base = [int(x) for x in layout.kick_base]
        self.kick_frac = [int(x) for x in layout.kick_frac]
        self.nb = [
            [int(q) for q in layout.nb_idx[layout.nb_ptr[p]:layout.nb_ptr[p + 1]]]
            for p in range(n_pop)
        ]
        self.tab_offset = [int(x) for x in layout.tab_offset]
        self.tab_size = [int(x) for x in layout.tab_size]
        self.tab_thresh = [int(x) for x in layout.tab_thresh]
        self.tab_alias = [int(x) for x in layout.tab_alias]
        self.ext_sum = float(layout.ext_sum)
        self.ext_thresh = [int(x) for x in layout.ext_thresh]
        self.ext_alias = [int(x) for x in layout.ext_alias]

        self.rng = Xoshiro256(rng_state)
        self.t = float(t0)

        n = layout.n_neurons
        v = np.asarray(voltages, dtype=np.int64)
        if v.shape != (n,):
            raise ValueError(f"expected {n} voltages, got shape {v.shape}")
        self.v = [int(x) for x in v]
        self.h_e = [0] * n
        self.h_i = [0] * n
        self.n_spikes = [0] * n
        self.n_exits = [0] * n
        self.pos = [-1] * n
        self.bags: list[list[int]] = [[], [], [], []]
        self.refr: list[list[int]] = [[], []]
        self.pend_count = [[0] * n_pop for _ in range(4)]
        self.refr_count = [[0] * n_pop for _ in range(2)]
        self.refr_time = [[0.0] * n_pop for _ in range(2)]
        self.refr_last = [[self.t] * n_pop for _ in range(2)]
        self.delivered = [[0] * n_pop for _ in range(4)]
        self.missed = [[0] * n_pop for _ in range(4)]
        self.ext_arrivals = [[0] * n_pop for _ in range(2)]
        self.ext_missed = [[0] * n_pop for _ in range(2)]
        self.stamp = [0] * max(self.n_e, self.n_i, 1)
        self.token = 0
        self.spike_t: list[float] = []
        self.spike_g: list[int] = []

        for g in range(n):
            if self.v[g] == REFRACTORY:
                q = 0 if g % self.npp < self.n_e else 1
                self.pos[g] = len(self.refr[q])
                self.refr[q].append(g)
                self.refr_count[q][g // self.npp] += 1

        self.t_ext = math.inf
        if self.ext_sum > 0.0:
            self.t_ext = self.t + self.rng.exponential() / self.ext_sum
        self.t_int = math.inf
        self._redraw()

    # -- random helpers -------------------------------------------------

    def _alias(self, table: int) -> int:
        off = self.tab_offset[table]
        x = self.rng.next64()
        col = ((x >> 32) * self.tab_size[table]) >> 32
        if (x & _LO32) < self.tab_thresh[off + col]:
            return col
        return self.tab_alias[off + col]

    # -- bookkeeping ----------------------------------------------------

    def _refr_touch(self, q: int, p: int) -> None:
        self.refr_time[q][p] += self.refr_count[q][p] * (self.t - self.refr_last[q][p])
        self.refr_last[q][p] = self.t

    def _push(self, slot: int, src: int, pop: int, gid: int) -> None:
        self.bags[slot].append(gid)
        if src == 0:
            self.h_e[gid] += 1
        else:
            self.h_i[gid] += 1
        self.pend_count[slot][pop] += 1

    def _choose(self, k: int, n_cand: int, skip: int, slot: int, src: int, pop: int, base: int) -> None:
        if k == 0:
            return
        rng = self.rng
        stamp = self.stamp
        self.token += 1
        token = self.token
        if 2 * k <= n_cand:
            got = 0
            while got < k:
                c = ((rng.next64() >> 32) * n_cand) >> 32
                if stamp[c] != token:
                    stamp[c] = token
                    got += 1
                    if skip >= 0 and c >= skip:
                        c += 1
                    self._push(slot, src, pop, base + c)
        else:
            excluded = n_cand - k
            got = 0
            while got < excluded:
                c = ((rng.next64() >> 32) * n_cand) >> 32
                if stamp[c] != token:
                    stamp[c] = token
                    got += 1
            for c in range(n_cand):
                if stamp[c] != token:
                    cc = c + 1 if (skip >= 0 and c >= skip) else c
                    self._push(slot, src, pop, base + cc)

    def _spike(self, g: int) -> None:
        npp = self.npp
        p = g // npp
        k = g - p * npp
        src = 0 if k < self.n_e else 1
        self.v[g] = REFRACTORY
        self._refr_touch(src, p)
        self.refr_count[src][p] += 1
        self.pos[g] = len(self.refr[src])
        self.refr[src].append(g)
        self.n_spikes[g] += 1
        self.spike_t.append(self.t)
        self.spike_g.append(g)
        local_self = k if src == 0 else k - self.n_e
        for tgt in (0, 1):
            slot = 2 * src + tgt
            n_tgt = self.n_e if tgt == 0 else self.n_i
            offset = 0 if tgt == 0 else self.n_e
            if tgt == src and not self.allow_self:
                kk = self._alias(slot * 3 + 1)
                self._choose(kk, n_tgt - 1, local_self, slot, src, p, p * npp + offset)
            else:
                kk = self._alias(slot * 3)
                self._choose(kk, n_tgt, -1, slot, src, p, p * npp + offset)
            for q in self.nb[p]:
                kk = self._alias(slot * 3 + 2)
                self._choose(kk, n_tgt, -1, slot, src, q, q * npp + offset)

    # -- dynamics -------------------------------------------------------

    def _internal_rates(self):
        it = self.inv_tau
        r0 = len(self.bags[0]) * it[0]
        r1 = len(self.bags[1]) * it[1]
        r2 = len(self.bags[2]) * it[2]
        r3 = len(self.bags[3]) * it[3]
        r4 = len(self.refr[0]) * self.inv_tau_r
        r5 = len(self.refr[1]) * self.inv_tau_r
        c0 = r0
        c1 = c0 + r1
        c2 = c1 + r2
        c3 = c2 + r3
        c4 = c3 + r4
        c5 = c4 + r5
        return (r0, r1, r2, r3, r4, r5), (c0, c1, c2, c3, c4, c5)

    def _redraw(self) -> None:
        total = self._internal_rates()[1][5]
        if total > 0.0:
            self.t_int = self.t + self.rng.exponential() / total
        else:
            self.t_int = math.inf

    def total_rate(self) -> float:
        return self.ext_sum + self._internal_rates()[1][5]

    def step(self, t_end: float = math.inf) -> tuple[int, int]:
        """Apply one event; returns ``(channel, spiking gid or -1)``.

        Returns ``(HORIZON, -1)`` when the next event falls after ``t_end``
        (the clock moves to ``t_end``, scheduled events are kept) and
        ``(ABSORBING, -1)`` when no event can ever occur.
        """
        t_ext = self.t_ext
        t_int = self.t_int
        if t_ext == math.inf and t_int == math.inf:
            return ABSORBING, -1
        nxt = t_ext if t_ext <= t_int else t_int
        if nxt > t_end:
            self.t = t_end
            return HORIZON, -1
        self.t = nxt
        rng = self.rng
        spiked = -1

        if t_ext <= t_int:
            x = rng.next64()
            col = ((x >> 32) * (2 * self.n_pop)) >> 32
            if (x & _LO32) >= self.ext_thresh[col]:
                col = self.ext_alias[col]
            q = 0 if col < self.n_pop else 1
            p = col - q * self.n_pop
            if q == 0:
                g = p * self.npp + rng.below(self.n_e)
            else:
                g = p * self.npp + self.n_e + rng.below(self.n_i)
            self.ext_arrivals[q][p] += 1
            vg = self.v[g]
            if vg == REFRACTORY:
                self.ext_missed[q][p] += 1
            else:
                vg += 1
                self.v[g] = vg
                if vg >= self.threshold:
                    self._spike(g)
                    spiked = g
            self.t_ext = self.t + rng.exponential() / self.ext_sum
            if spiked >= 0:
                self._redraw()
            return q, spiked

        rates, cum = self._internal_rates()
        r = rng.uniform() * cum[5]
        c = 0
        for cc in cum:
            if cc <= r:
                c += 1
        if c == 6:
            c = 5
            while rates[c] <= 0.0:
                c -= 1
        ch = c + 2

        if ch < 6:
            slot = ch - 2
            bag = self.bags[slot]
            j = rng.below(len(bag))
            g = bag[j]
            bag[j] = bag[-1]
            bag.pop()
            p = g // self.npp
            if slot < 2:
                self.h_e[g] -= 1
            else:
                self.h_i[g] -= 1
            self.pend_count[slot][p] -= 1
            self.delivered[slot][p] += 1
            u = rng.next64()
            vg = self.v[g]
            if vg == REFRACTORY:
                self.missed[slot][p] += 1
            else:
                mag = self.kick_base[slot] + (1 if u < self.kick_frac[slot] else 0)
                vg = vg + mag if slot < 2 else vg - mag
                if vg < -self.reversal:
                    vg = -self.reversal
                self.v[g] = vg
                if vg >= self.threshold:
                    self._spike(g)
                    spiked = g
        else:
            q = ch - 6
            lst = self.refr[q]
            j = rng.below(len(lst))
            g = lst[j]
            tail = lst[-1]
            lst[j] = tail
            self.pos[tail] = j
            lst.pop()
            self.pos[g] = -1
            p = g // self.npp
            self._refr_touch(q, p)
            self.refr_count[q][p] -= 1
            self.v[g] = 0
            self.n_exits[g] += 1
        self._redraw()
        return ch, spiked

    def advance(self, t_end: float) -> int:
        """Step until the clock reaches ``t_end``; returns HORIZON or ABSORBING."""
        while True:
            ch, _ = self.step(t_end)
            if ch == HORIZON:
                return HORIZON
            if ch == ABSORBING:
                if self.t < t_end:
                    self.t = t_end
                return ABSORBING

    # -- export ---------------------------------------------------------

    def flush(self) -> None:
        for q in (0, 1):
            for p in range(self.n_pop):
                self._refr_touch(q, p)

    def arrays(self) -> dict:
        self.flush()
        return dict(
            v=np.array(self.v, dtype=np.int64),
            h_e=np.array(self.h_e, dtype=np.int64),
            h_i=np.array(self.h_i, dtype=np.int64),
            n_spikes=np.array(self.n_spikes, dtype=np.int64),
            n_exits=np.array(self.n_exits, dtype=np.int64),
            pend_count=np.array(self.pend_count, dtype=np.int64),
            refr_count=np.array(self.refr_count, dtype=np.int64),
            refr_time=np.array(self.refr_time, dtype=float),
            delivered=np.array(self.delivered, dtype=np.int64),
            missed=np.array(self.missed, dtype=np.int64),
            ext_arrivals=np.array(self.ext_arrivals, dtype=np.int64),
            ext_missed=np.array(self.ext_missed, dtype=np.int64),
        )

    def bag(self, slot: int) -> np.ndarray:
        return np.array(self.bags[slot], dtype=np.int64)

    def refractory_list(self, q: int) -> np.ndarray:
        return np.array(self.refr[q], dtype=np.int64)

    def spikes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.spike_t, dtype=float), np.array(self.spike_g, dtype=np.int64)

    def clear_spikes(self) -> None:
        self.spike_t.clear()
        self.spike_g.clear()

    @property
    def clock(self) -> float:
        return self.t

    def rng_state(self) -> list[int]:
        return self.rng.state()
