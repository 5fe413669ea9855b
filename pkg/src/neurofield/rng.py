"""Seeding and the xoshiro256** generator shared by both simulation kernels.

A user seed (any nonnegative integer) is expanded with
:class:`numpy.random.SeedSequence`.  Child 0 seeds the NumPy generator used for
initial conditions; child 1 provides the four 64-bit words of the kernel's
xoshiro256** state.  Ensembles derive one 64-bit seed per trajectory with
:func:`trajectory_seeds`, so trajectory ``i`` of an ensemble is reproducible on
its own by calling ``run`` with ``trajectory_seeds(master, n)[i]``.

Derived variates (identical formulas in both kernels):

* ``uniform_open``  = ``((x >> 11) + 1) * 2**-53``, in ``(0, 1]``
* ``uniform``       = ``(x >> 11) * 2**-53``, in ``[0, 1)``
* ``below(n)``      = ``((x >> 32) * n) >> 32``, in ``[0, n)``
* ``exponential``   = 256-layer Marsaglia-Tsang ziggurat on the top 53 bits,
  tables from :func:`exp_ziggurat_tables`
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

MASK64 = (1 << 64) - 1
INV53 = 1.0 / 9007199254740992.0


def _seed_sequence(seed: int) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.SeedSequence(seed)


def init_generator(seed: int) -> np.random.Generator:
    child = _seed_sequence(seed).spawn(2)[0]
    return np.random.Generator(np.random.PCG64(child))


def kernel_state(seed: int) -> np.ndarray:
    child = _seed_sequence(seed).spawn(2)[1]
    state = child.generate_state(4, np.uint64)
    if not state.any():
        state[0] = 1
    return state


def trajectory_seeds(master: int, n: int) -> list[int]:
    """Deterministic per-trajectory 64-bit seeds derived from ``master``."""
    children = _seed_sequence(master).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def derive_seed(master: int, *keys: int) -> int:
    """A 64-bit seed for the work item addressed by integer ``keys``."""
    seq = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, np.uint64)[0])


def stream_generator(master: int, index: int) -> np.random.Generator:
    """Independent NumPy generator for work item ``index`` of a ``master`` seed."""
    return np.random.Generator(np.random.PCG64(trajectory_seeds(master, index + 1)[index]))


ZIG_R = 7.69711747013104972
ZIG_V = 0.0039496598225815571993


@lru_cache(maxsize=None)
def exp_ziggurat_tables() -> tuple[tuple[int, ...], tuple[float, ...], tuple[float, ...]]:
    """Acceptance bounds ``ke`` and layer widths ``we``/heights ``fe``."""
    m = float(2**53)
    ke = [0] * 256
    we = [0.0] * 256
    fe = [0.0] * 256
    de = ZIG_R
    te = de
    q = ZIG_V / math.exp(-de)
    ke[0] = int((de / q) * m)
    ke[1] = 0
    we[0] = q / m
    we[255] = de / m
    fe[0] = 1.0
    fe[255] = math.exp(-de)
    for i in range(254, 0, -1):
        de = -math.log(ZIG_V / de + math.exp(-de))
        ke[i + 1] = int((de / te) * m)
        te = de
        fe[i] = math.exp(-de)
        we[i] = de / m
    return tuple(ke), tuple(we), tuple(fe)


class Xoshiro256:
    """Pure-Python xoshiro256** (Blackman & Vigna), bit-compatible with the kernel."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, state):
        self.s0, self.s1, self.s2, self.s3 = (int(w) for w in state)

    def next64(self) -> int:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        x = (s1 * 5) & MASK64
        result = ((((x << 7) | (x >> 57)) & MASK64) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def uniform_open(self) -> float:
        return ((self.next64() >> 11) + 1) * INV53

    def uniform(self) -> float:
        return (self.next64() >> 11) * INV53

    def below(self, n: int) -> int:
        return ((self.next64() >> 32) * n) >> 32

    def exponential(self) -> float:
        ke, we, fe = exp_ziggurat_tables()
        while True:
            ri = self.next64() >> 3
            idx = ri & 0xFF
            ri >>= 8
            x = ri * we[idx]
            if ri < ke[idx]:
                return x
            if idx == 0:
                return ZIG_R - math.log(self.uniform_open())
            if (fe[idx - 1] - fe[idx]) * self.uniform() + fe[idx] < math.exp(-x):
                return x

    def state(self) -> list[int]:
        return [self.s0, self.s1, self.s2, self.s3]
