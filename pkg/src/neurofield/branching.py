"""Stopped Galton-Watson cascades as a toy model of volley-size variability.

``Z_0 = 1``, ``Z_{n+1} = X_1 + ... + X_{Z_n}`` with ``X_i ~ Binomial(n_e, p)``
and ``S_T = Z_1 + ... + Z_T`` for an independent integer stopping time ``T``.
Since a sum of ``Z_n`` iid ``Binomial(n_e, p)`` is ``Binomial(n_e * Z_n, p)``,
each generation costs one binomial draw per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .statistics import bootstrap_se, coefficient_of_variation


@dataclass(frozen=True)
class StopTime:
    """Distribution of the stopping generation ``T >= 1``.

    ``kind`` is ``fixed`` (``T = a``), ``uniform`` (uniform on ``{a..b}``) or
    ``geometric`` (``P(T = k) = q (1 - q)^(k - 1)``, success probability ``q``).
    """

    kind: str
    a: int = 1
    b: int = 1
    q: float = 0.5

    def __post_init__(self):
        if self.kind == "fixed" and self.a < 1:
            raise ValueError("fixed stopping time must be >= 1")
        elif self.kind == "uniform" and not 1 <= self.a <= self.b:
            raise ValueError(f"uniform stopping time needs 1 <= a <= b, got {self.a}, {self.b}")
        elif self.kind == "geometric" and not 0.0 < self.q <= 1.0:
            raise ValueError(f"geometric q must lie in (0, 1], got {self.q}")
        elif self.kind not in ("fixed", "uniform", "geometric"):
            raise ValueError(f"unknown stopping time kind {self.kind!r}")

    def support(self) -> tuple[np.ndarray, np.ndarray] | None:
        if self.kind == "fixed":
            return np.array([self.a]), np.array([1.0])
        if self.kind == "uniform":
            k = np.arange(self.a, self.b + 1)
            return k, np.full(k.size, 1.0 / k.size)
        return None

    @property
    def mean(self) -> float:
        if self.kind == "geometric":
            return 1.0 / self.q
        k, w = self.support()
        return float(np.dot(k, w))

    @property
    def var(self) -> float:
        if self.kind == "geometric":
            return (1.0 - self.q) / self.q ** 2
        k, w = self.support()
        return float(np.dot(k * k, w) - np.dot(k, w) ** 2)

    def mgf(self, t: float) -> float:
        """``E[exp(t T)]`` (inf where it diverges)."""
        if self.kind == "geometric":
            r = (1.0 - self.q) * math.exp(t)
            return math.inf if r >= 1.0 else self.q * math.exp(t) / (1.0 - r)
        k, w = self.support()
        return float(np.dot(np.exp(t * k), w))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, self.a, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.a, self.b + 1, size=n)
        return rng.geometric(self.q, size=n).astype(np.int64)


@dataclass(frozen=True)
class BranchingParams:
    n_e: int
    p: float
    stop: StopTime

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.n_e < 0:
            raise ValueError(f"n_e must be >= 0, got {self.n_e}")

    @property
    def mu(self) -> float:
        return self.n_e * self.p

    @property
    def sigma2(self) -> float:
        return self.n_e * self.p * (1.0 - self.p)

    @classmethod
    def uniform_voltage(cls, n_e: int = 300, p_ee: float = 0.15, s_ee: float = 5.0,
                        threshold: int = 100, stop: StopTime | None = None) -> "BranchingParams":
        """Effective ``p = P_EE * S_EE / threshold``: the chance that one kick
        lands a uniformly placed neuron within reach of threshold."""
        return cls(n_e, p_ee * s_ee / threshold, stop or StopTime("uniform", 3, 6))


def simulate_generations(params: BranchingParams, n_samples: int, seed: int,
                         truncate: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``(Z, T)`` with ``Z[i, k-1] = Z_k`` for ``k <= T[i]`` (zero beyond).

    With ``truncate`` a cascade stops growing once its running total exceeds
    ``n_e``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    t = params.stop.sample(rng, n_samples)
    gens = int(t.max())
    z = np.ones(n_samples, dtype=np.int64)
    total = np.zeros(n_samples, dtype=np.int64)
    out = np.zeros((n_samples, gens), dtype=np.int64)
    for k in range(1, gens + 1):
        alive = t >= k
        if truncate:
            alive &= total <= params.n_e
        z = np.where(alive, rng.binomial(params.n_e * z, params.p), 0)
        out[:, k - 1] = z
        total += z
    return out, t


def simulate_stopped_sum(params: BranchingParams, n_samples: int, seed: int,
                         truncate: bool = False) -> np.ndarray:
    """iid samples of ``S_T``."""
    z, _ = simulate_generations(params, n_samples, seed, truncate)
    return z.sum(axis=1)


def mean_stopped_sum(mu: float, n: int) -> float:
    """``E[S_n] = mu + mu^2 + ... + mu^n``."""
    return math.fsum(mu ** k for k in range(1, n + 1))


def variance_lower_bound(mu: float, sigma2: float, n: int) -> float:
    """``Var[S_n] >= sigma^2 (1 + mu^2 + ... + mu^(2n-2))``."""
    return sigma2 * math.fsum(mu ** (2 * k) for k in range(n))


def expected_stopped_sum(params: BranchingParams) -> float:
    """``E[S_T] = mu (M_T(log mu) - 1) / (mu - 1)`` (or ``E[T]`` when ``mu = 1``)."""
    mu = params.mu
    if mu == 1.0:
        return params.stop.mean
    if mu == 0.0:
        return 0.0
    return mu * (params.stop.mgf(math.log(mu)) - 1.0) / (mu - 1.0)


def cv_lower_bound(mu: float, sigma: float) -> float:
    """``sigma sqrt(mu - 1) / (mu sqrt(mu + 1))``, valid for supercritical cascades."""
    if not mu > 1.0:
        raise ValueError(f"bound requires mu > 1, got {mu}")
    return sigma * math.sqrt(mu - 1.0) / (mu * math.sqrt(mu + 1.0))


@dataclass(frozen=True)
class CvReport:
    mu: float
    bound: float
    cv: float
    se: float
    n_samples: int

    @property
    def margin(self) -> float:
        """How far the sample CV sits above ``bound - 4 SE``."""
        return self.cv - (self.bound - 4.0 * self.se)

    @property
    def holds(self) -> bool:
        return self.margin >= 0.0


def empirical_cv_check(params: BranchingParams, n_samples: int, seed: int,
                       n_boot: int = 200) -> CvReport:
    mu = params.mu
    if not mu > 1.0:
        raise ValueError(f"check requires mu > 1, got {mu}")
    if params.stop.mgf(2.0 * math.log(mu)) == math.inf:
        raise ValueError("stopping time has no finite moment generating function at 2 log mu")
    s = simulate_stopped_sum(params, n_samples, seed)
    cv = coefficient_of_variation(s)
    if math.isnan(cv):
        raise ValueError("sample mean is zero; CV undefined")
    se = bootstrap_se(s, coefficient_of_variation, n_boot=n_boot, seed=seed + 1)
    return CvReport(mu, cv_lower_bound(mu, math.sqrt(params.sigma2)), cv, se, n_samples)
