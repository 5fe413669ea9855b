"""Mean-field firing-rate models and discrepancy measures.

All rates are per millisecond per neuron.  The unknown vector is ordered by
flat (row-major) population index with E before I::

    f = (f_E[0], f_I[0], f_E[1], f_I[1], ...)

Linear model:      A f = -lambda,  A = K - threshold * Id
Quadratic model:   threshold * f = (1 - tau_r * f) * (K f + lambda)

``K`` holds the home-population constants ``C`` on the diagonal blocks and
the neighbour constants ``D`` on blocks of adjacent populations, with
inhibitory columns negated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import E, I, ModelConfig, derived_constants, neighbor_lists
from .statistics import RateTable


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    matrix: np.ndarray
    rhs: np.ndarray


@dataclass(frozen=True)
class MeanFieldSolution:
    f_e: np.ndarray
    f_i: np.ndarray
    model: str
    residual: float = 0.0

    def vector(self) -> np.ndarray:
        return interleave(self.f_e, self.f_i)

    def as_hz(self) -> np.ndarray:
        """Rates in Hz, shape ``(n_pop, 2)``."""
        return np.column_stack([self.f_e, self.f_i]) * 1000.0


@dataclass(frozen=True)
class DiscrepancyReport:
    rel_e: float
    rel_i: float
    excluded: int = 0
    delta_f_e: np.ndarray | None = None
    delta_f_i: np.ndarray | None = None


def interleave(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(a))
    out[0::2] = a
    out[1::2] = b
    return out


def coupling_matrix(config: ModelConfig) -> np.ndarray:
    """``K``: mean net input per unit presynaptic rate, signed by source type."""
    dc = derived_constants(config)
    n_pop = config.grid.size
    k = np.zeros((2 * n_pop, 2 * n_pop))
    sign = (1.0, -1.0)
    for p, nbs in enumerate(neighbor_lists(config.grid)):
        for tgt in (E, I):
            row = 2 * p + tgt
            for src in (E, I):
                k[row, 2 * p + src] = sign[src] * dc.c[tgt][src]
                for q in nbs:
                    k[row, 2 * q + src] = sign[src] * dc.d[tgt][src]
    return k


def drive_vector(config: ModelConfig) -> np.ndarray:
    lam_e, lam_i = config.drive.per_ms()
    return interleave(lam_e, lam_i)


def build_linear_system(config: ModelConfig) -> LinearSystem:
    k = coupling_matrix(config)
    a = k - config.voltage.threshold * np.eye(k.shape[0])
    return LinearSystem(matrix=a, rhs=-drive_vector(config))


def _split(f: np.ndarray, model: str, residual: float = 0.0) -> MeanFieldSolution:
    return MeanFieldSolution(f_e=f[0::2].copy(), f_i=f[1::2].copy(), model=model,
                             residual=residual)


def solve_linear(system: LinearSystem, max_cond: float = 1e12) -> MeanFieldSolution:
    a, b = system.matrix, system.rhs
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > max_cond:
        raise SolverError(f"linear mean-field matrix is singular or ill-conditioned (cond ~ {cond:.3g})")
    f = np.linalg.solve(a, b)
    scale = max(np.linalg.norm(b), 1e-300)
    res = float(np.linalg.norm(a @ f - b) / scale) if np.any(b) else float(np.linalg.norm(a @ f))
    return _split(f, "linear", res)


def quadratic_residual(f: np.ndarray, k: np.ndarray, lam: np.ndarray, threshold: float,
                       tau_r: float) -> np.ndarray:
    return threshold * f - (1.0 - tau_r * f) * (k @ f + lam)


def _quadratic_jacobian(f, k, lam, threshold, tau_r):
    return (threshold * np.eye(f.size)
            - (1.0 - tau_r * f)[:, None] * k
            + tau_r * np.diag(k @ f + lam))


def _newton(f, k, lam, threshold, tau_r, tol, max_iter):
    r = quadratic_residual(f, k, lam, threshold, tau_r)
    norm = np.max(np.abs(r))
    for _ in range(max_iter):
        if norm <= tol:
            return f, norm, True
        step = np.linalg.solve(_quadratic_jacobian(f, k, lam, threshold, tau_r), -r)
        damp = 1.0
        while True:
            cand = f + damp * step
            rc = quadratic_residual(cand, k, lam, threshold, tau_r)
            nc = np.max(np.abs(rc))
            if nc < norm or damp < 1e-8:
                break
            damp *= 0.5
        if not nc < norm:
            return f, norm, norm <= tol
        f, r, norm = cand, rc, nc
    return f, norm, norm <= tol


def solve_quadratic(config: ModelConfig, tau_r: float | None = None, tol: float = 1e-10,
                    max_iter: int = 50, stages: int = 8, max_stages: int = 400) -> MeanFieldSolution:
    """Damped Newton with continuation in ``tau_r`` from the linear solution.

    The step in ``tau_r`` starts at ``tau_r / stages`` and is halved whenever
    a stage fails to converge within ``max_iter`` iterations.
    """
    tau_r = config.time.tau_r if tau_r is None else float(tau_r)
    if tau_r < 0:
        raise ValueError(f"tau_r must be >= 0, got {tau_r}")
    system = build_linear_system(config)
    f = solve_linear(system).vector()
    k = coupling_matrix(config)
    lam = drive_vector(config)
    m = float(config.voltage.threshold)
    f, res, ok = _newton(f, k, lam, m, 0.0, tol, max_iter)
    if tau_r == 0.0:
        return _split(f, "quadratic", float(res))
    t = 0.0
    h = tau_r / stages
    used = 0
    while t < tau_r:
        used += 1
        if used > max_stages:
            raise SolverError(f"continuation did not reach tau_r={tau_r} (stopped at {t}, residual {res:.3g})")
        nxt = min(tau_r, t + h)
        cand, res_c, ok = _newton(f.copy(), k, lam, m, nxt, tol, max_iter)
        if ok:
            f, res, t = cand, res_c, nxt
        else:
            h *= 0.5
            if h < tau_r * 1e-9:
                raise SolverError(f"Newton failed at tau_r={nxt}: residual {res_c:.3g}")
    return _split(f, "quadratic", float(res))


def periodic_rate(config: ModelConfig, pop: int) -> tuple[float, float]:
    """Rate of a neuron integrating drive alone then resting for ``tau_r``."""
    lam_e, lam_i = config.drive.per_ms()
    le, li = float(lam_e[pop]), float(lam_i[pop])
    if le != li:
        raise ValueError(f"periodic rate needs equal E and I drive, got {le} and {li} per ms")
    if le <= 0.0:
        raise ValueError("periodic rate undefined for zero drive")
    f = 1.0 / (config.voltage.threshold / le + config.time.tau_r)
    return f, f


def solve_periodic(config: ModelConfig) -> MeanFieldSolution:
    fs = np.array([periodic_rate(config, p)[0] for p in range(config.grid.size)])
    return MeanFieldSolution(fs, fs.copy(), "periodic")


def _rates_per_ms(empirical) -> np.ndarray:
    if isinstance(empirical, RateTable):
        return np.asarray(empirical.rate, dtype=float) / 1000.0
    return np.asarray(empirical, dtype=float)


def relative_errors(empirical, approx: MeanFieldSolution) -> DiscrepancyReport:
    """Signed mean of ``(f - f_approx) / f`` over populations, per type.

    ``empirical`` is a :class:`RateTable` (Hz) or an ``(n_pop, 2)`` array in
    per-ms units.  Populations with zero empirical rate are skipped and
    counted in ``excluded``.
    """
    f = _rates_per_ms(empirical)
    g = np.column_stack([approx.f_e, approx.f_i])
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: empirical {f.shape}, approximation {g.shape}")
    rel = []
    excluded = 0
    for q in (E, I):
        ok = f[:, q] != 0
        excluded += int((~ok).sum())
        rel.append(float(np.mean((f[ok, q] - g[ok, q]) / f[ok, q])) if ok.any() else math.nan)
    return DiscrepancyReport(rel_e=rel[0], rel_i=rel[1], excluded=excluded)


def net_current_gain(epsilon: np.ndarray, empirical, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Net E and I current gained through excess missed kicks, per population.

    ``epsilon`` is indexed ``[target][source][pop]`` as returned by
    :func:`~neurofield.statistics.additional_miss_fraction`.  The weights
    follow the naming where ``eps^{XY}`` is the excess fraction of kicks sent
    by type-X neurons to type-Y neurons (``epsilon[Y][X]``)::

        dF_E = sum eps^{EI} f_I C_EI - sum eps^{EE} f_E C_EE
        dF_I = sum eps^{II} f_I C_II - sum eps^{IE} f_E C_IE

    with each sum running over the home population (``C``) and its
    neighbours (``D``).  Rates as in :func:`relative_errors`; output is in
    the same per-ms units as the kick rates.
    """
    eps = np.asarray(epsilon, dtype=float)
    if np.isnan(eps).any():
        raise ValueError("additional miss fraction undefined for some channel")
    f = _rates_per_ms(empirical)
    dc = derived_constants(config)
    nbs = neighbor_lists(config.grid)

    def term(x, y, p):
        # eps^{xy} weighted by the rate of type y and the (x, y) constants
        total = eps[y, x, p] * f[p, y] * dc.c[x][y]
        for q in nbs[p]:
            total += eps[y, x, q] * f[q, y] * dc.d[x][y]
        return total

    n_pop = config.grid.size
    d_e = np.array([term(E, I, p) - term(E, E, p) for p in range(n_pop)])
    d_i = np.array([term(I, I, p) - term(I, E, p) for p in range(n_pop)])
    return d_e, d_i
