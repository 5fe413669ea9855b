"""Deterministic multiple-firing-event (MFE) equations.

State per population: ``(H_E, G_E, R_E, H_I, G_I, R_I)``.  ``H`` counts
neurons whose spikes are still pending (fractionally), ``G`` neurons within
one excitatory kick of threshold (the gate), ``R`` neurons that have fired
and stay refractory for the rest of the event.

Units are ms; drive ``lam_e``/``lam_i`` is in kicks per ms per neuron.
``inv_tau_i = 0`` is an exact code path for the infinitely slow inhibition
limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .model import E, I, GridSpec, ModelConfig, neighbor_lists

H_E, G_E, R_E, H_I, G_I, R_I = range(6)
VARS = ("h_e", "g_e", "r_e", "h_i", "g_i", "r_i")


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MfeParams:
    n_e: float = 300.0
    n_i: float = 100.0
    p_ee: float = 0.15
    p_ie: float = 0.5
    p_ei: float = 0.5
    p_ii: float = 0.4
    s_ee: float = 5.0
    s_ie: float = 2.0
    s_ei: float = 3.0
    s_ii: float = 3.5
    tau_e: float = 2.0
    inv_tau_i: float = 1.0 / 4.5
    lam_e: float = 0.0
    lam_i: float = 0.0
    c_e: float = 0.01
    c_i: float = 0.01
    # neighbour connection probabilities (grid version only)
    rho_ee: float = 0.0
    rho_ie: float = 0.0
    rho_ei: float = 0.0
    rho_ii: float = 0.0

    @property
    def tau_i(self) -> float:
        return math.inf if self.inv_tau_i == 0 else 1.0 / self.inv_tau_i

    def with_tau_i(self, tau_i: float) -> "MfeParams":
        return replace(self, inv_tau_i=0.0 if math.isinf(tau_i) else 1.0 / tau_i)

    @classmethod
    def from_config(cls, config: ModelConfig, tau_e: float | None = None,
                    lam_hz: float = 0.0, c_e: float | None = None,
                    c_i: float | None = None) -> "MfeParams":
        """Sizes, probabilities and strengths from a model configuration.

        ``c_e``/``c_i`` default to ``1 / threshold``.
        """
        syn = config.synapse
        c_default = 1.0 / config.voltage.threshold
        return cls(
            n_e=float(config.n_e), n_i=float(config.n_i),
            p_ee=syn.p_local[E][E], p_ie=syn.p_local[I][E],
            p_ei=syn.p_local[E][I], p_ii=syn.p_local[I][I],
            s_ee=syn.strength[E][E], s_ie=syn.strength[I][E],
            s_ei=syn.strength[E][I], s_ii=syn.strength[I][I],
            tau_e=config.time.tau_ee if tau_e is None else tau_e,
            inv_tau_i=1.0 / config.time.tau_i,
            lam_e=lam_hz / 1000.0, lam_i=lam_hz / 1000.0,
            c_e=c_default if c_e is None else c_e,
            c_i=c_default if c_i is None else c_i,
            rho_ee=syn.p_neighbor[E][E], rho_ie=syn.p_neighbor[I][E],
            rho_ei=syn.p_neighbor[E][I], rho_ii=syn.p_neighbor[I][I],
        )


def mfe_rhs(y, p: MfeParams) -> list[float]:
    """Right-hand side for one population (plain floats, for speed).

    Evaluated in the same order as :func:`mfe_grid_rhs`, so the two agree
    bit for bit when neighbour probabilities are zero.
    """
    he, ge, re, hi, gi, ri = y
    ite = 1.0 / p.tau_e
    iti = p.inv_tau_i
    j_ee = p.p_ee * he
    j_ie = p.p_ie * he
    j_ei = p.p_ei * hi
    j_ii = p.p_ii * hi
    fire_e = (ite * j_ee + p.lam_e / p.s_ee) * ge
    fire_i = (ite * j_ie + p.lam_i / p.s_ie) * gi
    net_e = ite * p.s_ee * j_ee + p.lam_e - iti * p.s_ei * j_ei
    net_i = ite * p.s_ie * j_ie + p.lam_i - iti * p.s_ii * j_ii
    return [
        -ite * he + fire_e,
        p.c_e * max(net_e, 0.0) * (p.n_e - ge - re)
        - iti * max(p.s_ei / p.s_ee, 1.0) * j_ei * ge - fire_e,
        fire_e,
        -iti * hi + fire_i,
        p.c_i * max(net_i, 0.0) * (p.n_i - gi - ri)
        - iti * max(p.s_ii / p.s_ie, 1.0) * j_ii * gi - fire_i,
        fire_i,
    ]


def _adjacency(grid: GridSpec) -> np.ndarray:
    adj = np.zeros((grid.size, grid.size))
    for a, nbs in enumerate(neighbor_lists(grid)):
        adj[a, nbs] = 1.0
    return adj


def mfe_grid_rhs(states: np.ndarray, p: MfeParams, adjacency: np.ndarray,
                 inv_tau_i=None, lam=None) -> np.ndarray:
    """Grid version; ``states`` has shape ``(..., n_pop, 6)``.

    Pending spikes reach a population through ``J = P * H_home + rho * sum(H_neighbours)``.
    ``inv_tau_i`` may be an array broadcasting against the leading batch axes
    (used for parameter sweeps); it defaults to ``p.inv_tau_i``.  ``lam``
    likewise overrides both drives (per ms) when given.
    """
    s = np.asarray(states, dtype=float)
    he, ge, re, hi, gi, ri = np.moveaxis(s, -1, 0)
    nb_he = he @ adjacency.T
    nb_hi = hi @ adjacency.T
    j_ee = p.p_ee * he + p.rho_ee * nb_he
    j_ie = p.p_ie * he + p.rho_ie * nb_he
    j_ei = p.p_ei * hi + p.rho_ei * nb_hi
    j_ii = p.p_ii * hi + p.rho_ii * nb_hi
    ite = 1.0 / p.tau_e
    iti = p.inv_tau_i if inv_tau_i is None else inv_tau_i
    lam_e, lam_i = (p.lam_e, p.lam_i) if lam is None else (lam, lam)
    fire_e = (ite * j_ee + lam_e / p.s_ee) * ge
    fire_i = (ite * j_ie + lam_i / p.s_ie) * gi
    net_e = np.maximum(ite * p.s_ee * j_ee + lam_e - iti * p.s_ei * j_ei, 0.0)
    net_i = np.maximum(ite * p.s_ie * j_ie + lam_i - iti * p.s_ii * j_ii, 0.0)
    out = np.empty_like(s)
    out[..., H_E] = -ite * he + fire_e
    out[..., G_E] = (p.c_e * net_e * (p.n_e - ge - re)
                     - iti * max(p.s_ei / p.s_ee, 1.0) * j_ei * ge - fire_e)
    out[..., R_E] = fire_e
    out[..., H_I] = -iti * hi + fire_i
    out[..., G_I] = (p.c_i * net_i * (p.n_i - gi - ri)
                     - iti * max(p.s_ii / p.s_ie, 1.0) * j_ii * gi - fire_i)
    out[..., R_I] = fire_i
    return out


@dataclass(frozen=True)
class MfeTrajectory:
    times: np.ndarray
    states: np.ndarray      # (n_steps + 1, 6) or (n_steps + 1, n_pop, 6)

    def var(self, name: str, pop: int | None = None) -> np.ndarray:
        k = VARS.index(name)
        if self.states.ndim == 2:
            return self.states[:, k]
        return self.states[:, pop, k]


def _rk4(f: Callable, y0: np.ndarray, t_end: float, dt: float) -> MfeTrajectory:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a whole number of steps of dt={dt}")
    y = np.array(y0, dtype=float)
    out = np.empty((n + 1,) + y.shape)
    out[0] = y
    for k in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(y).all():
            raise IntegrationError(f"non-finite state at t={(k + 1) * dt:.6g} ms")
        np.maximum(y, 0.0, out=y)
        out[k + 1] = y
    return MfeTrajectory(np.arange(n + 1) * dt, out)


def _rk4_scalar(p: MfeParams, y0, t_end: float, dt: float) -> MfeTrajectory:
    """Single-population RK4 on Python floats (much faster than small NumPy arrays)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a whole number of steps of dt={dt}")
    y = [float(v) for v in y0]
    rows = [tuple(y)]
    h2 = 0.5 * dt
    h6 = dt / 6.0
    rng6 = range(6)
    for k in range(n):
        k1 = mfe_rhs(y, p)
        k2 = mfe_rhs([y[i] + h2 * k1[i] for i in rng6], p)
        k3 = mfe_rhs([y[i] + h2 * k2[i] for i in rng6], p)
        k4 = mfe_rhs([y[i] + dt * k3[i] for i in rng6], p)
        y = [y[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in rng6]
        if not all(math.isfinite(v) for v in y):
            raise IntegrationError(f"non-finite state at t={(k + 1) * dt:.6g} ms")
        y = [v if v > 0.0 else 0.0 for v in y]
        rows.append(tuple(y))
    return MfeTrajectory(np.arange(n + 1) * dt, np.array(rows))


def integrate(initial, p: MfeParams, t_end: float, dt: float = 1e-3) -> MfeTrajectory:
    """Fixed-step RK4 for one population, clamping negative values to 0 after each step."""
    return _rk4_scalar(p, initial, t_end, dt)


def integrate_grid(initial: np.ndarray, p: MfeParams, grid: GridSpec, t_end: float,
                   dt: float = 1e-3) -> MfeTrajectory:
    init = np.asarray(initial, dtype=float).reshape(grid.size, 6)
    adj = _adjacency(grid)
    return _rk4(lambda y: mfe_grid_rhs(y, p, adj), init, t_end, dt)


def sweep_tau_i(initial, p: MfeParams, tau_is, t_end: float, dt: float = 1e-3,
                grid: GridSpec | None = None, lams=None) -> list:
    """Integrate the same initial state for several ``tau_i`` values in one batch.

    ``initial`` is one sextuple (single population) or ``(n_pop, 6)`` with
    ``grid``.  Returns one trajectory per ``tau_i``, shaped like the
    unbatched integrators' output.  With ``lams`` (drives in kicks per ms)
    the drive is swept too and the result is a list over ``lams`` of such
    lists.
    """
    grid = grid or GridSpec(1, 1)
    single = np.asarray(initial).ndim == 1
    init = np.asarray(initial, dtype=float).reshape(grid.size, 6)
    inv = [0.0 if math.isinf(t) else 1.0 / t for t in tau_is]
    lam_list = [None] if lams is None else [float(x) for x in lams]
    n_t = len(inv)
    inv_b = np.tile(inv, len(lam_list))[:, None]
    lam_b = None if lams is None else np.repeat(lam_list, n_t)[:, None]
    batch = np.broadcast_to(init, (inv_b.shape[0], grid.size, 6)).copy()
    adj = _adjacency(grid)
    traj = _rk4(lambda y: mfe_grid_rhs(y, p, adj, inv_b, lam_b), batch, t_end, dt)
    out = []
    for b in range(inv_b.shape[0]):
        st = traj.states[:, b, 0, :] if single else traj.states[:, b]
        out.append(MfeTrajectory(traj.times, np.ascontiguousarray(st)))
    if lams is None:
        return out
    return [out[i * n_t:(i + 1) * n_t] for i in range(len(lam_list))]


def first_local_min(x: np.ndarray, rtol: float = 1e-9) -> int | None:
    """Index of the first interior local minimum, ignoring relative changes below ``rtol``.

    Flat stretches are skipped, so a plateau between a fall and a rise counts
    as a minimum (its first sample is returned).
    """
    falling = False
    lowest = None
    for i in range(1, len(x)):
        scale = max(abs(x[i]), abs(x[i - 1]), 1e-300)
        d = x[i] - x[i - 1]
        if d < -rtol * scale:
            falling = True
            lowest = i
        elif d > rtol * scale and falling:
            return lowest
    return None


def event_size(traj: MfeTrajectory, cap: float = 20.0, pop: int | None = None,
               rtol: float = 1e-9) -> tuple[float, float, float]:
    """``(R_E, R_I, t_stop)`` at ``min(cap, first local minimum of H_E)``."""
    if traj.times[-1] < cap - 1e-12:
        raise ValueError(f"trajectory ends at {traj.times[-1]} ms, before the {cap} ms cap")
    stop = int(np.searchsorted(traj.times, cap - 1e-12))
    h = traj.var("h_e", pop)[: stop + 1]
    i = first_local_min(h, rtol)
    if i is not None and i < stop:
        stop = i
    return float(traj.var("r_e", pop)[stop]), float(traj.var("r_i", pop)[stop]), float(traj.times[stop])


# ----------------------------------------------------------------------------
# slow-inhibition limit (tau_e = 1, lambda = 0, 1/tau_i = 0)


def limit_deltas(p: MfeParams) -> tuple[float, float]:
    """Rates at which the gate fills per unit pending excitation, in the limit system."""
    return p.c_e * p.s_ee * p.p_ee, p.c_i * p.s_ie * p.p_ie


@dataclass(frozen=True)
class LimitClosedForm:
    u_of_v: Callable[[float], float]
    h_of_v: Callable[[float], float]
    r_star: float
    delta_e: float
    delta_i: float
    h0: float


def limit_closed_form(p: MfeParams, h0: float) -> LimitClosedForm:
    """Exact curves of the limit system in terms of ``v = H_E - R_E`` and the final ``R_E``.

    ``u(v) = G_E + R_E`` and ``H_E(v)``; ``R*`` is minus the greatest root
    of ``H_E(v)`` below ``h0``.
    """
    d_e, d_i = limit_deltas(p)
    n, pe = p.n_e, p.p_ee
    if d_e == pe:
        raise ValueError("closed form needs delta_E != P_EE")
    if not h0 > 0:
        raise ValueError(f"h0 must be positive, got {h0}")

    def u_of_v(v):
        return n * (1.0 - math.exp(d_e * (v - h0)))

    def h_of_v(v):
        return n + v + n / (d_e - pe) * (pe * math.exp(d_e * (v - h0)) - d_e * math.exp(pe * (v - h0)))

    # scan downward from h0 for the first sign change, then refine
    grid = np.linspace(h0, -n, 20001)[1:]
    vals = np.array([h_of_v(v) for v in grid])
    neg = np.nonzero(vals <= 0)[0]
    if neg.size == 0:
        raise ValueError("no root of H_E(v) in [-N_E, h0)")
    j = neg[0]
    if vals[j] == 0:
        root = grid[j]
    else:
        hi = grid[j - 1] if j > 0 else h0
        root = brentq(h_of_v, grid[j], hi, xtol=1e-14, maxiter=200)
    return LimitClosedForm(u_of_v, h_of_v, -float(root), d_e, d_i, h0)


def theorem_constants(p: MfeParams) -> tuple[float, float, float]:
    """``(m, alpha, beta)`` of the slow-inhibition bound."""
    d_e, d_i = limit_deltas(p)
    m = min(d_e, p.p_ee)
    alpha = p.p_ee * p.n_e ** 2 * math.exp(-p.n_e * m)
    beta = p.n_i * (math.exp(-d_i * p.n_e) + math.exp(-p.p_ie * p.n_e))
    return m, alpha, beta


def limit_r_i(p: MfeParams, r_star: float, h0: float) -> float:
    """Final ``R_I`` of the limit system given ``R*``."""
    _, d_i = limit_deltas(p)
    b = r_star + h0
    return p.n_i * (1.0 - math.exp(-d_i * b) - math.exp(-p.p_ie * b) * (1.0 - math.exp(-d_i * b)))


@dataclass(frozen=True)
class LimitReport:
    r_e: float
    r_i: float
    alpha: float
    beta: float
    margin_e: float         # R_E - (N_E - alpha)
    margin_i: float
    holds: bool


def verify_limit_theorem(p: MfeParams, h0: float, tau_i: float = 1e6, t_end: float = 60.0,
                         dt: float = 1e-3, tol: float = 1e-6) -> LimitReport:
    """Integrate from ``(h0, 0, 0, 0, 0, 0)`` at large finite ``tau_i`` and compare with the bounds."""
    _, alpha, beta = theorem_constants(p)
    if not h0 > alpha:
        raise ValueError(f"h0={h0} must exceed alpha={alpha}")
    q = replace(p, tau_e=1.0, lam_e=0.0, lam_i=0.0).with_tau_i(tau_i)
    traj = integrate([h0, 0, 0, 0, 0, 0], q, t_end, dt)
    r_e = float(traj.states[-1, R_E])
    r_i = float(traj.states[-1, R_I])
    m_e = r_e - (p.n_e - alpha)
    m_i = r_i - (p.n_i - beta)
    return LimitReport(r_e, r_i, alpha, beta, m_e, m_i, m_e > -tol and m_i > -tol)


@dataclass(frozen=True)
class OracleErrors:
    max_err_u: float        # max |u(t) - u(v(t))| along the trajectory
    max_err_h: float        # max |H_E(t) - H_E(v(t))|
    r_e: float              # final R_E
    r_i: float              # final R_I
    closed: LimitClosedForm


def limit_oracle_errors(p: MfeParams, h0: float, t_end: float = 60.0,
                        dt: float = 1e-3) -> OracleErrors:
    """Integrate the exact limit system (``tau_e = 1``, no drive, ``1/tau_i = 0``)
    from ``(h0, 0, 0, 0, 0, 0)`` and compare with the closed-form curves."""
    q = replace(p, tau_e=1.0, lam_e=0.0, lam_i=0.0, inv_tau_i=0.0)
    cf = limit_closed_form(q, h0)
    traj = integrate([h0, 0, 0, 0, 0, 0], q, t_end, dt)
    st = traj.states
    v = st[:, H_E] - st[:, R_E]
    u = st[:, G_E] + st[:, R_E]
    err_u = max(abs(a - cf.u_of_v(b)) for a, b in zip(u.tolist(), v.tolist()))
    err_h = max(abs(a - cf.h_of_v(b)) for a, b in zip(st[:, H_E].tolist(), v.tolist()))
    return OracleErrors(err_u, err_h, float(st[-1, R_E]), float(st[-1, R_I]), cf)
