"""Agent subproblems: proximal step, inner minimization and the centralized
problem, all mapped onto ``ConvexProgram``.

The solver works in reduced coordinates ``y = [e, E1, tau]``:

* ``e``: all exchanges, building-major (``m * n_t``);
* ``E1``: one initial storage level (the copies inside ``x`` are equal);
* ``tau``: zone temperatures at breakpoints 1..n_t-1 of each building handled
  by the program. The last breakpoint equals the first and the wall state at
  the first breakpoint is the unique periodic one, so both equality
  constraints are eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .problem import AgentProblem
from .solver import (
    INFEASIBLE,
    OPTIMAL,
    ConvexProgram,
    IPState,
    LinearBlock,
    QuarticTerm,
    SolverError,
    SolverReport,
    interior_point,
)

TIE_BREAK = 1e-9
KKT_TOL = 1e-8


class ReducedMaps:
    """Affine maps from one building's ``tau`` to its temperatures, wall
    state and slot energies."""

    def __init__(self, prob: AgentProblem):
        n_t, n_z = prob.n_t, prob.llayout.n_z
        if n_t < 2:
            raise SolverError("horizon needs at least two slots")
        n_tau = (n_t - 1) * n_z
        S = np.zeros((n_t * n_z, n_tau))
        S[:n_tau] = np.eye(n_tau)
        S[n_tau:, :n_z] = np.eye(n_z)
        em = prob.emap
        K = np.eye(em.end_W.shape[0]) - em.end_W
        Wt = np.linalg.solve(K, em.end_T @ S)
        w0 = np.linalg.solve(K, em.end_0)
        self.S = S
        self.W_tau = Wt
        self.w0 = w0
        self.G = prob.G_T @ S + prob.G_W @ Wt
        self.g = prob.G_W @ w0 + prob.g
        lo, hi = prob.building.comfort_lo, prob.building.comfort_hi
        lo_t = lo[: n_t - 1].copy()
        hi_t = hi[: n_t - 1].copy()
        lo_t[0] = np.maximum(lo[0], lo[-1])
        hi_t[0] = np.minimum(hi[0], hi[-1])
        if np.any(lo_t > hi_t):
            raise SolverError(f"building {prob.building.name!r}: comfort bounds at the first and last breakpoint do not overlap")
        self.lo = lo_t.ravel()
        self.hi = hi_t.ravel()
        self.mid = 0.5 * (self.lo + self.hi)
        self.n_tau = n_tau

    def local(self, prob: AgentProblem, tau: np.ndarray) -> np.ndarray:
        temps = (self.S @ tau).reshape(prob.n_t, prob.llayout.n_z)
        return prob.llayout.pack(temps, self.W_tau @ tau + self.w0)

    def tau(self, prob: AgentProblem, u: np.ndarray) -> np.ndarray:
        temps, _ = prob.llayout.unpack(u)
        return temps[: prob.n_t - 1].ravel()


def _storage_block(agent: AgentProblem, e_cols: np.ndarray, e1_col: int) -> LinearBlock:
    n_t, m = agent.n_t, agent.district.m
    L, p = agent.L, agent.p
    cap = agent.district.storage.capacity
    # rows act on z = [S(1..n_t), E1]
    low = np.hstack([L[1:], -p[1:, None]])  # -E(t) <= 0
    high = -low  # E(t) <= cap
    term = np.hstack([L[n_t - 1], [1.0 - p[n_t - 1]]])[None, :]
    G = np.vstack([low, high, term])
    h = np.concatenate([np.zeros(n_t), np.full(n_t, cap), [0.0]])
    group = np.concatenate([np.tile(np.arange(n_t), m), [n_t]])
    return LinearBlock(np.concatenate([e_cols, [e1_col]]), G, h, group, name="storage")


def _chiller_term(agent: AgentProblem, maps: ReducedMaps, e_cols: Optional[np.ndarray], tau_cols: np.ndarray,
                  e_fixed: Optional[np.ndarray] = None) -> QuarticTerm:
    if e_cols is not None:
        cols = np.concatenate([e_cols, tau_cols])
        P = np.hstack([-np.eye(agent.n_t), maps.G])
        p0 = maps.g.copy()
    else:
        cols = tau_cols
        P = maps.G.copy()
        p0 = maps.g - e_fixed
    return QuarticTerm(cols, P, p0, agent.coef, agent.prices, np.full(agent.n_t, agent.e_max), name="chiller")


def _cooling_block(maps: ReducedMaps, tau_cols: np.ndarray) -> LinearBlock:
    return LinearBlock(tau_cols, -maps.G, maps.g.copy(), name="cooling")


@dataclass
class LocalResult:
    x: np.ndarray
    u: np.ndarray
    objective: float
    report: SolverReport


class AgentSolver:
    """Reusable solver for one building's programs. Keeps the last
    interior-point state for warm starts."""

    def __init__(self, agent: AgentProblem, tol: float = KKT_TOL, max_iter: int = 200, tie_break: float = TIE_BREAK):
        self.agent = agent
        self.maps = ReducedMaps(agent)
        self.tol = tol
        self.max_iter = max_iter
        self.tie_break = tie_break
        m, n_t = agent.district.m, agent.n_t
        self.m = m
        self.n_e = m * n_t
        self.e1_col = self.n_e
        self.tau_cols = np.arange(self.n_e + 1, self.n_e + 1 + self.maps.n_tau)
        self.n = self.n_e + 1 + self.maps.n_tau
        self.ecols_i = np.arange(agent.i * n_t, (agent.i + 1) * n_t)
        lim = np.repeat(np.asarray(agent.district.storage.exchange_max, dtype=float), n_t)
        self.lb = np.concatenate([-lim, [0.0], self.maps.lo])
        self.ub = np.concatenate([lim, [agent.district.storage.capacity], self.maps.hi])
        # tie-break pulls every variable towards the middle of its box
        self.ref = np.concatenate([np.zeros(self.n_e), [0.5 * agent.district.storage.capacity], self.maps.mid])
        self._base = [
            _chiller_term(agent, self.maps, self.ecols_i, self.tau_cols),
        ]
        self._linear = [_cooling_block(self.maps, self.tau_cols), _storage_block(agent, np.arange(self.n_e), self.e1_col)]
        self.warm: Optional[IPState] = None
        self.warm_inner: Optional[IPState] = None

    # coordinate maps

    def expand(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lay = self.agent.glayout
        x = lay.pack(y[: self.n_e].reshape(self.m, self.agent.n_t), y[self.e1_col])
        return x, self.maps.local(self.agent, y[self.tau_cols])

    def reduce(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        ex, e1 = self.agent.glayout.unpack(x)
        return np.concatenate([ex.ravel(), [e1.mean()], self.maps.tau(self.agent, u)])

    # programs

    def program(self, xbar: Optional[np.ndarray] = None, c: Optional[float] = None) -> ConvexProgram:
        """Local program; with ``xbar`` and ``c`` it carries the prox term."""
        mu2 = 2.0 * self.tie_break
        d = np.full(self.n, mu2)
        r = self.ref.copy()
        if xbar is not None:
            if not c > 0:
                raise SolverError("prox parameter c must be positive")
            ex, e1 = self.agent.glayout.unpack(xbar)
            w = np.concatenate([np.full(self.n_e, 1.0 / c), [self.m / c]])
            target = np.concatenate([ex.ravel(), [e1.mean()]])
            k = slice(0, self.n_e + 1)
            r[k] = (w * target + mu2 * r[k]) / (w + mu2)
            d[k] = w + mu2
        return ConvexProgram(self.n, d, r, np.zeros(self.n), self.lb, self.ub, list(self._base), list(self._linear))

    def inner_program(self, x: np.ndarray, tie_break: float = 0.0) -> ConvexProgram:
        e_i = self.agent.exchanges(x)
        n = self.maps.n_tau
        cols = np.arange(n)
        d = np.full(n, 2.0 * tie_break)
        return ConvexProgram(
            n, d, self.maps.mid.copy(), np.zeros(n), self.maps.lo, self.maps.hi,
            [_chiller_term(self.agent, self.maps, None, cols, e_fixed=e_i)],
            [_cooling_block(self.maps, cols)],
        )

    def _run(self, prog, warm, y0=None):
        y, rep, state = interior_point(prog, y0=y0, warm=warm, tol=self.tol, max_iter=self.max_iter)
        return y, rep, state

    def solve_prox(self, xbar: np.ndarray, c: float, warm: bool = True) -> LocalResult:
        prog = self.program(xbar, c)
        y, rep, state = self._run(prog, self.warm if warm else None)
        if rep.status != OPTIMAL and warm and self.warm is not None:
            y, rep, state = self._run(prog, None)
        if rep.status != OPTIMAL:
            raise SolverError(f"agent {self.agent.i}: prox solve ended with status {rep.status}", rep)
        self.warm = state
        x, u = self.expand(y)
        return LocalResult(x, u, self.agent.objective(x, u), rep)

    def solve_selfish(self) -> LocalResult:
        prog = self.program()
        y, rep, state = self._run(prog, None)
        if rep.status != OPTIMAL:
            raise SolverError(f"agent {self.agent.i}: selfish solve ended with status {rep.status}", rep)
        self.warm = state
        x, u = self.expand(y)
        return LocalResult(x, u, self.agent.objective(x, u), rep)

    def solve_inner(self, x: np.ndarray, feas_tol: float = 1e-9, warm: bool = False) -> LocalResult:
        """``g_i(x)``: best local decision for a fixed global vector.

        Raises ``SolverError`` with status ``infeasible`` when ``x`` is
        outside the projection of the feasible set.
        """
        x = np.asarray(x, dtype=float)
        viol = max(float(np.max(v, initial=-np.inf)) for v in self.agent.x_residuals(x).values())
        if viol > feas_tol:
            rep = SolverReport(INFEASIBLE, 0, np.nan, np.nan, viol, np.nan)
            raise SolverError(f"agent {self.agent.i}: x violates the global constraints by {viol:.3g}", rep)
        prog = self.inner_program(x)
        tau, rep, state = self._run(prog, self.warm_inner if warm else None)
        if rep.status != OPTIMAL:
            raise SolverError(f"agent {self.agent.i}: inner solve ended with status {rep.status}", rep)
        self.warm_inner = state
        u = self.maps.local(self.agent, tau)
        return LocalResult(x, u, self.agent.objective(x, u), rep)


def solve_proximal_subproblem(solver: AgentSolver, xbar: np.ndarray, c: float) -> tuple:
    res = solver.solve_prox(xbar, c)
    return res.x, res.u, res.report


def solve_inner(solver: AgentSolver, x: np.ndarray) -> float:
    return solver.solve_inner(x).objective


@dataclass
class CentralResult:
    x: np.ndarray
    us: list
    objective: float
    objectives: list
    report: SolverReport


def solve_centralized(agents: Sequence[AgentProblem], tol: float = KKT_TOL, max_iter: int = 200,
                      tie_break: float = TIE_BREAK) -> CentralResult:
    """Joint minimization of the sum of building objectives."""
    if not agents:
        raise SolverError("no agents")
    a0 = agents[0]
    m, n_t = a0.district.m, a0.n_t
    if len(agents) != m:
        raise SolverError(f"expected {m} agents, got {len(agents)}")
    n_e = m * n_t
    maps = [ReducedMaps(a) for a in agents]
    offs = np.cumsum([n_e + 1] + [mp.n_tau for mp in maps])
    n = int(offs[-1])
    lim = np.repeat(np.asarray(a0.district.storage.exchange_max, dtype=float), n_t)
    lb = np.concatenate([-lim, [0.0]] + [mp.lo for mp in maps])
    ub = np.concatenate([lim, [a0.district.storage.capacity]] + [mp.hi for mp in maps])
    ref = np.concatenate([np.zeros(n_e), [0.5 * a0.district.storage.capacity]] + [mp.mid for mp in maps])
    quartic, linear = [], []
    for i, (a, mp) in enumerate(zip(agents, maps)):
        tau_cols = np.arange(offs[i], offs[i] + mp.n_tau)
        quartic.append(_chiller_term(a, mp, np.arange(i * n_t, (i + 1) * n_t), tau_cols))
        linear.append(_cooling_block(mp, tau_cols))
    linear.append(_storage_block(a0, np.arange(n_e), n_e))
    prog = ConvexProgram(n, np.full(n, 2 * tie_break), ref, np.zeros(n), lb, ub, quartic, linear)
    y, rep, _ = interior_point(prog, tol=tol, max_iter=max_iter)
    if rep.status != OPTIMAL:
        raise SolverError(f"centralized solve ended with status {rep.status}", rep)
    x = a0.glayout.pack(y[:n_e].reshape(m, n_t), y[n_e])
    us = [mp.local(a, y[offs[i] : offs[i] + mp.n_tau]) for i, (a, mp) in enumerate(zip(agents, maps))]
    objs = [a.objective(x, u) for a, u in zip(agents, us)]
    return CentralResult(x, us, float(sum(objs)), objs, rep)
