"""Proximal consensus iteration over a (possibly time-varying) network.

Each round every agent averages the estimates it receives, then solves its
local program with a proximal pull towards that average. The round is
synchronous: all agents read round-k estimates before anyone publishes
round k+1.

Agents are duck-typed: anything with ``solve_selfish()`` and
``solve_prox(xbar, c)`` returning an object with ``x``, ``u`` and
``objective`` attributes works.
"""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

log = logging.getLogger(__name__)


class ConsensusError(RuntimeError):
    def __init__(self, msg, agent=None, k=None):
        super().__init__(msg)
        self.agent = agent
        self.k = k


class WeightSchedule:
    """Periodic sequence of mixing matrices ``A(k) = mats[k % period]``;
    ``A[i, j]`` is the weight agent i puts on agent j's estimate."""

    def __init__(self, matrices: Sequence, eta: Optional[float] = None):
        mats = [np.asarray(A, dtype=float) for A in matrices]
        if not mats:
            raise ValueError("empty weight schedule")
        for k, A in enumerate(mats):
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ValueError(f"weight matrix {k} is not square: shape {A.shape}")
            if A.shape != mats[0].shape:
                raise ValueError(f"weight matrix {k} has {A.shape[0]} agents, expected {mats[0].shape[0]}")
        self.matrices = mats
        if eta is None:
            pos = np.concatenate([A[A > 0] for A in mats])
            eta = float(pos.min()) if pos.size else 0.0
        self.eta = eta

    @property
    def m(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def period(self) -> int:
        return len(self.matrices)

    def __call__(self, k: int) -> np.ndarray:
        return self.matrices[k % self.period]


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class WeightReport:
    checks: list
    intercommunication_bound: Optional[int] = None

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "intercommunication_bound": self.intercommunication_bound,
            "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks],
        }


def _first_bad(mask):
    idx = np.argwhere(mask)
    return tuple(int(v) for v in idx[0]) if len(idx) else None


def validate_weights(schedule: WeightSchedule, m: Optional[int] = None, tol: float = 1e-12) -> WeightReport:
    """Check the mixing assumptions on one period of the schedule."""
    if m is not None and schedule.m != m:
        raise ValueError(f"schedule has {schedule.m} agents, expected {m}")
    eta = schedule.eta
    checks = []

    def per_matrix(name, bad_fn, describe):
        for k, A in enumerate(schedule.matrices):
            bad = bad_fn(A)
            where = _first_bad(bad)
            if where is not None:
                checks.append(Check(name, False, f"k={k}: {describe(A, where)}"))
                return
        checks.append(Check(name, True))

    per_matrix("nonnegative", lambda A: A < 0, lambda A, w: f"entry {w} = {A[w]:.6g}")
    per_matrix(
        "row_sums",
        lambda A: (np.abs(A.sum(axis=1) - 1.0) > tol)[:, None],
        lambda A, w: f"row {w[0]} sums to {A.sum(axis=1)[w[0]]:.17g}",
    )
    per_matrix(
        "column_sums",
        lambda A: (np.abs(A.sum(axis=0) - 1.0) > tol)[:, None],
        lambda A, w: f"column {w[0]} sums to {A.sum(axis=0)[w[0]]:.17g}",
    )
    checks.append(Check("eta_positive", 0 < eta < 1 or (eta == 1 and schedule.m == 1), f"eta = {eta:.6g}"))
    per_matrix(
        "self_weight",
        lambda A: (np.diag(A) < eta - tol)[:, None],
        lambda A, w: f"a_{w[0]}{w[0]} = {A[w[0], w[0]]:.6g} < eta",
    )
    per_matrix("positive_entries", lambda A: (A > 0) & (A < eta - tol), lambda A, w: f"entry {w} = {A[w]:.6g} < eta")

    union = np.zeros((schedule.m, schedule.m), dtype=bool)
    for A in schedule.matrices:
        union |= A > 0
    n_comp, _ = connected_components(union, directed=True, connection="strong")
    checks.append(Check("strongly_connected", n_comp == 1, f"{n_comp} strongly connected component(s) in the union graph"))

    # longest stretch an edge of the union graph stays silent (cyclically)
    kbar = 0
    for i, j in zip(*np.nonzero(union & ~np.eye(schedule.m, dtype=bool))):
        active = [k for k, A in enumerate(schedule.matrices) if A[i, j] > 0]
        gaps = [(active[(n + 1) % len(active)] - a) % schedule.period or schedule.period for n, a in enumerate(active)]
        kbar = max(kbar, max(gaps))
    checks.append(Check("intercommunication_bound", kbar <= schedule.period, f"kbar = {kbar}"))
    return WeightReport(checks, kbar)


def metropolis_weights(adjacency) -> np.ndarray:
    """Doubly stochastic weights for an undirected graph."""
    Adj = np.asarray(adjacency, dtype=bool)
    Adj = (Adj | Adj.T) & ~np.eye(len(Adj), dtype=bool)
    deg = Adj.sum(axis=1)
    W = np.zeros(Adj.shape)
    i, j = np.nonzero(Adj)
    W[i, j] = 1.0 / (1.0 + np.maximum(deg[i], deg[j]))
    W[np.diag_indices_from(W)] = 1.0 - W.sum(axis=1)
    return W


def sinkhorn(A, tol: float = 1e-14, max_iter: int = 10000) -> np.ndarray:
    """Alternate row and column normalization until doubly stochastic."""
    W = np.array(A, dtype=float)
    if np.any(W < 0):
        raise ValueError("negative weights")
    for _ in range(max_iter):
        W /= W.sum(axis=1, keepdims=True)
        W /= W.sum(axis=0, keepdims=True)
        if np.max(np.abs(W.sum(axis=1) - 1.0)) < tol:
            return W
    raise ValueError("row/column normalization did not converge (pattern may not support a doubly stochastic matrix)")


def harmonic_step(alpha: float) -> Callable[[int], float]:
    """``c(k) = alpha / (k + 1)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return lambda k: alpha / (k + 1.0)


def average_estimates(A: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Row ``i`` of the result is ``sum_j A[i, j] x_j``."""
    xs = np.asarray(xs, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != (xs.shape[0], xs.shape[0]):
        raise ValueError(f"weights {A.shape} do not match {xs.shape[0]} estimates")
    return A @ xs


def disagreement(xs: np.ndarray) -> float:
    xs = np.asarray(xs)
    return float(np.max(xs.max(axis=0) - xs.min(axis=0))) if len(xs) > 1 else 0.0


def step_converged(x_new: np.ndarray, x_old: np.ndarray, threshold: float) -> bool:
    """Every component moved less than ``threshold`` in absolute or in
    relative terms."""
    d = np.abs(x_new - x_old)
    return bool(np.all((d < threshold) | (d < threshold * np.abs(x_old))))


@dataclass
class ConsensusState:
    k: int
    xs: np.ndarray  # (m, n)
    us: list
    objectives: np.ndarray
    history: deque = field(default_factory=lambda: deque(maxlen=2))

    @property
    def disagreement(self) -> float:
        return disagreement(self.xs)


@dataclass
class TraceRow:
    k: int
    c: float
    disagreement: float
    objectives: list
    step_norms: list

    def as_dict(self) -> dict:
        d = {"k": self.k, "c": self.c, "disagreement": self.disagreement}
        for i, (f, s) in enumerate(zip(self.objectives, self.step_norms)):
            d[f"objective_{i + 1}"] = f
            d[f"step_{i + 1}"] = s
        return d


@dataclass
class RunResult:
    state: ConsensusState
    trace: list
    converged: bool
    status: str


def _map(fn, items, executor):
    return list(executor.map(fn, items)) if executor is not None else [fn(a) for a in items]


def initialize(agents: Sequence, executor=None, feas_check: Optional[Callable] = None) -> ConsensusState:
    """Selfish start: every agent solves its own program without prox term."""

    def one(i):
        try:
            return agents[i].solve_selfish()
        except Exception as exc:  # noqa: BLE001
            raise ConsensusError(f"agent {i} has no feasible selfish solution: {exc}", agent=i, k=0) from exc

    res = _map(one, range(len(agents)), executor)
    xs = np.array([r.x for r in res])
    state = ConsensusState(0, xs, [r.u for r in res], np.array([r.objective for r in res]))
    if feas_check is not None:
        for i, r in enumerate(res):
            feas_check(i, r.x, r.u)
    return state


def iterate(state: ConsensusState, agents: Sequence, schedule: WeightSchedule, step: Callable[[int], float],
            executor=None, order: Optional[Sequence[int]] = None) -> tuple[ConsensusState, TraceRow]:
    """One synchronous round. ``order`` only changes dispatch order; the
    results do not depend on it."""
    k = state.k
    A = schedule(k)
    xbar = average_estimates(A, state.xs)  # everyone reads round-k estimates here
    c = step(k)
    order = list(range(len(agents))) if order is None else list(order)

    def one(i):
        try:
            return i, agents[i].solve_prox(xbar[i], c)
        except Exception as exc:  # noqa: BLE001 - surfaced with context
            raise ConsensusError(f"agent {i} failed at k={k}: {exc}", agent=i, k=k) from exc

    out = dict(_map(one, order, executor))
    res = [out[i] for i in range(len(agents))]
    xs = np.array([r.x for r in res])
    steps = np.max(np.abs(xs - state.xs), axis=1)
    new = ConsensusState(k + 1, xs, [r.u for r in res], np.array([r.objective for r in res]), state.history)
    new.history.append(state.xs)
    row = TraceRow(k + 1, c, new.disagreement, [float(v) for v in new.objectives], [float(v) for v in steps])
    return new, row


def run(agents: Sequence, schedule: WeightSchedule, step: Callable[[int], float], threshold: float = 1e-3,
        max_iter: int = 3000, seed: int = 0, workers: int = 1, state: Optional[ConsensusState] = None,
        callback: Optional[Callable] = None) -> RunResult:
    """Iterate until every agent's estimate stops moving (componentwise
    absolute or relative change below ``threshold``) or ``max_iter`` rounds."""
    if schedule.m != len(agents):
        raise ValueError(f"schedule has {schedule.m} agents, got {len(agents)}")
    rng = np.random.default_rng(seed)
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    trace = []
    try:
        if state is None:
            state = initialize(agents, executor)
        converged = False
        while state.k < max_iter:
            order = rng.permutation(len(agents))
            prev = state.xs
            state, row = iterate(state, agents, schedule, step, executor, order)
            trace.append(row)
            if callback is not None:
                callback(state, row)
            if all(step_converged(state.xs[i], prev[i], threshold) for i in range(len(agents))):
                converged = True
                break
    finally:
        if executor is not None:
            executor.shutdown()
    status = "converged" if converged else "max-iter"
    if not converged:
        log.warning("consensus stopped at the iteration cap (%d) without meeting the threshold", max_iter)
    return RunResult(state, trace, converged, status)
