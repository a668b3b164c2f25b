"""Dense primal-dual interior-point solver for the agent programs.

The programs that show up here have a fixed shape:

    minimize    1/2 sum_k d_k (y_k - r_k)^2 + c'y
                + sum_t w_t phi_t(P_t y + p0_t)
    subject to  lb <= y <= ub
                G z(y) <= h            (z aggregates a column subset)
                phi_t(P_t y + p0_t) <= cap_t

with ``phi(q) = c2 q^4 + c1 q^2 + c0`` and ``c1, c2 >= 0``. Every constraint
gets a slack; the Newton system is condensed onto ``y`` and solved by a
Cholesky factorization. Steps follow Mehrotra's predictor-corrector rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical"


class SolverError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class QuarticTerm:
    """Rows ``q = P y[cols] + p0`` entering the objective with weight ``w``
    and, if ``cap`` is given, the constraint ``phi(q) <= cap``."""

    cols: np.ndarray
    P: np.ndarray
    p0: np.ndarray
    coef: np.ndarray  # (k, 3): c2, c1, c0
    weight: np.ndarray
    cap: Optional[np.ndarray] = None
    name: str = "quartic"

    def phi(self, q):
        c2, c1, c0 = self.coef.T
        q2 = q * q
        return c2 * q2 * q2 + c1 * q2 + c0

    def dphi(self, q):
        c2, c1, _ = self.coef.T
        return 4 * c2 * q**3 + 2 * c1 * q

    def d2phi(self, q):
        c2, c1, _ = self.coef.T
        return 12 * c2 * q * q + 2 * c1


@dataclass
class LinearBlock:
    """``G z - h <= 0`` with ``z = y[cols]``, or, when ``group`` is set,
    ``z_r = sum of y[cols[a]] over a with group[a] == r``."""

    cols: np.ndarray
    G: np.ndarray
    h: np.ndarray
    group: Optional[np.ndarray] = None
    name: str = "linear"

    @property
    def n_z(self) -> int:
        return self.G.shape[1]

    def reduce(self, y_sub):
        if self.group is None:
            return y_sub
        return np.bincount(self.group, weights=y_sub, minlength=self.n_z)

    def expand(self, v):
        return v if self.group is None else v[self.group]


@dataclass
class ConvexProgram:
    n: int
    quad_diag: np.ndarray
    quad_ref: np.ndarray
    lin: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    quartic: list = field(default_factory=list)
    linear: list = field(default_factory=list)
    const: float = 0.0

    def __post_init__(self):
        self._lb_idx = np.flatnonzero(np.isfinite(self.lb))
        self._ub_idx = np.flatnonzero(np.isfinite(self.ub))
        self._sizes = [len(self._lb_idx), len(self._ub_idx)] + [len(b.h) for b in self.linear] + [
            len(q.p0) for q in self.quartic if q.cap is not None
        ]
        self._names = ["lower_bound", "upper_bound"] + [b.name for b in self.linear] + [
            q.name + "_cap" for q in self.quartic if q.cap is not None
        ]
        if np.any(self.lb > self.ub):
            raise SolverError("inconsistent variable bounds")

    @property
    def n_constraints(self) -> int:
        return int(sum(self._sizes))

    def _q(self, y):
        return [q.P @ y[q.cols] + q.p0 for q in self.quartic]

    def objective(self, y) -> float:
        d = y - self.quad_ref
        f = 0.5 * np.dot(self.quad_diag * d, d) + np.dot(self.lin, y) + self.const
        for term, q in zip(self.quartic, self._q(y)):
            f += np.dot(term.weight, term.phi(q))
        return float(f)

    def gradient(self, y, qs=None) -> np.ndarray:
        qs = self._q(y) if qs is None else qs
        g = self.quad_diag * (y - self.quad_ref) + self.lin
        for term, q in zip(self.quartic, qs):
            g[term.cols] += term.P.T @ (term.weight * term.dphi(q))
        return g

    def constraints(self, y, qs=None) -> np.ndarray:
        """All inequality residuals, ``<= 0`` when feasible."""
        qs = self._q(y) if qs is None else qs
        parts = [self.lb[self._lb_idx] - y[self._lb_idx], y[self._ub_idx] - self.ub[self._ub_idx]]
        for b in self.linear:
            parts.append(b.G @ b.reduce(y[b.cols]) - b.h)
        for term, q in zip(self.quartic, qs):
            if term.cap is not None:
                parts.append(term.phi(q) - term.cap)
        return np.concatenate(parts)

    def named_constraints(self, y) -> dict:
        h = self.constraints(y)
        out, off = {}, 0
        for name, k in zip(self._names, self._sizes):
            out[name] = h[off : off + k]
            off += k
        return out

    def _split(self, v):
        out, off = [], 0
        for k in self._sizes:
            out.append(v[off : off + k])
            off += k
        return out

    def jac_t(self, y, v, qs) -> np.ndarray:
        parts = self._split(v)
        g = np.zeros(self.n)
        np.subtract.at(g, self._lb_idx, parts[0])
        np.add.at(g, self._ub_idx, parts[1])
        for b, vb in zip(self.linear, parts[2 : 2 + len(self.linear)]):
            np.add.at(g, b.cols, b.expand(b.G.T @ vb))
        caps = [(t, q) for t, q in zip(self.quartic, qs) if t.cap is not None]
        for (term, q), vb in zip(caps, parts[2 + len(self.linear) :]):
            g[term.cols] += term.P.T @ (vb * term.dphi(q))
        return g

    def jac(self, y, d, qs) -> np.ndarray:
        parts = [-d[self._lb_idx], d[self._ub_idx]]
        for b in self.linear:
            parts.append(b.G @ b.reduce(d[b.cols]))
        for term, q in zip(self.quartic, qs):
            if term.cap is not None:
                parts.append(term.dphi(q) * (term.P @ d[term.cols]))
        return np.concatenate(parts)

    def condensed_hessian(self, y, qs, lam, ratio) -> np.ndarray:
        """``Hess f + sum lam Hess h + J' diag(ratio) J``."""
        lam_p = self._split(lam)
        rat_p = self._split(ratio)
        diag = self.quad_diag.copy()
        np.add.at(diag, self._lb_idx, rat_p[0])
        np.add.at(diag, self._ub_idx, rat_p[1])
        H = np.diag(diag)
        for b, rb in zip(self.linear, rat_p[2 : 2 + len(self.linear)]):
            M = b.G.T @ (rb[:, None] * b.G)
            if b.group is not None:
                M = M[np.ix_(b.group, b.group)]
            _add_block(H, b.cols, M)
        k = 2 + len(self.linear)
        for term, q in zip(self.quartic, qs):
            wq = term.weight * term.d2phi(q)
            if term.cap is not None:
                d1 = term.dphi(q)
                wq = wq + lam_p[k] * term.d2phi(q) + rat_p[k] * d1 * d1
                k += 1
            _add_block(H, term.cols, term.P.T @ (wq[:, None] * term.P))
        return H

    def initial_point(self) -> np.ndarray:
        y = np.zeros(self.n)
        both = np.isfinite(self.lb) & np.isfinite(self.ub)
        y[both] = 0.5 * (self.lb[both] + self.ub[both])
        lo_only = np.isfinite(self.lb) & ~both
        y[lo_only] = self.lb[lo_only] + 1.0
        hi_only = np.isfinite(self.ub) & ~both
        y[hi_only] = self.ub[hi_only] - 1.0
        return y


@dataclass
class SolverReport:
    status: str
    iterations: int
    objective: float
    stationarity: float
    primal_infeasibility: float
    gap: float
    mu_path: list = field(default_factory=list)

    @property
    def kkt(self) -> float:
        return max(self.stationarity, self.primal_infeasibility, self.gap)

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "objective": self.objective,
            "stationarity": self.stationarity,
            "primal_infeasibility": self.primal_infeasibility,
            "gap": self.gap,
        }


@dataclass
class IPState:
    y: np.ndarray
    s: np.ndarray
    lam: np.ndarray


def _runs(cols):
    """Split an index array into contiguous runs: ``[(dest slice, source slice)]``."""
    cols = np.asarray(cols)
    breaks = np.flatnonzero(np.diff(cols) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(cols)]])
    return [(slice(int(cols[a]), int(cols[b - 1]) + 1), slice(int(a), int(b))) for a, b in zip(starts, ends)]


def _add_block(H, cols, M):
    """``H[cols, cols] += M`` using contiguous runs where possible."""
    runs = _runs(cols)
    if len(runs) > 8:
        H[np.ix_(cols, cols)] += M
        return
    for da, sa in runs:
        for db, sb in runs:
            H[da, db] += M[sa, sb]


def _max_step(v, dv, frac):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return min(1.0, frac * float(np.min(-v[neg] / dv[neg])))


def _factor(H):
    reg = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    for _ in range(8):
        try:
            return cho_factor(H + reg * np.eye(H.shape[0]) if reg else H, lower=True, check_finite=False)
        except LinAlgError:
            reg = scale * 1e-14 if reg == 0 else reg * 100
    raise LinAlgError("Newton matrix could not be factored")


def interior_point(
    prog: ConvexProgram,
    y0: Optional[np.ndarray] = None,
    warm: Optional[IPState] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
    warm_floor: float = 1.0,
) -> tuple[np.ndarray, SolverReport, IPState]:
    """Infeasible-start primal-dual interior-point method.

    Converged when, relative to the problem scale,
    ``|grad L|_inf <= tol (1 + |grad f|_inf)``, ``|h + s|_inf <= tol (1 + |h|_inf)``
    and ``s'lam <= tol (1 + |f|)``.

    A warm start reuses ``y`` and lifts slacks and multipliers to at least
    ``warm_floor``; small values look attractive but leave the iterate glued
    to the old active set.
    """
    m = prog.n_constraints
    if warm is not None:
        y = warm.y.copy()
        h = prog.constraints(y)
        s = np.maximum(np.maximum(warm.s, -h), warm_floor)
        lam = np.maximum(warm.lam, warm_floor)
    else:
        y = prog.initial_point() if y0 is None else np.array(y0, dtype=float)
        h = prog.constraints(y)
        s = np.maximum(-h, 1.0)
        lam = np.ones(m)
    mu_path = []
    status = MAX_ITER
    stat = pinf = gap = np.inf
    it = 0
    for it in range(max_iter + 1):
        qs = prog._q(y)
        h = prog.constraints(y, qs)
        grad = prog.gradient(y, qs)
        f = prog.objective(y)
        r_d = grad + prog.jac_t(y, lam, qs)
        r_p = h + s
        mu = float(s @ lam) / max(m, 1)
        stat = float(np.max(np.abs(r_d))) / (1.0 + float(np.max(np.abs(grad))))
        pinf = float(np.max(np.abs(r_p), initial=0.0)) / (1.0 + float(np.max(np.abs(h), initial=0.0)))
        gap = float(s @ lam) / (1.0 + abs(f))
        mu_path.append(mu)
        if not (np.isfinite(stat) and np.isfinite(pinf) and np.isfinite(gap)):
            status = NUMERICAL
            break
        if stat <= tol and pinf <= tol and gap <= tol:
            status = OPTIMAL
            break
        if it == max_iter:
            break
        if np.max(lam, initial=0.0) > 1e14 and pinf > 1e-6:
            status = INFEASIBLE
            break
        ratio = lam / s
        try:
            L = _factor(prog.condensed_hessian(y, qs, lam, ratio))
        except LinAlgError:
            status = NUMERICAL
            break

        def direction(r_c):
            rhs = -r_d - prog.jac_t(y, ratio * r_p - r_c / s, qs)
            dy = cho_solve(L, rhs, check_finite=False)
            dlam = ratio * (prog.jac(y, dy, qs) + r_p) - r_c / s
            ds = -(r_c + s * dlam) / lam
            return dy, ds, dlam

        # predictor
        r_c = s * lam
        dy, ds, dlam = direction(r_c)
        a_aff = min(_max_step(s, ds, 1.0), _max_step(lam, dlam, 1.0))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / max(m, 1)
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # keep complementarity from racing ahead of the other residuals,
        # otherwise the condensed matrix degrades before stationarity is met
        mu_floor = 0.1 * max(stat, pinf) * (1.0 + abs(f)) / max(m, 1)
        if mu > 0:
            sigma = max(sigma, min(1.0, mu_floor / mu))
        # corrector
        r_c = s * lam + ds * dlam - sigma * mu
        dy, ds, dlam = direction(r_c)
        alpha = min(_max_step(s, ds, 0.99), _max_step(lam, dlam, 0.99))

        # backtrack when the curved constraints push the primal residual up;
        # some growth is fine while it stays well below the other residuals
        rp_norm = float(np.max(np.abs(r_p), initial=0.0))
        h_scale = 1.0 + float(np.max(np.abs(h), initial=0.0))
        slack_ok = 0.1 * max(stat, gap) * h_scale
        for _ in range(20):
            y_new = y + alpha * dy
            s_new = s + alpha * ds
            rp_new = float(np.max(np.abs(prog.constraints(y_new) + s_new), initial=0.0))
            if rp_new <= max((1.0 - 0.01 * alpha) * rp_norm, slack_ok, tol * 1e-2 * h_scale, 1e-12) or alpha < 1e-8:
                break
            alpha *= 0.5
        y = y_new
        s = s_new
        lam = lam + alpha * dlam
    report = SolverReport(status, it, prog.objective(y), stat, pinf, gap, mu_path)
    return y, report, IPState(y.copy(), s.copy(), lam.copy())


def check_gradients(prog: ConvexProgram, points: Sequence[np.ndarray], h: float = 1e-6, rtol: float = 1e-5) -> dict:
    """Central differences against the analytic objective gradient and the
    constraint Jacobian (probed along random directions)."""
    rng = np.random.default_rng(0)
    worst = {"objective": 0.0, "constraints": 0.0}
    offenders = []
    for y in points:
        y = np.asarray(y, dtype=float)
        g = prog.gradient(y)
        step = h * np.maximum(1.0, np.abs(y))
        fd = np.empty(prog.n)
        for k in range(prog.n):
            e = np.zeros(prog.n)
            e[k] = step[k]
            fd[k] = (prog.objective(y + e) - prog.objective(y - e)) / (2 * step[k])
        err = np.abs(fd - g) / np.maximum(1.0, np.abs(g))
        worst["objective"] = max(worst["objective"], float(err.max()))
        if err.max() > rtol:
            offenders.append(("objective", int(np.argmax(err))))
        qs = prog._q(y)
        for _ in range(3):
            d = rng.standard_normal(prog.n)
            t = h * max(1.0, float(np.max(np.abs(y))))
            fd_j = (prog.constraints(y + t * d) - prog.constraints(y - t * d)) / (2 * t)
            an = prog.jac(y, d, qs)
            err_j = np.abs(fd_j - an) / np.maximum(1.0, np.abs(an))
            worst["constraints"] = max(worst["constraints"], float(err_j.max()))
            if err_j.max() > rtol:
                offenders.append(("constraint", int(np.argmax(err_j))))
    return {"ok": not offenders, "max_rel_error": worst, "offenders": offenders}
