"""Chiller electric-energy models and the shared ARX storage.

Energies are in MJ per slot, temperatures in K, slot length in s.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear, minimize_scalar


class PlantModelError(ValueError):
    pass


@dataclass(frozen=True)
class NgGordonParams:
    a1: float
    a2: float
    a3: float
    a4: float
    t_cw: float  # K


@dataclass(frozen=True)
class BiquadFit:
    c2: float
    c1: float
    c0: float

    def __post_init__(self):
        if self.c2 < 0 or self.c1 < 0:
            raise PlantModelError(f"biquadratic fit must have c1, c2 >= 0 (got c1={self.c1}, c2={self.c2})")

    def as_tuple(self) -> tuple[float, float, float]:
        return self.c2, self.c1, self.c0


@dataclass(frozen=True)
class ChillerParams:
    """A chiller with a per-slot surrogate. ``fits`` holds one ``BiquadFit``
    per slot (or a single one reused for every slot)."""

    e_max: float  # MJ of electricity per slot
    fits: tuple[BiquadFit, ...]
    ng_gordon: Optional[NgGordonParams] = None

    def coefficients(self, n_t: int) -> np.ndarray:
        """Array of shape ``(n_t, 3)`` with rows ``(c2, c1, c0)``."""
        if len(self.fits) == 1:
            return np.tile(np.array(self.fits[0].as_tuple()), (n_t, 1))
        if len(self.fits) != n_t:
            raise PlantModelError(f"chiller has {len(self.fits)} slot fits, horizon has {n_t} slots")
        return np.array([f.as_tuple() for f in self.fits])

    @classmethod
    def from_ng_gordon(cls, params: NgGordonParams, t_out: Sequence[float], dt: float, e_max: float) -> "ChillerParams":
        fits = tuple(fit_biquadratic(float(t), params, dt) for t in t_out)
        return cls(e_max=e_max, fits=fits, ng_gordon=params)


def ng_gordon_electric(e_c, t_o: float, params: NgGordonParams, dt: float):
    """Electric energy drawn by the chiller for cooling ``e_c`` (MJ).

    The denominator ``T_cw - a4 E_c / dt`` must stay positive; ``a4`` is in
    K s/MJ so that ``a4 E_c / dt`` is a temperature.
    """
    e_c = np.asarray(e_c, dtype=float)
    den = params.t_cw - params.a4 * e_c / dt
    if np.any(den <= 0):
        raise PlantModelError("cooling request at or beyond the Ng-Gordon pole (T_cw - a4 E_c / dt <= 0)")
    num = params.a1 * t_o * params.t_cw * dt + params.a2 * (t_o - params.t_cw) * dt + params.a3 * t_o * e_c
    out = num / den - e_c
    return out if out.ndim else float(out)


def ng_gordon_pole(params: NgGordonParams, dt: float) -> float:
    return np.inf if params.a4 <= 0 else params.t_cw * dt / params.a4


def max_cop_point(t_o: float, params: NgGordonParams, dt: float) -> tuple[float, float]:
    """Cooling request with the best COP and that COP."""
    hi = min(ng_gordon_pole(params, dt) * (1 - 1e-9), 1e6)

    def neg_cop(e):
        ee = ng_gordon_electric(e, t_o, params, dt)
        return -e / ee if ee > 0 else np.inf

    # coarse scan to bracket, then refine
    grid = np.linspace(hi * 1e-4, hi, 2001)
    vals = [neg_cop(e) for e in grid]
    j = int(np.argmin(vals))
    lo_b, hi_b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = minimize_scalar(neg_cop, bounds=(lo_b, hi_b), method="bounded", options={"xatol": 1e-10 * hi})
    return float(res.x), float(-res.fun)


def _fit_grid(t_o: float, params: NgGordonParams, dt: float, n_grid: int) -> tuple[np.ndarray, float, float]:
    e_star, cop_star = max_cop_point(t_o, params, dt)
    hi = min(ng_gordon_pole(params, dt) * (1 - 1e-9), 1e6)
    scan = np.linspace(e_star, hi, 4001)
    cop = scan / ng_gordon_electric(scan, t_o, params, dt)
    ok = np.flatnonzero(cop >= 0.5 * cop_star)
    e_hi = scan[ok[-1]]
    if not e_hi > 0:
        raise PlantModelError("empty fit grid")
    return np.linspace(0.0, e_hi, n_grid), e_star, cop_star


def fit_biquadratic(
    t_o: float,
    params: NgGordonParams,
    dt: float,
    n_grid: int = 50,
    anchor_weight: float = 10.0,
    anchor_tol: float = 0.01,
) -> BiquadFit:
    """Weighted least-squares fit of ``c2 E^4 + c1 E^2 + c0`` to Ng-Gordon.

    Anchors are zero request and the max-COP request. ``c1, c2`` are kept
    non-negative by a bounded solve. If an anchor misses ``anchor_tol``
    relative error, its weight is raised until it does (or gives up after a
    few rounds and returns the best fit found).
    """
    return _fit_cached(float(t_o), params, float(dt), int(n_grid), float(anchor_weight), float(anchor_tol))


@lru_cache(maxsize=4096)
def _fit_cached(t_o, params, dt, n_grid, anchor_weight, anchor_tol) -> BiquadFit:
    grid, e_star, _ = _fit_grid(t_o, params, dt, n_grid)
    e = np.concatenate([grid, [e_star]])
    target = ng_gordon_electric(e, t_o, params, dt)
    X = np.column_stack([e**4, e**2, np.ones_like(e)])
    anchors = np.array([0, len(e) - 1])
    w = np.ones_like(e)
    w[anchors] = anchor_weight
    coef = None
    for _ in range(8):
        sw = np.sqrt(w)
        # scale columns so the bounded solve is well conditioned
        scale = np.linalg.norm(X * sw[:, None], axis=0)
        scale[scale == 0] = 1.0
        res = lsq_linear((X * sw[:, None]) / scale, target * sw, bounds=([0, 0, -np.inf], [np.inf, np.inf, np.inf]),
                         method="bvls", tol=1e-14)
        coef = res.x / scale
        rel = np.abs(X[anchors] @ coef - target[anchors]) / np.abs(target[anchors])
        if np.all(rel <= anchor_tol):
            break
        w[anchors[rel > anchor_tol]] *= 10.0
    c2, c1, c0 = (float(max(c, 0.0)) if k < 2 else float(c) for k, c in enumerate(coef))
    return BiquadFit(c2, c1, c0)


def fit_biquadratic_samples(e_c: np.ndarray, e_e: np.ndarray, weights: Optional[np.ndarray] = None) -> BiquadFit:
    """Plain weighted fit of ``c2 E^4 + c1 E^2 + c0`` to given samples."""
    e_c = np.asarray(e_c, dtype=float)
    e_e = np.asarray(e_e, dtype=float)
    if e_c.size < 3:
        raise PlantModelError("need at least three samples for a biquadratic fit")
    w = np.ones_like(e_c) if weights is None else np.asarray(weights, dtype=float)
    X = np.column_stack([e_c**4, e_c**2, np.ones_like(e_c)]) * np.sqrt(w)[:, None]
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0) or np.linalg.cond(X / scale) > 1e12:
        raise PlantModelError("ill-conditioned biquadratic fit (samples do not determine the coefficients)")
    res = lsq_linear(X / scale, e_e * np.sqrt(w), bounds=([0, 0, -np.inf], [np.inf, np.inf, np.inf]),
                     method="bvls", tol=1e-15)
    c = res.x / scale
    return BiquadFit(float(max(c[0], 0.0)), float(max(c[1], 0.0)), float(c[2]))


def chiller_electric(e_c, fit):
    """``c2 E^4 + c1 E^2 + c0``; ``fit`` is a ``BiquadFit`` or ``(c2, c1, c0)``."""
    c2, c1, c0 = fit.as_tuple() if isinstance(fit, BiquadFit) else fit
    e2 = np.square(e_c)
    return c2 * e2 * e2 + c1 * e2 + c0


def chiller_cop(e_c, fit):
    return np.asarray(e_c) / chiller_electric(e_c, fit)


def cooling_cap(fit, e_max: float) -> float:
    """Largest cooling request whose surrogate electric energy is ``e_max``."""
    c2, c1, c0 = fit.as_tuple() if isinstance(fit, BiquadFit) else fit
    if e_max < c0:
        raise PlantModelError("electric limit is below the idle consumption c0")
    if c2 == 0:
        return float(np.sqrt((e_max - c0) / c1)) if c1 > 0 else np.inf
    s = (-c1 + np.sqrt(c1 * c1 + 4 * c2 * (e_max - c0))) / (2 * c2)
    return float(np.sqrt(s))


@dataclass(frozen=True)
class StorageParams:
    a: float  # loss factor per slot
    capacity: float  # MJ
    exchange_max: tuple[float, ...]  # MJ per slot, one per building

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise PlantModelError("storage loss factor must lie in (0, 1)")
        if not self.capacity > 0:
            raise PlantModelError("storage capacity must be positive")
        if any(not e > 0 for e in self.exchange_max):
            raise PlantModelError("exchange limits must be positive")


def storage_matrices(n_t: int, a: float) -> tuple[np.ndarray, np.ndarray]:
    """``(L, p)`` with ``E(t) = p[t-1] E(1) - L[t-1] @ S`` for t = 1..n_t+1,
    where ``S(t) = sum_i e_i(t)``."""
    k = np.arange(n_t + 1)
    p = a**k
    diff = k[:, None] - k[None, :n_t] - 1
    L = np.where(diff >= 0, a ** np.maximum(diff, 0), 0.0)
    return L, p


def storage_trajectory(e1: float, exchanges: np.ndarray, a: float) -> np.ndarray:
    """Levels ``E(1)..E(n_t+1)`` by the recursion ``E(t+1) = a E(t) - sum_i e_i(t)``.

    ``exchanges`` has shape ``(m, n_t)`` (or ``(n_t,)`` for a single building).
    """
    ex = np.atleast_2d(np.asarray(exchanges, dtype=float))
    total = ex.sum(axis=0)
    out = np.empty(total.size + 1)
    out[0] = e1
    for t, s in enumerate(total):
        out[t + 1] = a * out[t] - s
    return out
