"""Wall-slice RC thermal model of a building and the per-zone energy terms.

Walls are stacks of slices with uniform temperature. Boundary slices face
either a zone or the outdoor environment; grey-body emission is linearized
around a per-slice operating temperature so the whole building is an LTI
system with state ``T`` (all slice temperatures), input ``Ttil`` (zone
temperatures) and disturbance ``d = [T_o, Q_sw, Q_lw, 1]``.

Zone temperatures and disturbances are piecewise linear in time, so the
discretization is an exact first-order hold and every slot energy is an
affine function of the zone-temperature breakpoints.

Breakpoint convention used throughout: a horizon of ``n_t`` slots has
``n_t + 1`` disturbance samples (index 0..n_t) and ``n_t`` decision
breakpoints for the zone temperatures and wall state, aligned with
disturbance samples 1..n_t. Sample 0 is the lead-in point of slot 1; the
thermal state there is held equal to the first decision breakpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import block_diag, expm

STEFAN_BOLTZMANN = 5.670374419e-8
OUTDOOR = "outdoor"
N_DIST = 4  # T_o, shortwave, longwave, constant

Boundary = Union[int, str]


class ThermalModelError(ValueError):
    """Raised for inconsistent wall, zone or disturbance data."""


def linearize_radiation(t_bar: float, sigma: float = STEFAN_BOLTZMANN) -> tuple[float, float]:
    """Tangent of ``sigma * T**4`` at ``t_bar``: returns ``(slope, intercept)``."""
    if not np.isfinite(t_bar) or t_bar < 0:
        raise ThermalModelError(f"linearization temperature must be a non-negative Kelvin value, got {t_bar}")
    return 4.0 * sigma * t_bar**3, -3.0 * sigma * t_bar**4


@dataclass(frozen=True)
class SliceParams:
    """One wall slice. Coefficients ``*_prev`` couple to slice s-1 (or the
    first boundary), ``*_next`` to slice s+1 (or the last boundary)."""

    capacity: float  # J/(m2 K)
    h_prev: float = 0.0  # conduction, W/(m2 K)
    h_next: float = 0.0
    hbar_prev: float = 0.0  # convection, W/(m2 K)
    hbar_next: float = 0.0
    alpha_sw: float = 0.0
    alpha_lw: float = 0.0
    emissivity: float = 0.0
    generation: float = 0.0  # W/m2
    t_lin: float = 293.15  # K
    sigma: float = STEFAN_BOLTZMANN


@dataclass
class WallModel:
    """Continuous dynamics ``dT_w/dt = A T_w + B Ttil + F d`` of one wall."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    first: Boundary
    last: Boundary
    area: float
    hbar_first: float
    hbar_last: float
    name: str = ""

    @property
    def n_slices(self) -> int:
        return self.A.shape[0]


def _check_boundary(b: Boundary, n_zones: int, which: str) -> None:
    if b == OUTDOOR:
        return
    if isinstance(b, (int, np.integer)) and not isinstance(b, bool) and 0 <= b < n_zones:
        return
    raise ThermalModelError(f"{which} boundary must be a zone index in [0, {n_zones}) or {OUTDOOR!r}, got {b!r}")


def _check_slices(slices: Sequence[SliceParams]) -> None:
    n_s = len(slices)
    if n_s == 0:
        raise ThermalModelError("a wall needs at least one slice")
    for s, p in enumerate(slices):
        if not p.capacity > 0:
            raise ThermalModelError(f"slice {s}: capacity must be positive")
        if not 0 <= p.emissivity < 1:
            raise ThermalModelError(f"slice {s}: emissivity must lie in [0, 1)")
        if min(p.h_prev, p.h_next, p.hbar_prev, p.hbar_next) < 0:
            raise ThermalModelError(f"slice {s}: heat transfer coefficients must be non-negative")
        if s == 0 and p.h_prev != 0:
            raise ThermalModelError("slice 0: no conduction across the boundary surface (h_prev must be 0)")
        if s == n_s - 1 and p.h_next != 0:
            raise ThermalModelError(f"slice {s}: no conduction across the boundary surface (h_next must be 0)")
        if s > 0 and p.hbar_prev != 0:
            raise ThermalModelError(f"slice {s}: convection only at boundary surfaces (hbar_prev must be 0)")
        if s < n_s - 1 and p.hbar_next != 0:
            raise ThermalModelError(f"slice {s}: convection only at boundary surfaces (hbar_next must be 0)")
        if 0 < s < n_s - 1 and (p.alpha_sw or p.alpha_lw or p.emissivity):
            raise ThermalModelError(f"slice {s}: interior slices exchange no radiation")


def assemble_wall_dynamics(
    slices: Sequence[SliceParams],
    first: Boundary,
    last: Boundary,
    n_zones: int,
    area: float = 1.0,
    name: str = "",
) -> WallModel:
    """Build ``(A_w, B_w, F_w)`` for one wall.

    ``first`` is what lies beyond slice 0 and ``last`` what lies beyond the
    final slice: a zone index or ``OUTDOOR``. Zone temperatures enter through
    ``B_w``; the outdoor temperature through column 0 of ``F_w``.
    """
    _check_slices(slices)
    _check_boundary(first, n_zones, "first")
    _check_boundary(last, n_zones, "last")
    if not area > 0:
        raise ThermalModelError("wall area must be positive")

    n_s = len(slices)
    A = np.zeros((n_s, n_s))
    B = np.zeros((n_s, n_zones))
    F = np.zeros((n_s, N_DIST))
    for s, p in enumerate(slices):
        slope, intercept = linearize_radiation(p.t_lin, p.sigma)
        k_prev = p.h_prev + p.hbar_prev
        k_next = p.h_next + p.hbar_next
        A[s, s] = -(k_prev + k_next + p.emissivity * slope)
        if s > 0:
            A[s, s - 1] = k_prev
        if s < n_s - 1:
            A[s, s + 1] = k_next
        for is_first, coef in ((True, k_prev), (False, k_next)):
            if (is_first and s != 0) or (not is_first and s != n_s - 1):
                continue
            b = first if is_first else last
            if b == OUTDOOR:
                F[s, 0] += coef
            else:
                B[s, b] += coef
        F[s, 1] = p.alpha_sw
        F[s, 2] = p.alpha_lw
        F[s, 3] = -p.emissivity * intercept + p.generation
        inv_c = 1.0 / p.capacity
        A[s] *= inv_c
        B[s] *= inv_c
        F[s] *= inv_c
    return WallModel(A, B, F, first, last, float(area), slices[0].hbar_prev, slices[-1].hbar_next, name)


@dataclass(frozen=True)
class ZoneParams:
    """Zone-level parameters. ``occupancy`` and (optionally) ``alpha`` are
    sampled at the ``n_t + 1`` breakpoints."""

    occupancy: np.ndarray  # persons
    p0: float  # W/person
    p1: float  # W/(person K)
    alpha: Union[float, np.ndarray]  # W per W/m2 of shortwave
    beta: float  # W/person
    gamma: float  # W
    capacity: float  # J/K
    comfort_temp: float = 297.15  # K, where the people model was linearized

    def alpha_samples(self, n: int) -> np.ndarray:
        a = np.asarray(self.alpha, dtype=float)
        return np.full(n, float(a)) if a.ndim == 0 else a


def linearize_people(a0: float, a1: float, a2: float, t_comfort: float) -> tuple[float, float]:
    """Tangent of the per-person heat ``a0 + a1 T + a2 T^2`` at ``t_comfort``.

    Returns ``(p0, p1)`` with ``Q = n (p1 T + p0)``.
    """
    p1 = a1 + 2.0 * a2 * t_comfort
    return a0 - a2 * t_comfort**2, p1


@dataclass(frozen=True)
class DisturbanceProfile:
    t_out: np.ndarray  # K
    q_sw: np.ndarray  # W/m2
    q_lw: np.ndarray  # W/m2

    def __post_init__(self):
        n = len(self.t_out)
        if len(self.q_sw) != n or len(self.q_lw) != n:
            raise ThermalModelError("disturbance channels must have the same number of samples")

    @property
    def n_samples(self) -> int:
        return len(self.t_out)

    def matrix(self) -> np.ndarray:
        """Samples as rows of ``[T_o, Q_sw, Q_lw, 1]``."""
        n = self.n_samples
        return np.column_stack([self.t_out, self.q_sw, self.q_lw, np.ones(n)]).astype(float)


@dataclass
class BuildingThermalModel:
    """Stacked wall dynamics ``dT/dt = A T + B Ttil + F d`` and wall-to-zone
    heat flow ``Q_walls = C T + D Ttil``."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    C: np.ndarray
    D: np.ndarray
    walls: list[WallModel]
    zones: list[ZoneParams]
    offsets: list[int] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_zones(self) -> int:
        return self.D.shape[0]

    def wall_heat(self, T: np.ndarray, Ttil: np.ndarray) -> np.ndarray:
        return self.C @ T + self.D @ Ttil


def assemble_building_dynamics(walls: Sequence[WallModel], zones: Sequence[ZoneParams]) -> BuildingThermalModel:
    """Stack wall models and build the output map for ``Q_walls``.

    Heat flows into a zone by convection at the wall surface facing it:
    ``S_w * hbar * (T_surface - Ttil_z)``.
    """
    if not walls:
        raise ThermalModelError("a building needs at least one wall")
    n_z = len(zones)
    for w in walls:
        if w.B.shape[1] != n_z:
            raise ThermalModelError(f"wall {w.name!r} was assembled for {w.B.shape[1]} zones, building has {n_z}")
        _check_boundary(w.first, n_z, f"wall {w.name!r} first")
        _check_boundary(w.last, n_z, f"wall {w.name!r} last")
    offsets = list(np.cumsum([0] + [w.n_slices for w in walls])[:-1])
    n_x = sum(w.n_slices for w in walls)

    A = block_diag(*[w.A for w in walls])
    B = np.vstack([w.B for w in walls])
    F = np.vstack([w.F for w in walls])
    C = np.zeros((n_z, n_x))
    D = np.zeros((n_z, n_z))
    touched = np.zeros(n_z, dtype=bool)
    for w, off in zip(walls, offsets):
        for b, idx, hbar in ((w.first, off, w.hbar_first), (w.last, off + w.n_slices - 1, w.hbar_last)):
            if b == OUTDOOR:
                continue
            if hbar <= 0:
                raise ThermalModelError(f"wall {w.name!r} faces zone {b} without a convective coefficient")
            C[b, idx] += w.area * hbar
            D[b, b] -= w.area * hbar
            touched[b] = True
    if not touched.all():
        missing = [int(z) for z in np.flatnonzero(~touched)]
        raise ThermalModelError(f"zones without an adjacent wall: {missing}")
    for z in zones:
        if not z.capacity > 0:
            raise ThermalModelError("zone heat capacity must be positive")
    return BuildingThermalModel(A, B, F, C, D, list(walls), list(zones), [int(o) for o in offsets])


@dataclass(frozen=True)
class DiscreteModel:
    """Exact first-order-hold map over one slot:
    ``T(k) = Ad T(k-1) + B0 v(k-1) + B1 v(k)`` with ``v = [Ttil; d]``."""

    Ad: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    dt: float

    def step(self, T: np.ndarray, v_prev: np.ndarray, v_next: np.ndarray) -> np.ndarray:
        return self.Ad @ T + self.B0 @ v_prev + self.B1 @ v_next


def discretize_foh(A: np.ndarray, B: np.ndarray, dt: float) -> DiscreteModel:
    """First-order-hold discretization through one augmented matrix exponential."""
    if not dt > 0:
        raise ThermalModelError("slot duration must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise ThermalModelError("non-finite entries in the continuous model")
    n, p = B.shape
    M = np.zeros((n + 2 * p, n + 2 * p))
    M[:n, :n] = A
    M[:n, n : n + p] = B
    M[n : n + p, n + p :] = np.eye(p)
    E = expm(M * dt)
    Ad = E[:n, :n]
    G1 = E[:n, n : n + p]  # response to the slot-start value
    G2 = E[:n, n + p :]  # response to the input slope
    B1 = G2 / dt
    return DiscreteModel(Ad, G1 - B1, B1, float(dt))


def discretize(model: BuildingThermalModel, dt: float) -> DiscreteModel:
    return discretize_foh(model.A, np.hstack([model.B, model.F]), dt)


# Per-slot energy terms (joules). Each takes the values at the slot start
# and end breakpoints.


def walls_energy(q_prev, q_next, dt: float):
    return 0.5 * dt * (np.asarray(q_prev) + np.asarray(q_next))


def people_coefficients(n_prev: float, n_next: float, p0: float, p1: float, dt: float) -> tuple[float, float, float]:
    """Exact slot integral of ``n(t) (p1 Ttil(t) + p0)`` with both factors
    linear in time: returns ``(q2, q1, q0)`` multiplying ``Ttil_end``,
    ``Ttil_start`` and 1."""
    q2 = p1 * dt * (n_prev + 2.0 * n_next) / 6.0
    q1 = p1 * dt * (2.0 * n_prev + n_next) / 6.0
    q0 = p0 * dt * (n_prev + n_next) / 2.0
    return q2, q1, q0


def people_energy(t_prev, t_next, n_prev, n_next, p0, p1, dt):
    q2, q1, q0 = people_coefficients(n_prev, n_next, p0, p1, dt)
    return q2 * t_next + q1 * t_prev + q0


def internal_power(q_sw, n_people, alpha, beta, gamma):
    return alpha * q_sw + beta * np.maximum(n_people, 0.0) + gamma


def internal_energy(qsw_prev, qsw_next, n_prev, n_next, alpha_prev, alpha_next, beta, gamma, dt):
    return 0.5 * dt * (
        internal_power(qsw_prev, n_prev, alpha_prev, beta, gamma)
        + internal_power(qsw_next, n_next, alpha_next, beta, gamma)
    )


def inertia_energy(t_prev, t_next, capacity):
    return -capacity * (np.asarray(t_next) - np.asarray(t_prev))


@dataclass
class EnergyMap:
    """Affine maps from the decision breakpoints to slot energies.

    ``Ttil`` has shape ``(n_t, n_z)`` and is flattened row-major; ``T1`` is
    the wall state at the first decision breakpoint. Energies are joules per
    zone and slot, flattened the same way as ``Ttil``.
    """

    G_T: np.ndarray
    G_W: np.ndarray
    g: np.ndarray
    end_T: np.ndarray  # wall state at the last breakpoint
    end_W: np.ndarray
    end_0: np.ndarray
    n_t: int
    n_z: int

    def zone_energy(self, Ttil: np.ndarray, T1: np.ndarray) -> np.ndarray:
        e = self.G_T @ np.ravel(Ttil) + self.G_W @ T1 + self.g
        return e.reshape(self.n_t, self.n_z)

    def building_energy(self, Ttil: np.ndarray, T1: np.ndarray) -> np.ndarray:
        return self.zone_energy(Ttil, T1).sum(axis=1)

    def final_state(self, Ttil: np.ndarray, T1: np.ndarray) -> np.ndarray:
        return self.end_T @ np.ravel(Ttil) + self.end_W @ T1 + self.end_0

    def slot_maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Maps for the building total ``E_B(t)`` (summed over zones)."""
        G_T = self.G_T.reshape(self.n_t, self.n_z, -1).sum(axis=1)
        G_W = self.G_W.reshape(self.n_t, self.n_z, -1).sum(axis=1)
        g = self.g.reshape(self.n_t, self.n_z).sum(axis=1)
        return G_T, G_W, g


def _check_samples(model: BuildingThermalModel, dist: DisturbanceProfile, n_t: int) -> None:
    if dist.n_samples != n_t + 1:
        raise ThermalModelError(f"expected {n_t + 1} disturbance samples, got {dist.n_samples}")
    for z, zp in enumerate(model.zones):
        if len(zp.occupancy) != n_t + 1:
            raise ThermalModelError(f"zone {z}: expected {n_t + 1} occupancy samples, got {len(zp.occupancy)}")
        if len(zp.alpha_samples(n_t + 1)) != n_t + 1:
            raise ThermalModelError(f"zone {z}: alpha must be a scalar or have {n_t + 1} samples")


def building_energy_request(
    model: BuildingThermalModel,
    disturbances: DisturbanceProfile,
    dt: float,
    n_t: int | None = None,
    disc: DiscreteModel | None = None,
) -> EnergyMap:
    """Compose the four energy terms into affine maps of ``(Ttil, T1)``."""
    if n_t is None:
        n_t = disturbances.n_samples - 1
    _check_samples(model, disturbances, n_t)
    disc = disc or discretize(model, dt)
    n_x, n_z = model.n_states, model.n_zones
    nv = n_t * n_z
    d = disturbances.matrix()

    B0T, B0d = disc.B0[:, :n_z], disc.B0[:, n_z:]
    B1T, B1d = disc.B1[:, :n_z], disc.B1[:, n_z:]

    # wall state at breakpoint j: MT[j] @ vec(Ttil) + MW[j] @ T1 + m[j]
    MT = np.zeros((n_t, n_x, nv))
    MW = np.zeros((n_t, n_x, n_x))
    m = np.zeros((n_t, n_x))
    MW[0] = np.eye(n_x)
    for j in range(1, n_t):
        MT[j] = disc.Ad @ MT[j - 1]
        MT[j][:, (j - 1) * n_z : j * n_z] += B0T
        MT[j][:, j * n_z : (j + 1) * n_z] += B1T
        MW[j] = disc.Ad @ MW[j - 1]
        m[j] = disc.Ad @ m[j - 1] + B0d @ d[j] + B1d @ d[j + 1]

    QT = np.einsum("zx,jxv->jzv", model.C, MT)
    QW = np.einsum("zx,jxy->jzy", model.C, MW)
    q0 = m @ model.C.T
    for j in range(n_t):
        QT[j][:, j * n_z : (j + 1) * n_z] += model.D

    G_T = np.zeros((n_t, n_z, nv))
    G_W = np.zeros((n_t, n_z, n_x))
    g = np.zeros((n_t, n_z))
    for j in range(n_t):
        jp = max(j - 1, 0)  # lead-in breakpoint of slot 1 is held
        G_T[j] += 0.5 * dt * (QT[jp] + QT[j])
        G_W[j] += 0.5 * dt * (QW[jp] + QW[j])
        g[j] += 0.5 * dt * (q0[jp] + q0[j])
        for z, zp in enumerate(model.zones):
            alpha = zp.alpha_samples(n_t + 1)
            n_prev, n_next = zp.occupancy[j], zp.occupancy[j + 1]
            q2, q1, qc = people_coefficients(n_prev, n_next, zp.p0, zp.p1, dt)
            G_T[j, z, j * n_z + z] += q2 - zp.capacity
            G_T[j, z, jp * n_z + z] += q1 + zp.capacity
            g[j, z] += qc + internal_energy(
                d[j, 1], d[j + 1, 1], n_prev, n_next, alpha[j], alpha[j + 1], zp.beta, zp.gamma, dt
            )
    return EnergyMap(
        G_T.reshape(nv, nv), G_W.reshape(nv, n_x), g.reshape(nv), MT[-1], MW[-1], m[-1], n_t, n_z
    )


def simulate_wall_states(
    model: BuildingThermalModel,
    disturbances: DisturbanceProfile,
    Ttil: np.ndarray,
    T1: np.ndarray,
    dt: float,
    disc: DiscreteModel | None = None,
) -> np.ndarray:
    """Wall states at the decision breakpoints, shape ``(n_t, n_x)``."""
    disc = disc or discretize(model, dt)
    Ttil = np.asarray(Ttil, dtype=float)
    d = disturbances.matrix()
    n_t = Ttil.shape[0]
    T = np.zeros((n_t, model.n_states))
    T[0] = T1
    for j in range(1, n_t):
        T[j] = disc.step(T[j - 1], np.concatenate([Ttil[j - 1], d[j]]), np.concatenate([Ttil[j], d[j + 1]]))
    return T


def energy_terms(
    model: BuildingThermalModel,
    disturbances: DisturbanceProfile,
    Ttil: np.ndarray,
    T1: np.ndarray,
    dt: float,
) -> dict[str, np.ndarray]:
    """Pointwise evaluation of the four energy terms, each ``(n_t, n_z)``."""
    Ttil = np.asarray(Ttil, dtype=float)
    n_t, n_z = Ttil.shape
    states = simulate_wall_states(model, disturbances, Ttil, T1, dt)
    Q = np.array([model.wall_heat(states[j], Ttil[j]) for j in range(n_t)])
    d = disturbances.matrix()
    out = {k: np.zeros((n_t, n_z)) for k in ("walls", "people", "internal", "inertia")}
    for j in range(n_t):
        jp = max(j - 1, 0)
        out["walls"][j] = walls_energy(Q[jp], Q[j], dt)
        for z, zp in enumerate(model.zones):
            alpha = zp.alpha_samples(n_t + 1)
            out["people"][j, z] = people_energy(
                Ttil[jp, z], Ttil[j, z], zp.occupancy[j], zp.occupancy[j + 1], zp.p0, zp.p1, dt
            )
            out["internal"][j, z] = internal_energy(
                d[j, 1], d[j + 1, 1], zp.occupancy[j], zp.occupancy[j + 1], alpha[j], alpha[j + 1],
                zp.beta, zp.gamma, dt,
            )
            out["inertia"][j, z] = inertia_energy(Ttil[jp, z], Ttil[j, z], zp.capacity)
    return out
