"""Decision-vector layouts, per-building objective and constraint residuals.

Global vector ``x`` stacks, per building, the storage exchanges over the
horizon followed by that building's copy of the initial storage level.
Local vector ``u_i`` stacks the zone-temperature breakpoints (row-major,
slot by zone) followed by the wall state at the first breakpoint.
Energies are in MJ, temperatures in K.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .plant import ChillerParams, StorageParams, chiller_electric, storage_matrices
from .thermal import BuildingThermalModel, DisturbanceProfile, EnergyMap, building_energy_request, discretize

MJ = 1e6


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalLayout:
    m: int
    n_t: int

    @property
    def size(self) -> int:
        return self.m * (self.n_t + 1)

    def exchange_index(self, i: int) -> np.ndarray:
        start = i * (self.n_t + 1)
        return np.arange(start, start + self.n_t)

    def init_index(self, i: int) -> int:
        return i * (self.n_t + 1) + self.n_t

    def pack(self, exchanges: np.ndarray, e1) -> np.ndarray:
        exchanges = np.asarray(exchanges, dtype=float)
        if exchanges.shape != (self.m, self.n_t):
            raise ProblemError(f"exchanges must have shape {(self.m, self.n_t)}, got {exchanges.shape}")
        e1 = np.broadcast_to(np.asarray(e1, dtype=float), (self.m,))
        return np.hstack([exchanges, e1[:, None]]).ravel()

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ProblemError(f"global vector must have length {self.size}, got {x.shape}")
        blocks = x.reshape(self.m, self.n_t + 1)
        return blocks[:, :-1].copy(), blocks[:, -1].copy()


@dataclass(frozen=True)
class LocalLayout:
    n_t: int
    n_z: int
    n_x: int

    @property
    def size(self) -> int:
        return self.n_t * self.n_z + self.n_x

    def pack(self, temps: np.ndarray, wall_state: np.ndarray) -> np.ndarray:
        temps = np.asarray(temps, dtype=float)
        wall_state = np.asarray(wall_state, dtype=float)
        if temps.shape != (self.n_t, self.n_z) or wall_state.shape != (self.n_x,):
            raise ProblemError("local decision has the wrong shape")
        return np.concatenate([temps.ravel(), wall_state])

    def unpack(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise ProblemError(f"local vector must have length {self.size}, got {u.shape}")
        k = self.n_t * self.n_z
        return u[:k].reshape(self.n_t, self.n_z).copy(), u[k:].copy()


@dataclass
class BuildingSpec:
    name: str
    thermal: BuildingThermalModel
    chiller: ChillerParams
    prices: np.ndarray  # currency per MJ, one per slot
    comfort_lo: np.ndarray  # (n_t, n_z) K at breakpoints 1..n_t
    comfort_hi: np.ndarray


@dataclass
class District:
    n_t: int
    dt: float
    disturbances: DisturbanceProfile
    buildings: list
    storage: StorageParams

    @property
    def m(self) -> int:
        return len(self.buildings)

    @property
    def layout(self) -> GlobalLayout:
        return GlobalLayout(self.m, self.n_t)


def comfort_schedule_from_occupancy(occupancy: np.ndarray, occupied: tuple, unoccupied: tuple) -> tuple:
    """Comfort bounds at breakpoints 1..n_t from per-zone occupancy samples
    (shape ``(n_t + 1, n_z)``); a breakpoint counts as working time when
    people are present there."""
    occ = np.asarray(occupancy, dtype=float)[1:]
    busy = occ > 0
    lo = np.where(busy, occupied[0], unoccupied[0])
    hi = np.where(busy, occupied[1], unoccupied[1])
    return lo.astype(float), hi.astype(float)


class AgentProblem:
    """Objective and constraints of one building over ``(x, u_i)``.

    All maps are assembled once; evaluations are matrix-vector products.
    """

    def __init__(self, district: District, i: int, emap: Optional[EnergyMap] = None):
        if not 0 <= i < district.m:
            raise ProblemError(f"building index {i} out of range")
        self.district = district
        self.i = i
        b = district.buildings[i]
        self.building = b
        n_t = district.n_t
        self.n_t = n_t
        self.glayout = district.layout
        self.llayout = LocalLayout(n_t, b.thermal.n_zones, b.thermal.n_states)
        for label, arr, shape in (
            ("prices", b.prices, (n_t,)),
            ("comfort", b.comfort_lo, (n_t, b.thermal.n_zones)),
            ("comfort", b.comfort_hi, (n_t, b.thermal.n_zones)),
        ):
            if np.shape(arr) != shape:
                raise ProblemError(f"building {b.name!r}: section {label!r} has shape {np.shape(arr)}, expected {shape}")
        if np.any(b.comfort_lo > b.comfort_hi):
            raise ProblemError(f"building {b.name!r}: section 'comfort' has lower bounds above upper bounds")
        if len(district.storage.exchange_max) != district.m:
            raise ProblemError("section 'storage': one exchange limit per building is required")
        self.disc = discretize(b.thermal, district.dt)
        self.emap = emap or building_energy_request(b.thermal, district.disturbances, district.dt, n_t, self.disc)
        G_T, G_W, g = self.emap.slot_maps()
        self.G_T = G_T / MJ
        self.G_W = G_W / MJ
        self.g = g / MJ
        self.coef = b.chiller.coefficients(n_t)
        self.prices = np.asarray(b.prices, dtype=float)
        self.e_max = float(b.chiller.e_max)
        self.L, self.p = storage_matrices(n_t, district.storage.a)

    # energy side

    def energy_request(self, u: np.ndarray) -> np.ndarray:
        temps, w = self.llayout.unpack(u)
        return self.G_T @ temps.ravel() + self.G_W @ w + self.g

    def exchanges(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.glayout.exchange_index(self.i)]

    def net_cooling(self, x: np.ndarray, u: np.ndarray, t: Optional[int] = None):
        """Chiller cooling per slot; ``t`` is 1-based when given."""
        ec = self.energy_request(u) - self.exchanges(x)
        return ec if t is None else float(ec[t - 1])

    def electric(self, x, u) -> np.ndarray:
        ec = self.net_cooling(x, u)
        return chiller_electric(ec, tuple(self.coef.T))

    def objective(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if not (np.isfinite(x).all() and np.isfinite(u).all()):
            raise ProblemError("non-finite decision vector")
        return float(self.prices @ self.electric(x, u))

    def storage_levels(self, x: np.ndarray) -> np.ndarray:
        """``E(1)..E(n_t+1)`` from this agent's copy of ``x``."""
        ex, e1 = self.glayout.unpack(x)
        return self.p * e1[self.i] - self.L @ ex.sum(axis=0)

    def cop(self, x, u) -> np.ndarray:
        ec = self.net_cooling(x, u)
        return ec / self.electric(x, u)

    # constraints

    def x_residuals(self, x: np.ndarray) -> dict:
        """Constraints that involve only the global vector."""
        ex, e1 = self.glayout.unpack(x)
        lim = np.asarray(self.district.storage.exchange_max, dtype=float)[:, None]
        levels = self.storage_levels(x)
        cap = self.district.storage.capacity
        others = np.delete(e1, self.i) - e1[self.i]
        return {
            "storage_cap": np.concatenate([-levels, levels - cap]),
            "exchange_box": np.concatenate([(ex - lim).ravel(), (-ex - lim).ravel()]),
            "storage_terminal": np.array([levels[0] - levels[self.n_t - 1]]),
            "storage_init_copies": np.concatenate([others, -others]),
        }

    def u_residuals(self, x: np.ndarray, u: np.ndarray) -> dict:
        temps, w = self.llayout.unpack(u)
        b = self.building
        e_b = self.energy_request(u)
        w_end = self.emap.final_state(temps, w)
        dT = temps[-1] - temps[0]
        dW = w_end - w
        return {
            "chiller_cap": self.electric(x, u) - self.e_max,
            "cooling_nonneg": -e_b,
            "comfort_lo": (b.comfort_lo - temps).ravel(),
            "comfort_hi": (temps - b.comfort_hi).ravel(),
            "periodic_T": np.concatenate([dT, -dT]),
            "periodic_wall": np.concatenate([dW, -dW]),
        }

    def residuals(self, x, u) -> dict:
        out = self.u_residuals(x, u)
        out.update(self.x_residuals(x))
        return out

    def max_violation(self, x, u) -> float:
        return max(float(np.max(v, initial=-np.inf)) for v in self.residuals(x, u).values())


def build_agent_problem(district: District, i: int) -> AgentProblem:
    return AgentProblem(district, i)
