"""Builders for the shipped scenarios.

The default district is a reconstruction: three identical three-storey
office buildings (20 m x 20 m, 9 m high, half-glazed facades, one zone per
floor) on a hot summer day, sharing one storage tank. Wall materials,
disturbance profiles, tariffs and storage constants are synthetic; only the
chiller surrogates, horizon and comfort schedule follow the published case.
"""

from __future__ import annotations

import numpy as np

TABLE_I = [
    # name, c2, c1, c0, E_max
    ("medium", 3.79e-5, 2.77e-2, 2.46, 30.0),
    ("small", 2.49e-4, 4.98e-2, 1.26, 18.0),
    ("large", 3.56e-6, 1.58e-2, 5.11, 40.0),
]

# Ng-Gordon coefficients for the three chillers. Reconstructed: chosen so the
# weighted fit at T_o = 30 degC, T_cw = 35 degC and 10 min slots lands close to
# the rows above. The zero-request value is a difference of two large terms,
# keep full precision.
NG_GORDON = {
    "medium": {"a1": -0.5814781848627605, "a2": -10864.0842029936, "a3": 0.9853645705422913,
               "a4": 4143.242278670317, "t_cw": 35.0},
    "small": {"a1": -0.7156005216795244, "a2": -13369.788658628278, "a3": 0.9825784047176573,
              "a4": 7676.8254863762995, "t_cw": 35.0},
    "large": {"a1": 1.1640088819434442, "a2": 21746.824585729282, "a3": 1.014397889156036,
              "a4": 2031.9717907171348, "t_cw": 35.0},
}
NG_GORDON_T_OUT = 30.0  # degC, calibration point

FIXED_WEIGHTS = [[2 / 3, 1 / 3, 0.0], [1 / 3, 1 / 3, 1 / 3], [0.0, 1 / 3, 2 / 3]]


def pair_weights(m: int, i: int, j: int) -> list:
    """Only agents ``i`` and ``j`` talk, with weight 1/2 on the link."""
    A = np.eye(m)
    A[i, i] = A[j, j] = A[i, j] = A[j, i] = 0.5
    return A.tolist()


TIME_VARYING_WEIGHTS = [pair_weights(3, 0, 1), pair_weights(3, 1, 2), pair_weights(3, 0, 2)]


def _round(a, nd=6):
    return [round(float(v), nd) for v in a]


def day_profiles(n_t: int = 144, dt: float = 600.0) -> dict:
    """Outdoor temperature (degC), shortwave and longwave radiation (W/m2)
    and building occupancy (persons) at the ``n_t + 1`` breakpoints."""
    hours = np.arange(n_t + 1) * dt / 3600.0
    t_out = 27.5 + 5.5 * np.cos(2 * np.pi * (hours - 15.0) / 24.0)
    sun = np.clip(np.sin(np.pi * (hours - 6.0) / 13.0), 0.0, None)
    sun[(hours < 6.0) | (hours > 19.0)] = 0.0
    q_sw = 750.0 * sun**1.5
    q_lw = 330.0 + 4.0 * (t_out - 22.0)
    # ramps 7-8 AM and 5-6 PM, full house in between
    occ = np.interp(hours, [0, 7, 8, 12, 13, 17, 18, 24], [0, 0, 120, 120, 90, 120, 0, 0])
    occ[hours >= 24.0] = 0.0
    return {"hours": hours, "t_out": t_out, "q_sw": q_sw, "q_lw": q_lw, "occupancy": occ}


def two_tier_prices(n_t: int = 144, dt: float = 600.0, peak=(8.0, 20.0), low=0.6, high=1.0) -> list:
    mid = (np.arange(n_t) + 0.5) * dt / 3600.0
    return _round(np.where((mid >= peak[0]) & (mid < peak[1]), high, low))


WALL_TYPES = {
    "facade": {
        "slices": [
            {"capacity": 9.0e4, "h_next": 12.0, "hbar_prev": 20.0, "alpha_sw": 0.5, "alpha_lw": 0.9,
             "emissivity": 0.9, "t_lin": 28.0},
            {"capacity": 1.8e5, "h_prev": 12.0, "h_next": 12.0},
            {"capacity": 9.0e4, "h_prev": 12.0, "hbar_next": 8.0, "t_lin": 24.0},
        ]
    },
    "window": {
        "slices": [
            {"capacity": 1.0e4, "h_next": 3.0, "hbar_prev": 20.0, "alpha_sw": 0.08, "alpha_lw": 0.85,
             "emissivity": 0.85, "t_lin": 28.0},
            {"capacity": 1.0e4, "h_prev": 3.0, "hbar_next": 8.0, "t_lin": 24.0},
        ]
    },
    "roof": {
        "slices": [
            {"capacity": 1.0e5, "h_next": 4.0, "hbar_prev": 20.0, "alpha_sw": 0.6, "alpha_lw": 0.9,
             "emissivity": 0.9, "t_lin": 30.0},
            {"capacity": 2.4e5, "h_prev": 4.0, "h_next": 10.0},
            {"capacity": 1.2e5, "h_prev": 10.0, "hbar_next": 6.0, "t_lin": 24.0},
        ]
    },
    "slab": {
        "slices": [
            {"capacity": 1.2e5, "h_next": 15.0, "hbar_prev": 6.0, "t_lin": 24.0},
            {"capacity": 2.4e5, "h_prev": 15.0, "h_next": 15.0},
            {"capacity": 1.2e5, "h_prev": 15.0, "hbar_next": 6.0, "t_lin": 24.0},
        ]
    },
}


def office_building(name: str, chiller: tuple, profiles: dict, prices: list, n_zones: int = 3) -> dict:
    occ_zone = profiles["occupancy"] / n_zones
    # shortwave through half of the 80 m facade perimeter per floor, ~60 m2 glazing
    zones = [
        {
            "name": f"floor{z + 1}",
            "capacity": 8.0e6,
            "occupancy": _round(occ_zone),
            "people_heat": 75.0,
            "people_slope": -3.0,
            "comfort_temp": 24.0,
            "alpha": 6.0,
            "beta": 60.0,
            "gamma": 1500.0,
        }
        for z in range(n_zones)
    ]
    walls = []
    for z in range(n_zones):
        walls.append({"name": f"facade{z + 1}", "type": "facade", "area": 120.0, "first": "outdoor", "last": z})
        walls.append({"name": f"window{z + 1}", "type": "window", "area": 120.0, "first": "outdoor", "last": z})
    for z in range(n_zones - 1):
        walls.append({"name": f"slab{z + 1}{z + 2}", "type": "slab", "area": 400.0, "first": z, "last": z + 1})
    walls.append({"name": "roof", "type": "roof", "area": 400.0, "first": "outdoor", "last": n_zones - 1})
    kind, c2, c1, c0, e_max = chiller
    return {
        "name": name,
        "zones": zones,
        "walls": walls,
        "chiller": {
            "e_max": e_max,
            "biquadratic": {"c2": c2, "c1": c1, "c0": c0},
            "ng_gordon": dict(NG_GORDON[kind]),
        },
        "prices": prices,
        "comfort": {"occupied": [20.0, 24.0], "unoccupied": [16.0, 30.0]},
    }


def default_scenario_dict(n_t: int = 144, dt: float = 600.0) -> dict:
    prof = day_profiles(n_t, dt)
    prices = two_tier_prices(n_t, dt)
    buildings = [office_building(f"building{i + 1}", TABLE_I[i], prof, prices) for i in range(3)]
    return {
        "metadata": {
            "name": "three-building district",
            "reconstruction": True,
            "notes": "Chiller surrogates, horizon, comfort schedule and topologies follow the published case; "
            "geometry-derived wall data, disturbances, tariff and storage constants are synthetic.",
        },
        "units": {"temperature": "degC", "energy": "MJ", "time": "s", "power": "W"},
        "horizon": {"n_t": n_t, "dt": dt},
        "disturbances": {"t_out": _round(prof["t_out"]), "q_sw": _round(prof["q_sw"]), "q_lw": _round(prof["q_lw"])},
        "wall_types": WALL_TYPES,
        "buildings": buildings,
        "storage": {"a": 0.999, "capacity": 300.0, "exchange_max": [10.0, 10.0, 10.0]},
        "topology": {
            "default": "fixed",
            "schedules": {"fixed": {"weights": [FIXED_WEIGHTS]}, "time_varying": {"weights": TIME_VARYING_WEIGHTS}},
        },
        "algorithm": {"alpha": 1.0, "threshold": 1e-3, "max_iter": 3000, "seed": 0},
    }


def tiny_scenario_dict(n_t: int = 4, dt: float = 1800.0) -> dict:
    """Two one-zone buildings behind single-slice walls, a few hours of a
    warm afternoon. Small enough for brute-force checks."""
    hours = 12.0 + np.arange(n_t + 1) * dt / 3600.0
    t_out = 30.0 + 2.0 * np.sin(np.pi * (hours - 12.0) / 8.0)
    q_sw = 500.0 * np.clip(np.cos(np.pi * (hours - 13.0) / 12.0), 0, None)
    q_lw = 330.0 + 4.0 * (t_out - 22.0)
    wall = {"slices": [{"capacity": 2.0e5, "hbar_prev": 15.0, "hbar_next": 8.0, "alpha_sw": 0.5, "alpha_lw": 0.9,
                        "emissivity": 0.9, "t_lin": 28.0}]}

    def building(name, area, chiller, prices):
        c2, c1, c0, e_max = chiller
        return {
            "name": name,
            "zones": [{"name": "hall", "capacity": 4.0e6, "occupancy": [5.0] * (n_t + 1), "people_heat": 75.0,
                       "people_slope": -3.0, "comfort_temp": 24.0, "alpha": 1.0, "beta": 5.0, "gamma": 200.0}],
            "walls": [{"name": "shell", "type": "shell", "area": area, "first": "outdoor", "last": 0}],
            "chiller": {"e_max": e_max, "biquadratic": {"c2": c2, "c1": c1, "c0": c0}},
            "prices": prices,
            "comfort": {"lo": [[21.0]] * n_t, "hi": [[25.0]] * n_t},
        }

    return {
        "metadata": {"name": "two-building toy", "reconstruction": True, "notes": "synthetic test case"},
        "units": {"temperature": "degC", "energy": "MJ", "time": "s", "power": "W"},
        "horizon": {"n_t": n_t, "dt": dt},
        "disturbances": {"t_out": _round(t_out), "q_sw": _round(q_sw), "q_lw": _round(q_lw)},
        "wall_types": {"shell": wall},
        "buildings": [
            building("east", 40.0, (5.0e-4, 3.0e-2, 1.0, 20.0), [0.8, 1.0, 1.0, 0.8][:n_t] + [0.8] * max(0, n_t - 4)),
            building("west", 30.0, (3.0e-4, 2.0e-2, 1.5, 20.0), [1.0, 0.8, 0.8, 1.0][:n_t] + [1.0] * max(0, n_t - 4)),
        ],
        "storage": {"a": 0.95, "capacity": 6.0, "exchange_max": [1.5, 1.5]},
        "topology": {"default": "pair", "schedules": {"pair": {"weights": [[[0.5, 0.5], [0.5, 0.5]]]}}},
        "algorithm": {"alpha": 10.0, "threshold": 1e-3, "max_iter": 3000, "seed": 0},
    }
