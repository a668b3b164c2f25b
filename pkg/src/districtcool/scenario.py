"""Scenario files: JSON schema, validation and conversion to model objects.

Temperatures in a scenario are given in the unit declared by
``units.temperature`` (``degC`` or ``K``) and stored in kelvin internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .plant import BiquadFit, ChillerParams, NgGordonParams, StorageParams
from .problem import BuildingSpec, District, comfort_schedule_from_occupancy
from .thermal import (
    OUTDOOR,
    DisturbanceProfile,
    SliceParams,
    ThermalModelError,
    ZoneParams,
    assemble_building_dynamics,
    assemble_wall_dynamics,
)

KELVIN = 273.15

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_series = {"type": "array", "items": _num, "minItems": 2}
_matrix = {"type": "array", "items": {"type": "array", "items": _nonneg}, "minItems": 1}
_boundary = {"oneOf": [{"type": "integer", "minimum": 0}, {"const": OUTDOOR}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["units", "horizon", "disturbances", "wall_types", "buildings", "storage"],
    "properties": {
        "metadata": {"type": "object"},
        "units": {
            "type": "object",
            "required": ["temperature"],
            "properties": {
                "temperature": {"enum": ["degC", "K"]},
                "energy": {"const": "MJ"},
                "time": {"const": "s"},
                "power": {"const": "W"},
            },
        },
        "horizon": {
            "type": "object",
            "required": ["n_t", "dt"],
            "properties": {"n_t": {"type": "integer", "minimum": 2}, "dt": _pos},
        },
        "disturbances": {
            "type": "object",
            "required": ["t_out", "q_sw", "q_lw"],
            "properties": {"t_out": _series, "q_sw": _series, "q_lw": _series},
        },
        "wall_types": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["slices"],
                "properties": {
                    "slices": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["capacity"],
                            "properties": {
                                "capacity": _pos,
                                "h_prev": _nonneg,
                                "h_next": _nonneg,
                                "hbar_prev": _nonneg,
                                "hbar_next": _nonneg,
                                "alpha_sw": _nonneg,
                                "alpha_lw": _nonneg,
                                "emissivity": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                                "generation": _num,
                                "t_lin": _num,
                            },
                            "additionalProperties": False,
                        },
                    }
                },
            },
        },
        "buildings": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "zones", "walls", "chiller", "prices", "comfort"],
                "properties": {
                    "name": {"type": "string"},
                    "zones": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["capacity", "occupancy", "people_heat", "people_slope", "alpha", "beta", "gamma"],
                            "properties": {
                                "name": {"type": "string"},
                                "capacity": _pos,
                                "occupancy": _series,
                                "people_heat": _num,
                                "people_slope": _num,
                                "comfort_temp": _num,
                                "alpha": {"oneOf": [_num, _series]},
                                "beta": _num,
                                "gamma": _num,
                            },
                        },
                    },
                    "walls": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["type", "area", "first", "last"],
                            "properties": {
                                "name": {"type": "string"},
                                "type": {"type": "string"},
                                "area": _pos,
                                "first": _boundary,
                                "last": _boundary,
                            },
                        },
                    },
                    "chiller": {
                        "type": "object",
                        "required": ["e_max"],
                        "properties": {
                            "e_max": _pos,
                            "biquadratic": {
                                "type": "object",
                                "required": ["c2", "c1", "c0"],
                                "properties": {"c2": _nonneg, "c1": _nonneg, "c0": _num},
                            },
                            "ng_gordon": {
                                "type": "object",
                                "required": ["a1", "a2", "a3", "a4", "t_cw"],
                                "properties": {"a1": _num, "a2": _num, "a3": _num, "a4": _num, "t_cw": _num},
                            },
                        },
                        "anyOf": [{"required": ["biquadratic"]}, {"required": ["ng_gordon"]}],
                    },
                    "prices": _series,
                    "comfort": {
                        "oneOf": [
                            {
                                "type": "object",
                                "required": ["occupied", "unoccupied"],
                                "properties": {
                                    "occupied": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                                    "unoccupied": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                                },
                                "additionalProperties": False,
                            },
                            {
                                "type": "object",
                                "required": ["lo", "hi"],
                                "properties": {
                                    "lo": {"type": "array", "items": {"type": "array", "items": _num}},
                                    "hi": {"type": "array", "items": {"type": "array", "items": _num}},
                                },
                                "additionalProperties": False,
                            },
                        ]
                    },
                },
            },
        },
        "storage": {
            "type": "object",
            "required": ["a", "capacity", "exchange_max"],
            "properties": {
                "a": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "capacity": _pos,
                "exchange_max": {"type": "array", "items": _pos, "minItems": 1},
            },
        },
        "topology": {
            "type": "object",
            "required": ["schedules"],
            "properties": {
                "default": {"type": "string"},
                "schedules": {
                    "type": "object",
                    "minProperties": 1,
                    "additionalProperties": {
                        "type": "object",
                        "required": ["weights"],
                        "properties": {"weights": {"type": "array", "items": _matrix, "minItems": 1}},
                    },
                },
            },
        },
        "algorithm": {
            "type": "object",
            "properties": {
                "alpha": _pos,
                "threshold": _pos,
                "max_iter": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
    },
}


class ScenarioError(ValueError):
    """Schema or consistency failure; ``errors`` holds ``(pointer, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p or '/'}: {m}" for p, m in self.errors))


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def schema_errors(data: dict) -> list:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    return [(_pointer(e.absolute_path), e.message) for e in errs]


@dataclass
class AlgorithmParams:
    alpha: float = 1.0
    threshold: float = 1e-3
    max_iter: int = 3000
    seed: int = 0


@dataclass
class Scenario:
    district: District
    topologies: dict  # name -> list of weight matrices (one period)
    default_topology: Optional[str]
    algorithm: AlgorithmParams
    metadata: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _temp(v, unit):
    a = np.asarray(v, dtype=float)
    return a + KELVIN if unit == "degC" else a


def _check_len(errors, ptr, arr, n):
    if len(arr) != n:
        errors.append((ptr, f"expected {n} values, got {len(arr)}"))
        return False
    return True


def scenario_from_dict(data: dict) -> Scenario:
    errors = schema_errors(data)
    if errors:
        raise ScenarioError(errors)
    unit = data["units"]["temperature"]
    n_t = int(data["horizon"]["n_t"])
    dt = float(data["horizon"]["dt"])
    errors = []
    dist = data["disturbances"]
    for k in ("t_out", "q_sw", "q_lw"):
        _check_len(errors, f"/disturbances/{k}", dist[k], n_t + 1)
    if errors:
        raise ScenarioError(errors)
    disturbances = DisturbanceProfile(_temp(dist["t_out"], unit), np.asarray(dist["q_sw"], float), np.asarray(dist["q_lw"], float))

    wall_types = {}
    for name, wt in data["wall_types"].items():
        slices = []
        for s in wt["slices"]:
            kw = dict(s)
            if "t_lin" in kw:
                kw["t_lin"] = float(_temp(kw["t_lin"], unit))
            slices.append(SliceParams(**kw))
        wall_types[name] = slices

    buildings = []
    for bi, b in enumerate(data["buildings"]):
        ptr = f"/buildings/{bi}"
        n_z = len(b["zones"])
        zones = []
        for zi, z in enumerate(b["zones"]):
            zp = f"{ptr}/zones/{zi}"
            ok = _check_len(errors, f"{zp}/occupancy", z["occupancy"], n_t + 1)
            if isinstance(z["alpha"], list):
                ok &= _check_len(errors, f"{zp}/alpha", z["alpha"], n_t + 1)
            if not ok:
                continue
            t_c = float(_temp(z.get("comfort_temp", 24.0 if unit == "degC" else 297.15), unit))
            p1 = float(z["people_slope"])
            p0 = float(z["people_heat"]) - p1 * t_c
            alpha = np.asarray(z["alpha"], dtype=float)
            zones.append(ZoneParams(np.asarray(z["occupancy"], float), p0, p1, alpha if alpha.ndim else float(alpha),
                                    float(z["beta"]), float(z["gamma"]), float(z["capacity"]), t_c))
        walls = []
        for wi, w in enumerate(b["walls"]):
            wp = f"{ptr}/walls/{wi}"
            if w["type"] not in wall_types:
                errors.append((f"{wp}/type", f"unknown wall type {w['type']!r}"))
                continue
            try:
                walls.append(assemble_wall_dynamics(wall_types[w["type"]], w["first"], w["last"], n_z, w["area"],
                                                    w.get("name", f"wall{wi}")))
            except ThermalModelError as exc:
                errors.append((wp, str(exc)))
        if errors:
            continue
        try:
            thermal = assemble_building_dynamics(walls, zones)
        except ThermalModelError as exc:
            errors.append((f"{ptr}/walls", str(exc)))
            continue

        ch = b["chiller"]
        if "biquadratic" in ch:
            q = ch["biquadratic"]
            fits = (BiquadFit(float(q["c2"]), float(q["c1"]), float(q["c0"])),)
            ng = None
            if "ng_gordon" in ch:
                ng = _ng(ch["ng_gordon"], unit)
            chiller = ChillerParams(float(ch["e_max"]), fits, ng)
        else:
            chiller = ChillerParams.from_ng_gordon(_ng(ch["ng_gordon"], unit), disturbances.t_out[1:], dt, float(ch["e_max"]))

        if not _check_len(errors, f"{ptr}/prices", b["prices"], n_t):
            continue
        cf = b["comfort"]
        if "occupied" in cf:
            occ = np.column_stack([z.occupancy for z in zones])
            lo, hi = comfort_schedule_from_occupancy(occ, tuple(_temp(cf["occupied"], unit)), tuple(_temp(cf["unoccupied"], unit)))
        else:
            lo, hi = _temp(cf["lo"], unit), _temp(cf["hi"], unit)
            if lo.shape != (n_t, n_z) or hi.shape != (n_t, n_z):
                errors.append((f"{ptr}/comfort", f"bounds must have shape [{n_t}][{n_z}]"))
                continue
        buildings.append(BuildingSpec(b["name"], thermal, chiller, np.asarray(b["prices"], float), lo, hi))

    st = data["storage"]
    m = len(data["buildings"])
    if len(st["exchange_max"]) != m:
        errors.append(("/storage/exchange_max", f"expected {m} values (one per building), got {len(st['exchange_max'])}"))

    topologies = {}
    default = None
    if "topology" in data:
        for name, sch in data["topology"]["schedules"].items():
            mats = []
            for k, w in enumerate(sch["weights"]):
                arr = np.asarray(w, dtype=float) if all(len(r) == len(w) for r in w) else None
                if arr is None or arr.shape != (m, m):
                    errors.append((f"/topology/schedules/{name}/weights/{k}", f"weight matrix must be {m}x{m}"))
                    continue
                mats.append(arr)
            topologies[name] = mats
        default = data["topology"].get("default")
        if default is not None and default not in topologies:
            errors.append(("/topology/default", f"unknown schedule {default!r}"))
    if errors:
        raise ScenarioError(errors)

    storage = StorageParams(float(st["a"]), float(st["capacity"]), tuple(float(v) for v in st["exchange_max"]))
    district = District(n_t, dt, disturbances, buildings, storage)
    alg = AlgorithmParams(**data.get("algorithm", {}))
    return Scenario(district, topologies, default, alg, data.get("metadata", {}), data)


def _ng(d, unit) -> NgGordonParams:
    return NgGordonParams(float(d["a1"]), float(d["a2"]), float(d["a3"]), float(d["a4"]), float(_temp(d["t_cw"], unit)))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        data = json.load(fh)
    return scenario_from_dict(data)


def default_scenario_path() -> Path:
    return Path(__file__).parent / "data" / "default.json"
