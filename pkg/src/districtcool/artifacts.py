"""Run outputs: CSV tables and a JSON summary.

Distributed and centralized runs write the same files with the same columns,
so two output directories can be diffed directly. Floats are written with 17
significant digits so a re-read gives back the same doubles.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

FILES = ("trace.csv", "temperatures.csv", "storage.csv", "cop.csv", "summary.json")
KELVIN = 273.15


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return header, data


def _json_clean(obj):
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _json_clean(obj.tolist())
    return obj


@dataclass
class RunArtifacts:
    """Everything a run writes. ``x`` is the reported global vector, ``us``
    the local decisions that go with it."""

    district: object
    agents: list
    x: Optional[np.ndarray]
    us: Optional[list]
    trace: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def trace_header(self) -> list:
        m = self.district.m
        return ["k", "c", "disagreement"] + [f"objective_{i + 1}" for i in range(m)] + [
            f"step_{i + 1}" for i in range(m)
        ]

    def trace_rows(self):
        m = self.district.m
        for r in self.trace:
            d = r.as_dict() if hasattr(r, "as_dict") else r
            yield [d["k"], d["c"], d["disagreement"]] + [d[f"objective_{i + 1}"] for i in range(m)] + [
                d[f"step_{i + 1}"] for i in range(m)
            ]

    def temperature_table(self) -> tuple[list, list]:
        d = self.district
        header = ["t", "hour"]
        cols = []
        for a, u in zip(self.agents, self.us):
            temps, _ = a.llayout.unpack(u)
            for z in range(temps.shape[1]):
                header.append(f"{d.buildings[a.i].name}_zone{z + 1}")
                cols.append(temps[:, z] - KELVIN)
        t = np.arange(1, d.n_t + 1)
        rows = [[int(t[j]), t[j] * d.dt / 3600.0] + [c[j] for c in cols] for j in range(d.n_t)]
        return header, rows

    def storage_table(self) -> tuple[list, list]:
        d = self.district
        a0 = self.agents[0]
        ex, _ = a0.glayout.unpack(self.x)
        levels = a0.storage_levels(self.x)
        header = ["t", "hour", "level", "level_next"] + [f"exchange_{b.name}" for b in d.buildings]
        rows = [
            [t + 1, (t + 1) * d.dt / 3600.0, levels[t], levels[t + 1]] + list(ex[:, t]) for t in range(d.n_t)
        ]
        return header, rows

    def cop_table(self) -> tuple[list, list]:
        d = self.district
        header = ["t", "hour"]
        cols = []
        for a, u in zip(self.agents, self.us):
            name = d.buildings[a.i].name
            header += [f"cooling_{name}", f"electric_{name}", f"cop_{name}"]
            ec = a.net_cooling(self.x, u)
            ee = a.electric(self.x, u)
            cols += [ec, ee, ec / ee]
        rows = [[t + 1, (t + 1) * d.dt / 3600.0] + [c[t] for c in cols] for t in range(d.n_t)]
        return header, rows

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        write_csv(out / "trace.csv", self.trace_header(), self.trace_rows())
        written.append(out / "trace.csv")
        if self.x is not None and self.us is not None:
            for name, table in (
                ("temperatures.csv", self.temperature_table),
                ("storage.csv", self.storage_table),
                ("cop.csv", self.cop_table),
            ):
                header, rows = table()
                write_csv(out / name, header, rows)
                written.append(out / name)
        with open(out / "summary.json", "w") as fh:
            json.dump(_json_clean(self.summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(out / "summary.json")
        return written


def load_run(run_dir) -> dict:
    """Read an output directory back: ``{file stem: (header, data)}`` plus
    ``summary``."""
    run = Path(run_dir)
    if not (run / "summary.json").is_file():
        raise FileNotFoundError(f"{run} has no summary.json")
    out = {}
    for name in FILES[:-1]:
        p = run / name
        if p.is_file():
            out[p.stem] = read_csv(p)
    with open(run / "summary.json") as fh:
        out["summary"] = json.load(fh)
    return out


class SchemaMismatch(ValueError):
    pass


def compare_runs(a: dict, b: dict) -> dict:
    """Per-column max absolute and relative differences of the profile
    tables, plus the headline summary numbers side by side. The trace is
    compared only by length since iteration counts legitimately differ."""
    report = {"tables": {}, "summary": {}}
    for stem in ("temperatures", "storage", "cop"):
        if (stem in a) != (stem in b):
            raise SchemaMismatch(f"{stem}.csv present in only one run")
        if stem not in a:
            continue
        (ha, da), (hb, db) = a[stem], b[stem]
        if ha != hb or da.shape != db.shape:
            raise SchemaMismatch(f"{stem}.csv columns or shapes differ")
        cols = {}
        for j, name in enumerate(ha):
            if name in ("t", "hour"):
                continue
            diff = np.abs(da[:, j] - db[:, j])
            scale = np.maximum(np.abs(da[:, j]), np.abs(db[:, j]))
            rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
            cols[name] = {"max_abs": float(diff.max(initial=0.0)), "max_rel": float(rel.max(initial=0.0))}
        report["tables"][stem] = cols
    if a["trace"][0] != b["trace"][0]:
        raise SchemaMismatch("trace.csv columns differ")
    sa, sb = a["summary"], b["summary"]
    for key in ("status", "iterations", "objective", "disagreement"):
        report["summary"][key] = {"a": sa.get(key), "b": sb.get(key)}
    oa, ob = sa.get("objective"), sb.get("objective")
    if isinstance(oa, (int, float)) and isinstance(ob, (int, float)):
        report["summary"]["objective_rel_diff"] = abs(oa - ob) / max(abs(oa), abs(ob), 1e-300)
    return report
