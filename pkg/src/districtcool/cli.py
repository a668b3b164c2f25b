"""Command line entry point: ``districtcool validate | run | compare``.

Exit codes: 0 success, 1 validation failure, 2 solver failure (including a
consensus run that hits its iteration cap), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .artifacts import RunArtifacts, SchemaMismatch, compare_runs, load_run
from .consensus import ConsensusError, WeightSchedule, harmonic_step, run, validate_weights
from .local_solver import AgentSolver, SolverError, solve_centralized
from .plant import PlantModelError, cooling_cap
from .problem import AgentProblem, ProblemError
from .scenario import Scenario, ScenarioError, default_scenario_path, load_scenario, scenario_from_dict, schema_errors
from .thermal import ThermalModelError

log = logging.getLogger("districtcool")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class IOFailure(RuntimeError):
    pass


def _load(path) -> Scenario:
    try:
        return load_scenario(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise IOFailure(f"cannot read scenario {path}: {exc}") from exc


# -- validation ------------------------------------------------------------------


def validate_scenario_file(path) -> dict:
    """Schema, consistency and mixing-weight checks. Returns a report with
    ``ok`` and one entry per check."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IOFailure(f"cannot read scenario {path}: {exc}") from exc
    report = {"scenario": str(path), "schema": [], "topologies": {}, "physical": []}
    errs = schema_errors(data)
    report["schema"] = [{"pointer": p, "message": msg} for p, msg in errs]
    if errs:
        report["ok"] = False
        return report
    try:
        sc = scenario_from_dict(data)
    except ScenarioError as exc:
        report["schema"] = [{"pointer": p, "message": msg} for p, msg in exc.errors]
        report["ok"] = False
        return report
    except (PlantModelError, ThermalModelError, ProblemError) as exc:
        report["schema"] = [{"pointer": "", "message": str(exc)}]
        report["ok"] = False
        return report
    ok = True
    for name, mats in sc.topologies.items():
        rep = validate_weights(WeightSchedule(mats), m=sc.district.m)
        report["topologies"][name] = rep.as_dict()
        ok &= rep.ok
    if not sc.topologies:
        report["physical"].append({"name": "topology", "ok": False, "detail": "no weight schedule given"})
        ok = False
    for b in sc.district.buildings:
        coef = b.chiller.coefficients(sc.district.n_t)
        try:
            for c in coef:
                cooling_cap(tuple(c), b.chiller.e_max)
            good, detail = True, ""
        except PlantModelError as exc:
            good, detail = False, str(exc)
        report["physical"].append({"name": f"{b.name}: chiller limit above idle draw", "ok": good, "detail": detail})
        ok &= good
    report["ok"] = bool(ok)
    return report


# -- runs ---------------------------------------------------------------------------


def _topology(sc: Scenario, name: Optional[str]) -> tuple[str, list]:
    name = name or sc.default_topology or next(iter(sc.topologies), None)
    if name is None or name not in sc.topologies:
        raise ScenarioError([("/topology", f"unknown or missing weight schedule {name!r}")])
    return name, sc.topologies[name]


def consensus_point(solvers, xs: np.ndarray) -> tuple[np.ndarray, Optional[list], Optional[list]]:
    """Average of the agents' estimates and the best local decisions for it.
    ``us`` is None when some building cannot follow the averaged plan."""
    xh = np.asarray(xs).mean(axis=0)
    try:
        res = [s.solve_inner(xh, feas_tol=1e-7) for s in solvers]
    except SolverError as exc:
        log.warning("consensus point not feasible for every building: %s", exc)
        return xh, None, None
    return xh, [r.u for r in res], [r.objective for r in res]


def run_distributed(sc: Scenario, topology: Optional[str] = None, alpha: Optional[float] = None,
                    threshold: Optional[float] = None, max_iter: Optional[int] = None, seed: Optional[int] = None,
                    workers: int = 1, callback=None) -> tuple[RunArtifacts, bool]:
    alg = sc.algorithm
    alpha = alg.alpha if alpha is None else alpha
    threshold = alg.threshold if threshold is None else threshold
    max_iter = alg.max_iter if max_iter is None else max_iter
    seed = alg.seed if seed is None else seed
    name, mats = _topology(sc, topology)
    schedule = WeightSchedule(mats)
    wrep = validate_weights(schedule, m=sc.district.m)
    if not wrep.ok:
        bad = ", ".join(c.name for c in wrep.checks if not c.ok)
        raise ScenarioError([(f"/topology/schedules/{name}", f"weights violate: {bad}")])
    agents = [AgentProblem(sc.district, i) for i in range(sc.district.m)]
    solvers = [AgentSolver(a) for a in agents]
    summary = {
        "mode": "distributed",
        "scenario": sc.metadata.get("name", ""),
        "topology": name,
        "alpha": alpha,
        "threshold": threshold,
        "max_iter": max_iter,
        "seed": seed,
    }
    trace = []

    def keep(state, row):
        trace.append(row)
        if callback is not None:
            callback(state, row)

    try:
        res = run(solvers, schedule, harmonic_step(alpha), threshold, max_iter, seed, workers, callback=keep)
    except ConsensusError as exc:
        summary.update(status="solver-failure", converged=False, iterations=len(trace), error=str(exc),
                       failed_agent=exc.agent)
        return RunArtifacts(sc.district, agents, None, None, trace, summary), False
    st = res.state
    xh, us, objs = consensus_point(solvers, st.xs)
    summary.update(
        status=res.status,
        converged=res.converged,
        iterations=st.k,
        disagreement=st.disagreement,
        objective_iterates=float(np.sum(st.objectives)),
    )
    if us is None:
        # fall back to each building's own estimate for the profiles
        xh = st.xs[0]
        us = st.us
        summary.update(consensus_feasible=False, objective=float(np.sum(st.objectives)),
                       objectives=[float(v) for v in st.objectives])
    else:
        summary.update(consensus_feasible=True, objective=float(sum(objs)), objectives=[float(v) for v in objs])
    _plan_summary(summary, agents, xh, us)
    return RunArtifacts(sc.district, agents, xh, us, trace, summary), res.converged


def run_centralized_mode(sc: Scenario) -> RunArtifacts:
    agents = [AgentProblem(sc.district, i) for i in range(sc.district.m)]
    summary = {"mode": "centralized", "scenario": sc.metadata.get("name", "")}
    try:
        cen = solve_centralized(agents)
    except SolverError as exc:
        summary.update(status="solver-failure", converged=False, iterations=0, error=str(exc))
        if exc.report is not None:
            summary["solver"] = exc.report.as_dict()
        return RunArtifacts(sc.district, agents, None, None, [], summary)
    row = {"k": 0, "c": 0.0, "disagreement": 0.0}
    for i, f in enumerate(cen.objectives):
        row[f"objective_{i + 1}"] = f
        row[f"step_{i + 1}"] = 0.0
    summary.update(
        status="optimal",
        converged=True,
        iterations=cen.report.iterations,
        disagreement=0.0,
        objective=cen.objective,
        objective_iterates=cen.objective,
        objectives=[float(v) for v in cen.objectives],
        consensus_feasible=True,
    )
    _plan_summary(summary, agents, cen.x, cen.us)
    return RunArtifacts(sc.district, agents, cen.x, cen.us, [row], summary)


def _plan_summary(summary: dict, agents, x, us) -> None:
    lay = agents[0].glayout
    ex, e1 = lay.unpack(x)
    summary["exchange_sums"] = {agents[i].building.name: float(ex[i].sum()) for i in range(len(agents))}
    summary["initial_storage"] = float(e1.mean())
    summary["max_violation"] = float(max(a.max_violation(x, u) for a, u in zip(agents, us)))


# -- commands -------------------------------------------------------------------------


def cmd_validate(args) -> int:
    report = validate_scenario_file(args.scenario)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        try:
            Path(args.report).write_text(text + "\n")
        except OSError as exc:
            raise IOFailure(f"cannot write report: {exc}") from exc
    print(text)
    return EXIT_OK if report["ok"] else EXIT_INVALID


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if args.mode == "centralized":
        art = run_centralized_mode(sc)
        ok = art.summary["status"] == "optimal"
    else:
        def progress(state, row):
            if args.verbose and row.k % 50 == 0:
                log.info("k=%d disagreement=%.3g objective=%.6g", row.k, row.disagreement, sum(row.objectives))

        art, ok = run_distributed(sc, args.topology, args.alpha, args.threshold, args.max_iter, args.seed,
                                  args.workers, callback=progress)
    try:
        art.write(args.out)
    except OSError as exc:
        raise IOFailure(f"cannot write outputs to {args.out}: {exc}") from exc
    s = art.summary
    print(f"{s['mode']}: status={s['status']} iterations={s.get('iterations')} objective={s.get('objective')}")
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_compare(args) -> int:
    try:
        a, b = load_run(args.run_a), load_run(args.run_b)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise IOFailure(str(exc)) from exc
    try:
        report = compare_runs(a, b)
    except SchemaMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="districtcool", description="Cooperative cooling of a building district "
                                "sharing a thermal storage, solved by proximal consensus.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario", nargs="?", default=None, help="scenario JSON (default: shipped scenario)")
    v.add_argument("--report", help="also write the JSON report here")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="solve a scenario and write CSV/JSON outputs")
    r.add_argument("scenario", nargs="?", default=None, help="scenario JSON (default: shipped scenario)")
    r.add_argument("--mode", choices=["distributed", "centralized"], default="distributed")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--max-iter", type=int, default=None)
    r.add_argument("--threshold", type=float, default=None, help="stopping threshold (default 1e-3)")
    r.add_argument("--alpha", type=float, default=None, help="step size scale in c(k) = alpha/(k+1)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--topology", default=None, help="weight schedule name from the scenario")
    r.add_argument("--workers", type=int, default=1, help="threads for the agent solves")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="diff two output directories")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "scenario", "x") is None:
        args.scenario = str(default_scenario_path())
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ScenarioError as exc:
        for ptr, msg in exc.errors:
            print(f"error: {ptr or '/'}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (PlantModelError, ThermalModelError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
