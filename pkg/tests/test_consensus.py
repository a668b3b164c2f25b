import logging
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from districtcool.consensus import (
    ConsensusError,
    WeightSchedule,
    average_estimates,
    disagreement,
    harmonic_step,
    initialize,
    iterate,
    metropolis_weights,
    run,
    sinkhorn,
    step_converged,
    validate_weights,
)
from districtcool.local_solver import AgentSolver, solve_centralized
from districtcool.presets import FIXED_WEIGHTS, TIME_VARYING_WEIGHTS


@dataclass
class Result:
    x: np.ndarray
    u: np.ndarray
    objective: float


class QuadAgent:
    """f(x) = 1/2 |x - a|^2 on a box; the prox has a closed form."""

    def __init__(self, a, lo=-np.inf, hi=np.inf):
        self.a = np.asarray(a, dtype=float)
        self.lo, self.hi = lo, hi
        self.calls = []

    def _res(self, x):
        return Result(x, np.zeros(1), 0.5 * float(np.sum((x - self.a) ** 2)))

    def solve_selfish(self):
        return self._res(np.clip(self.a, self.lo, self.hi))

    def solve_prox(self, xbar, c):
        self.calls.append(c)
        return self._res(np.clip((self.a + xbar / c) / (1.0 + 1.0 / c), self.lo, self.hi))


class BrokenAgent(QuadAgent):
    def solve_prox(self, xbar, c):
        raise RuntimeError("no luck")


def checks(report):
    return {c["name"]: c for c in report.as_dict()["checks"]}


# weights


def test_fixed_topology_is_valid():
    W = np.array(FIXED_WEIGHTS)
    np.testing.assert_allclose(np.diag(W), [2 / 3, 1 / 3, 2 / 3])
    assert W[0, 1] == W[1, 0] == W[1, 2] == W[2, 1] == pytest.approx(1 / 3)
    rep = validate_weights(WeightSchedule([W]), m=3)
    assert rep.ok, rep.as_dict()


def test_time_varying_topology_is_valid_with_complete_union():
    sch = WeightSchedule(TIME_VARYING_WEIGHTS)
    assert sch.period == 3
    rep = validate_weights(sch, m=3)
    assert rep.ok, rep.as_dict()
    union = sum((A > 0).astype(int) for A in sch.matrices)
    assert np.all(union > 0)
    # each pair talks once per period
    assert rep.intercommunication_bound == 3
    for A in sch.matrices:
        assert sorted(np.diag(A)) == [0.5, 0.5, 1.0]


def test_row_stochastic_only_is_rejected():
    A = np.array([[0.5, 0.5, 0.0], [0.5, 0.25, 0.25], [0.5, 0.0, 0.5]])
    rep = validate_weights(WeightSchedule([A]))
    c = checks(rep)
    assert not rep.ok
    assert c["row_sums"]["ok"]
    assert not c["column_sums"]["ok"]
    assert "column 0" in c["column_sums"]["detail"]


def test_disconnected_union_is_rejected():
    rep = validate_weights(WeightSchedule([np.eye(3)]))
    assert not checks(rep)["strongly_connected"]["ok"]


def test_violation_reports_offending_matrix():
    bad = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
    bad2 = bad.copy()
    bad2[0, 0], bad2[0, 1] = 1.2, -0.2
    bad2[1, 0], bad2[1, 1] = -0.2, 1.2
    rep = validate_weights(WeightSchedule([bad, bad2]))
    assert checks(rep)["nonnegative"]["detail"].startswith("k=1")


def test_small_positive_entry_below_eta_is_rejected():
    A = np.array([[0.9, 0.1], [0.1, 0.9]])
    rep = validate_weights(WeightSchedule([A], eta=0.2))
    assert not checks(rep)["positive_entries"]["ok"]


def test_malformed_schedules():
    with pytest.raises(ValueError):
        WeightSchedule([np.ones((2, 3)) / 3])
    with pytest.raises(ValueError):
        WeightSchedule([np.eye(2), np.eye(3)])
    with pytest.raises(ValueError):
        validate_weights(WeightSchedule([np.eye(2)]), m=3)


def random_positive(n, seed):
    return np.random.default_rng(seed).uniform(0.1, 1.0, size=(n, n))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(0, 10_000))
def test_sinkhorn_gives_doubly_stochastic(n, seed):
    W = sinkhorn(random_positive(n, seed))
    assert np.max(np.abs(W.sum(axis=0) - 1)) <= 1e-12
    assert np.max(np.abs(W.sum(axis=1) - 1)) <= 1e-12


def test_sinkhorn_rejects_negative():
    with pytest.raises(ValueError):
        sinkhorn(np.array([[1.0, -1.0], [1.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(arrays(bool, (5, 5)))
def test_metropolis_weights_are_symmetric_doubly_stochastic(adj):
    W = metropolis_weights(adj)
    np.testing.assert_allclose(W, W.T)
    assert np.all(W >= 0)
    assert np.max(np.abs(W.sum(axis=0) - 1)) <= 1e-12
    assert np.max(np.abs(W.sum(axis=1) - 1)) <= 1e-12


def test_metropolis_on_path_graph_validates():
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert validate_weights(WeightSchedule([metropolis_weights(adj)])).ok


# averaging


def test_fixed_weights_average_example():
    out = average_estimates(np.array(FIXED_WEIGHTS), np.array([[0.0], [3.0], [6.0]]))
    np.testing.assert_allclose(out.ravel(), [1.0, 3.0, 5.0], atol=1e-14)


def test_consensus_is_a_fixed_point():
    xs = np.tile(np.array([1.5, -2.0, 7.0]), (3, 1))
    for A in TIME_VARYING_WEIGHTS + [FIXED_WEIGHTS]:
        np.testing.assert_allclose(average_estimates(np.array(A), xs), xs, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_averaging_preserves_mean(m, seed):
    W = sinkhorn(random_positive(m, seed))
    xs = np.random.default_rng(seed + 1).normal(size=(m, 4)) * 10
    np.testing.assert_allclose(average_estimates(W, xs).mean(axis=0), xs.mean(axis=0), atol=1e-11)


def test_averaging_dimension_mismatch():
    with pytest.raises(ValueError):
        average_estimates(np.eye(3), np.zeros((2, 4)))


def test_disagreement_metric():
    xs = np.array([[0.0, 1.0], [0.5, -1.0], [0.2, 0.0]])
    assert disagreement(xs) == 2.0
    assert disagreement(xs[:1]) == 0.0


# steps and stopping


def test_harmonic_step():
    c = harmonic_step(2.0)
    vals = [c(k) for k in range(100)]
    assert vals[0] == 2.0 and vals[9] == pytest.approx(0.2)
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        harmonic_step(0.0)


def test_stopping_rule_absolute_or_relative():
    old = np.array([1000.0, 0.0])
    # large component: absolute change 0.5, relative 5e-4
    assert step_converged(np.array([1000.5, 0.0005]), old, 1e-3)
    # small component moving 0.01: neither criterion holds
    assert not step_converged(np.array([1000.0, 0.01]), old, 1e-3)


# iterations on stubs


def test_large_prox_parameter_recovers_selfish():
    agents = [QuadAgent([1.0, 2.0]), QuadAgent([-3.0, 0.0])]
    st0 = initialize(agents)
    st0.xs[:] = 0.0
    st1, _ = iterate(st0, agents, WeightSchedule([np.full((2, 2), 0.5)]), lambda k: 1e6)
    np.testing.assert_allclose(st1.xs, [a.a for a in agents], atol=1e-5)


def test_single_agent_stays_at_selfish_optimum():
    agent = QuadAgent([0.3, -0.2], lo=-0.1, hi=0.1)
    res = run([agent], WeightSchedule([np.eye(1)]), harmonic_step(1.0), threshold=1e-9, max_iter=50)
    assert res.converged
    np.testing.assert_allclose(res.state.xs[0], [0.1, -0.1])


def test_identical_agents_stay_identical():
    agents = [QuadAgent([1.0, 5.0], lo=0, hi=4) for _ in range(3)]
    res = run(agents, WeightSchedule(TIME_VARYING_WEIGHTS), harmonic_step(1.0), threshold=0.0, max_iter=20)
    assert np.all(res.state.xs == res.state.xs[0])


def test_infinite_threshold_stops_after_one_round():
    agents = [QuadAgent([1.0]), QuadAgent([2.0]), QuadAgent([4.0])]
    res = run(agents, WeightSchedule([FIXED_WEIGHTS]), harmonic_step(1.0), threshold=np.inf)
    assert res.converged and res.state.k == 1 and len(res.trace) == 1


def test_cap_is_reported(caplog):
    agents = [QuadAgent([0.0]), QuadAgent([10.0])]
    with caplog.at_level(logging.WARNING):
        res = run(agents, WeightSchedule([np.full((2, 2), 0.5)]), harmonic_step(1.0), threshold=0.0, max_iter=5)
    assert not res.converged and res.status == "max-iter" and res.state.k == 5
    assert "iteration cap" in caplog.text


def test_failure_names_agent_and_round():
    agents = [QuadAgent([0.0]), BrokenAgent([1.0])]
    with pytest.raises(ConsensusError) as err:
        run(agents, WeightSchedule([np.full((2, 2), 0.5)]), harmonic_step(1.0), max_iter=3)
    assert err.value.agent == 1 and err.value.k == 0


def test_schedule_size_must_match_agents():
    with pytest.raises(ValueError):
        run([QuadAgent([0.0])], WeightSchedule([FIXED_WEIGHTS]), harmonic_step(1.0))


def test_steps_follow_schedule():
    agents = [QuadAgent([0.0]), QuadAgent([1.0])]
    run(agents, WeightSchedule([np.full((2, 2), 0.5)]), harmonic_step(3.0), threshold=0.0, max_iter=4)
    assert agents[0].calls == [3.0, 1.5, 1.0, 0.75]


def test_dispatch_order_does_not_change_results():
    rng = np.random.default_rng(0)
    targets = rng.normal(size=(3, 6))
    agents = [QuadAgent(a, -0.5, 0.5) for a in targets]
    sch = WeightSchedule(TIME_VARYING_WEIGHTS)
    state = initialize(agents)
    outs = [iterate(state, agents, sch, harmonic_step(1.0), order=o)[0].xs for o in ([0, 1, 2], [2, 0, 1], [1, 2, 0])]
    for xs in outs[1:]:
        assert np.array_equal(xs, outs[0])


def _trace_array(res):
    return np.array([[r.k, r.c, r.disagreement] + r.objectives + r.step_norms for r in res.trace])


def test_runs_are_reproducible_across_seeds_and_workers():
    targets = np.random.default_rng(5).normal(size=(3, 4))
    sch = WeightSchedule([FIXED_WEIGHTS])
    base = run([QuadAgent(a) for a in targets], sch, harmonic_step(1.0), threshold=1e-4, seed=0)
    for kw in ({"seed": 0}, {"seed": 7}, {"workers": 3}):
        other = run([QuadAgent(a) for a in targets], sch, harmonic_step(1.0), threshold=1e-4, **kw)
        assert np.array_equal(_trace_array(base), _trace_array(other))
        assert np.array_equal(base.state.xs, other.state.xs)


@pytest.mark.parametrize("schedule", [[FIXED_WEIGHTS], TIME_VARYING_WEIGHTS])
def test_quadratic_stubs_reach_the_network_optimum(schedule):
    # sum of 1/2 |x - a_i|^2 is minimized at the mean target; the error
    # shrinks like the step size
    targets = np.array([[0.0, 3.0], [2.0, -1.0], [7.0, 1.0]])
    errs = []
    for n in (300, 3000):
        agents = [QuadAgent(a) for a in targets]
        res = run(agents, WeightSchedule(schedule), harmonic_step(5.0), threshold=0.0, max_iter=n)
        errs.append(np.max(np.abs(res.state.xs - targets.mean(axis=0))))
    assert errs[1] < 0.25 * errs[0]
    assert errs[1] < 0.05


# real agents


@pytest.fixture(scope="module")
def tiny_run(tiny_agents, tiny_scenario):
    solvers = [AgentSolver(a) for a in tiny_agents]
    sch = WeightSchedule(tiny_scenario.topologies["pair"])
    alg = tiny_scenario.algorithm
    return solvers, run(solvers, sch, harmonic_step(alg.alpha), threshold=alg.threshold, max_iter=alg.max_iter)


def test_tiny_initialization_is_feasible_and_selfish(tiny_run):
    solvers, _ = tiny_run
    state = initialize(solvers)
    for s, x, u, f in zip(solvers, state.xs, state.us, state.objectives):
        assert s.agent.max_violation(x, u) <= 1e-7
        # no feasible point of this agent does better
        for lam in (0.3, 0.7):
            other = state.xs[1 - s.agent.i]
            try:
                g = s.solve_inner(lam * x + (1 - lam) * other).objective
            except Exception:
                continue
            assert f <= g + 1e-7 * (1 + abs(g))


def test_tiny_run_converges_near_central(tiny_run, tiny_agents):
    solvers, res = tiny_run
    assert res.converged
    central = solve_centralized(tiny_agents)
    xhat = res.state.xs.mean(axis=0)
    total = sum(s.solve_inner(xhat, feas_tol=1e-7).objective for s in solvers)
    assert total == pytest.approx(central.objective, rel=2e-3)
    assert res.state.disagreement < 0.1
    for s, x, u in zip(solvers, res.state.xs, res.state.us):
        assert s.agent.max_violation(x, u) <= 1e-6


def test_default_selfish_start_building_one_withdraws(default_agents):
    solvers = [AgentSolver(a) for a in default_agents]
    state = initialize(solvers)
    e1 = default_agents[0].exchanges(state.xs[0])
    assert np.mean(e1 > 0) > 0.5
    for s, x, u in zip(solvers, state.xs, state.us):
        assert s.agent.max_violation(x, u) <= 1e-6
