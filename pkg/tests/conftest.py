import copy

import pytest

from districtcool.presets import default_scenario_dict, tiny_scenario_dict
from districtcool.problem import AgentProblem
from districtcool.scenario import scenario_from_dict


@pytest.fixture(scope="session")
def default_dict():
    return default_scenario_dict()


@pytest.fixture(scope="session")
def default_scenario(default_dict):
    return scenario_from_dict(copy.deepcopy(default_dict))


@pytest.fixture(scope="session")
def default_agents(default_scenario):
    d = default_scenario.district
    return [AgentProblem(d, i) for i in range(d.m)]


@pytest.fixture(scope="session")
def tiny_dict():
    return tiny_scenario_dict()


@pytest.fixture(scope="session")
def tiny_scenario(tiny_dict):
    return scenario_from_dict(copy.deepcopy(tiny_dict))


@pytest.fixture(scope="session")
def tiny_agents(tiny_scenario):
    d = tiny_scenario.district
    return [AgentProblem(d, i) for i in range(d.m)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
