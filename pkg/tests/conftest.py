import numpy as np
import pytest

from meterflow.data_io import Scenario, simulate_scenario
from meterflow.state_model import ModelParams


def record_acceptance(config, line):
    """Collect one verdict line; echoed after the run and printed inline."""
    lines = getattr(config, "_acceptance_lines", None)
    if lines is None:
        lines = config._acceptance_lines = []
    lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def random_instances(seed=7, count=200, arrivals=50):
    """The shared batch of random GI/GI/s instances used by oracle tests."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        s = int(rng.integers(1, 8))
        alphas = rng.exponential(1.0 / 0.7, size=arrivals)
        nus = rng.exponential(5.0, size=arrivals)
        out.append((alphas, nus, s))
    return out


@pytest.fixture(scope="session")
def instances200():
    return random_instances()


@pytest.fixture(scope="session")
def scenario_a():
    sc = Scenario(theta=ModelParams(0.752, 5.0, 1.0, 7), num_payments=40, seed=7)
    return simulate_scenario(sc)


@pytest.fixture(scope="session")
def scenario_b():
    sc = Scenario(theta=ModelParams(0.752, 5.0, 0.8, 7), num_payments=40, seed=99)
    return simulate_scenario(sc)
