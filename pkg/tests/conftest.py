import numpy as np
import pytest

from fluxswarm.env import EnvConfig, FlowConfig
from fluxswarm.flow import GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return GridSpec(64, 16, 1e-4)


@pytest.fixture
def coarse_config():
    return EnvConfig(flow=FlowConfig(dx=2e-4))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.pytest_terminal_summary_lines():
        terminalreporter.write_line(line)
