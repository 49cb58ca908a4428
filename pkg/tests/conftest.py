import numpy as np
import pytest

from rcclens.config import Config
from rcclens.pipeline import run_pipeline
from rcclens.simulator import ReferenceSimulator
from rcclens.space import CATEGORICAL, INTEGER, ParameterSpace, ParameterSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mixed_space():
    return ParameterSpace([
        ParameterSpec("a", 0.0, 100.0),
        ParameterSpec("b", -90.0, 90.0),
        ParameterSpec("n", 0, 10, kind=INTEGER),
        ParameterSpec("c", kind=CATEGORICAL, levels=("red", "green", "blue")),
    ])


@pytest.fixture(scope="session")
def unit_space():
    return ParameterSpace([ParameterSpec("x", 0.0, 1.0), ParameterSpec("y", 0.0, 1.0)])


@pytest.fixture(scope="session")
def simulator():
    return ReferenceSimulator()


@pytest.fixture(scope="session")
def reference_report():
    """Full workflow on the bundled scenario with the default configuration."""
    return run_pipeline(Config(seed=0))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
