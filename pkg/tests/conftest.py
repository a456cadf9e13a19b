import numpy as np
import pytest

from microcal.params import default_bounds, midpoint_fill


@pytest.fixture
def bounds():
    return default_bounds()


@pytest.fixture
def mid(bounds):
    return midpoint_fill({"nu": 0.2}, bounds)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
