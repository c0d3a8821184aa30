import numpy as np
import pytest

from planckian.core import make_grid


@pytest.fixture(scope="session")
def grid():
    return make_grid(256, 128.0)


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(64, 64.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config._criteria = {}


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(config._criteria):
        ok, detail = config._criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
