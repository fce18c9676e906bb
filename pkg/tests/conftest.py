import numpy as np
import pytest

from shs_sentinel.closed_loop import closed_loops, design_gains
from shs_sentinel.grid_model import build_small_signal_model, bundled_grid, parse_grid
from shs_sentinel.scenarios import build_catalog

# Ring of four buses: slack at 1, generators at 2 and 4, a passive PMU bus 3.
TOY_GRID = """
[buses]
1 2 3 4
[lines]
L1 1 2 0.01 0.10
L2 2 3 0.02 0.20
L3 3 4 0.01 0.25
L4 4 1 0.03 0.40
[generators]
G1 2 0.05 0.02 1.0
G2 4 0.04 0.03 1.0
[slack]
1
[pmus]
P1 3 angle
P2 2 angle
[loads]
3 0.5
"""


@pytest.fixture(scope="session")
def toy_grid():
    return parse_grid(TOY_GRID, path="toy.grid")


@pytest.fixture(scope="session")
def toy_model(toy_grid):
    return build_small_signal_model(toy_grid)


@pytest.fixture(scope="session")
def toy_gains(toy_model):
    return design_gains(toy_model, (-1.0, -1.5, -2.0, -2.5), (-6.0, -7.0, -8.0, -9.0))


@pytest.fixture(scope="session")
def grid():
    return bundled_grid()


@pytest.fixture(scope="session")
def nominal(grid):
    return build_small_signal_model(grid)


@pytest.fixture(scope="session")
def catalog(grid, nominal):
    return build_catalog(grid, nominal)


@pytest.fixture(scope="session")
def gains(nominal):
    return design_gains(nominal)


@pytest.fixture(scope="session")
def loops(catalog, gains):
    return closed_loops(catalog, gains)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance check, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}" + (f": {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
