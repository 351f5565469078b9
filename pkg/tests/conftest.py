import functools

import numpy as np
import pytest

from optauction.grid import DensitySpec, build_grid
from optauction.ic_engine import solve_iterative
from optauction.lp_core import SolverOptions
from optauction.majorization import build_partition

ACCEPTANCE_LINES = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((number, f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def solved(B: int, I: int, n: int, M: int, mode: str = "exact", c: float = 2.5):
    """Solve a uniform instance once per test session."""
    grid = build_grid(n, DensitySpec.uniform(I))
    part = build_partition(B, M, mode)
    primal, dual, plan = solve_iterative(grid, part, c, SolverOptions(method="ipm"))
    return grid, part, primal, dual, plan


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
