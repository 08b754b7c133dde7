import numpy as np
import pytest

from pintopt.field import GridSpec, operators
from pintopt.pfasst import Hierarchy
from pintopt.problems import make_heat_problem
from pintopt.sweeper import LinearReaction, RhsSplit

SCALAR_GRID = GridSpec(1, (1.0,), (4,))


def scalar_rhs(rate: float, num_nodes: int) -> RhsSplit:
    """y' = rate * y on spatially constant fields (the Laplacian vanishes)."""
    coef = np.full((num_nodes,) + SCALAR_GRID.shape, -rate)
    return RhsSplit(operators(SCALAR_GRID), 1.0, None, LinearReaction(coef))


def scalar(value: float) -> np.ndarray:
    return np.full(SCALAR_GRID.shape, float(value))


def collocation_solution(rule, rate: float, dt: float, y0: float) -> np.ndarray:
    """Direct solve of (I - dt*rate*Q) y = y0 for the scalar test equation."""
    M = rule.num_nodes
    return np.linalg.solve(np.eye(M) - dt * rate * rule.Q, np.full(M, y0))


def heat_hierarchy(points=(8, 16), nodes=(3, 5), kind="imex") -> Hierarchy:
    return Hierarchy.build([GridSpec.periodic(n) for n in points], list(nodes), kind)


@pytest.fixture(scope="session")
def small_heat():
    """Heat problem at reduced resolution: 8^3/16^3, 3/5 nodes, 4 steps."""
    return make_heat_problem(heat_hierarchy(), lam=0.05, T=2.0, num_steps=4)


@pytest.fixture(scope="session")
def heat20():
    """Heat problem with the reference step count and a two-level 8^3/16^3 hierarchy."""
    return make_heat_problem(heat_hierarchy(), lam=0.05, T=2.0, num_steps=20)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
