import numpy as np
import pytest

from topogrid import DcSolver, Grid, bundled_case


@pytest.fixture(scope="session")
def case14() -> Grid:
    return bundled_case("case14")


@pytest.fixture(scope="session")
def case14_solver(case14) -> DcSolver:
    return DcSolver(case14)


@pytest.fixture()
def triangle() -> Grid:
    """3-bus loop: P = (+1, -1, 0), slack bus 3, all susceptances 1."""
    return Grid.create(
        buses=[("1", 1.0), ("2", -1.0), ("3", 0.0)],
        branches=[("1-2", "1", "2", 1.0), ("1-3", "1", "3", 1.0), ("3-2", "3", "2", 1.0)],
        slack="3",
    )


@pytest.fixture()
def diamond() -> Grid:
    """4-bus square with one diagonal; P = (2, -1, -1, 0), slack bus 4.

    Hand-solved reference: flows are 1-2: 7/8, 2-3: -1/8, 1-4: 3/8,
    4-3: 3/8, 1-3: 3/4.
    """
    return Grid.create(
        buses=[("1", 2.0), ("2", -1.0), ("3", -1.0), ("4", 0.0)],
        branches=[
            ("1-2", "1", "2", 1.0),
            ("2-3", "2", "3", 1.0),
            ("1-4", "1", "4", 1.0),
            ("4-3", "4", "3", 1.0),
            ("1-3", "1", "3", 1.0),
        ],
        slack="4",
    )


@pytest.fixture()
def square_with_idle_diagonal() -> Grid:
    """Symmetric 4-bus ring plus a diagonal that carries exactly zero flow."""
    return Grid.create(
        buses=[("1", 1.0), ("2", 0.0), ("3", -1.0), ("4", 0.0)],
        branches=[
            ("1-2", "1", "2", 1.0),
            ("2-3", "2", "3", 1.0),
            ("1-4", "1", "4", 1.0),
            ("4-3", "4", "3", 1.0),
            ("2-4", "2", "4", 1.0),
        ],
        slack="4",
    )


def max_flow_diff(a, b) -> float:
    assert tuple(br.id for br in a.grid.branches) == tuple(br.id for br in b.grid.branches)
    return float(np.max(np.abs(a.flows - b.flows)))
