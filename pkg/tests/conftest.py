"""Shared fields.  The solved tripod field (129 x 129 grid) is built once per session."""
import numpy as np
import pytest

from harmstrat.fields import DomainGrid, MapField, example_map
from harmstrat.solver import solve_dirichlet
from harmstrat.strata import quantitative_stratum

TRIPOD_CENTERS = [(0.0, 0.0)] + [
    (d * np.cos(a), d * np.sin(a)) for a in (np.pi / 3, np.pi, -np.pi / 3) for d in (0.1, 0.2, 0.3)
]


@pytest.fixture(scope="session")
def grid2_fine():
    return DomainGrid(2, (0.0, 0.0), 1.0, 1 / 128)


@pytest.fixture(scope="session")
def grid2():
    return DomainGrid(2, (0.0, 0.0), 1.0, 1 / 64)


@pytest.fixture(scope="session")
def grid3():
    return DomainGrid(3, (0.0, 0.0, 0.0), 1.0, 1 / 32)


@pytest.fixture(scope="session")
def tripod_fine(grid2_fine):
    return MapField.from_analytic(grid2_fine, example_map("tripod"))


@pytest.fixture(scope="session")
def tripod(grid2):
    return MapField.from_analytic(grid2, example_map("tripod"))


@pytest.fixture(scope="session")
def linear(grid2):
    return MapField.from_analytic(grid2, example_map("linear", 2))


@pytest.fixture(scope="session")
def product(grid3):
    return MapField.from_analytic(grid3, example_map("product"))


@pytest.fixture(scope="session")
def product_factor(grid3):
    return MapField.from_analytic(grid3, example_map("product_factor"))


@pytest.fixture(scope="session")
def solved_tripod(grid2):
    amap = example_map("tripod")
    field, report = solve_dirichlet(grid2, amap.target, lambda c: amap.at(c))
    assert report.converged
    return field, report


@pytest.fixture(scope="session")
def product_stratum(product_factor):
    return quantitative_stratum(product_factor, 1, 0.05, 1 / 32)


@pytest.fixture(scope="session")
def product_cover_nodes(product_factor, product_stratum):
    nodes = product_stratum.nodes
    pts = product_factor.grid.coords[nodes]
    return nodes[np.linalg.norm(pts, axis=1) <= 1 / 8]


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
