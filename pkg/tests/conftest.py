"""Shared grids and solutions.  Small grids keep the suite fast; the default
grid is used only where a tolerance depends on resolution."""

import pytest

from pekarlab.bipolaron import minimize_rst
from pekarlab.grid import build_radial_grid, build_t_quadrature
from pekarlab.polaron import solve_single_polaron


@pytest.fixture(scope="session")
def grid48():
    return build_radial_grid(48)


@pytest.fixture(scope="session")
def tq12():
    return build_t_quadrature(12)


@pytest.fixture(scope="session")
def default_grid():
    return build_radial_grid(200)


@pytest.fixture(scope="session")
def default_tq():
    return build_t_quadrature(32)


@pytest.fixture(scope="session")
def polaron48(grid48):
    return solve_single_polaron(grid48)


@pytest.fixture(scope="session")
def polaron200(default_grid):
    return solve_single_polaron(default_grid)


@pytest.fixture(scope="session")
def hes_grid():
    return build_radial_grid(64)


@pytest.fixture(scope="session")
def hes_tq():
    return build_t_quadrature(16)


@pytest.fixture(scope="session")
def hes_polaron(hes_grid):
    return solve_single_polaron(hes_grid)


@pytest.fixture(scope="session")
def bip_hes(hes_grid, hes_tq, hes_polaron):
    """Minimizers on the Hessian grid, keyed by U."""
    out = {}
    warm = None
    for U in (0.0, 0.05, 0.1, 0.2):
        sol = minimize_rst(U, hes_grid, hes_tq, tol=1e-10, u0=warm, polaron=hes_polaron)
        out[U] = sol
        warm = sol.u
    return out


@pytest.fixture(scope="session")
def bip48(grid48, tq12, polaron48):
    out = {}
    warm = None
    for U in (0.0, 0.5, 1.0):
        sol = minimize_rst(U, grid48, tq12, tol=1e-9, u0=warm, polaron=polaron48)
        out[U] = sol
        warm = sol.u
    return out


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
