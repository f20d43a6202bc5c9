"""
Test configuration and fixtures.
"""
import os
import sys

import pytest

# Add src and tests directories to Python path
src_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src"))
tests_dir = os.path.abspath(os.path.dirname(__file__))
sys.path[:0] = [src_dir, tests_dir]

from config import NewtonConfig, SolverConfig  # noqa: E402
from mechanics.assembly import CellAssembler  # noqa: E402
from mechanics.hyperelastic import MaterialParams  # noqa: E402
from test_utils import make_bcs, make_cell, make_lattice, preserved_logging  # noqa: E402


@pytest.fixture(scope="session")
def material() -> MaterialParams:
    """E = 500 MPa, nu = 0.4."""
    return MaterialParams(E=500.0, nu=0.4)


@pytest.fixture(scope="session")
def uc1_cell():
    """Bilinear cross cell, one element per patch."""
    return make_cell("uc1_cross", p=1, n_e=1)


@pytest.fixture(scope="session")
def uc1_cell_p2():
    return make_cell("uc1_cross", p=2, n_e=2)


@pytest.fixture(scope="session")
def cantilever_2x2():
    """2 x 2 cross lattice clamped on the left, sheared on the right."""
    bcs = make_bcs(traction=[{"face": "right", "traction": [0.0, -0.5]}])
    return make_lattice(2, 2, p=1, n_e=1, bcs=bcs)


@pytest.fixture(scope="session")
def cantilever_assembler(cantilever_2x2, material) -> CellAssembler:
    return CellAssembler(cantilever_2x2, material)


@pytest.fixture
def newton_settings() -> NewtonConfig:
    return NewtonConfig()


@pytest.fixture
def exact_solver_settings() -> SolverConfig:
    """RB settings tight enough that every cell is principal."""
    return SolverConfig(solver="rb", epsilon=1e-12, outer_tol=1e-10, inner_tol=1e-10, max_inner=500)


@pytest.fixture(autouse=True)
def restore_logging():
    """setup_logging replaces root handlers and package levels; undo it after every test."""
    with preserved_logging():
        yield


def pytest_collection_modifyitems(items):
    """Add markers based on test location and name."""
    for item in items:
        if "integration" in item.nodeid:
            item.add_marker(pytest.mark.integration)
        elif "unit" in item.nodeid:
            item.add_marker(pytest.mark.unit)
