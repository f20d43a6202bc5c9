"""
Acceptance-scale runs comparing the standard and reduced-basis tangent solvers.
"""
import numpy as np
import pytest

from config import NewtonConfig, SolverConfig
from runner import build_model
from solvers.newton import NewtonSolver
from test_utils import run_config

pytestmark = [pytest.mark.integration, pytest.mark.slow]


def _solve(config):
    model, material = build_model(config)
    solver = NewtonSolver(model, material, config.newton, config.solver)
    u, trace = solver.solve(config.program)
    return model, u, trace


@pytest.fixture(scope="module")
def bending_runs():
    """4 x 2 quadratic cross lattice, clamped left, sheared right, four increments."""
    sections = dict(
        geometry={"generator": "uc1_cross", "nx": 4, "ny": 2, "p": 2, "n_e": 4},
        bcs={
            "dirichlet": [{"face": "left"}],
            "traction": [{"face": "right", "traction": [0.0, -1.0]}],
        },
        program={"increments": 4},
        newton={"rel_tol": 1e-9},
    )
    runs = {}
    for solver in ("standard", "rb"):
        runs[solver] = _solve(run_config(solver={"solver": solver, "epsilon": 3e-4}, **sections))
    return runs


def test_bending_paths_agree(bending_runs):
    _, u_standard, _ = bending_runs["standard"]
    _, u_rb, _ = bending_runs["rb"]
    assert np.linalg.norm(u_rb - u_standard) <= 1e-6 * np.linalg.norm(u_standard)


def test_bending_newton_counts_comparable(bending_runs):
    _, _, standard = bending_runs["standard"]
    _, _, rb = bending_runs["rb"]
    assert rb.total_iterations <= 2 * standard.total_iterations
    for trace in (standard, rb):
        for inc in trace.increments:
            assert inc.final_residual <= 1e-6 * inc.initial_residual


def test_bending_stores_fewer_tangents_than_cells(bending_runs):
    model, _, rb = bending_runs["rb"]
    first = rb.iterations[0]
    assert first.n_principal < model.n_cells
    assert all(it.n_principal <= model.n_cells for it in rb.iterations)


def test_rb_memory_proxy_below_direct_on_large_lattice():
    """One tangent solve of a 10 x 10 lattice with both solvers"""
    config = run_config(geometry={"generator": "uc1_cross", "nx": 10, "ny": 10, "p": 1, "n_e": 1})
    model, material = build_model(config)
    memory = {}
    du = {}
    for kind in ("standard", "rb"):
        solver = NewtonSolver(model, material, NewtonConfig(), SolverConfig(solver=kind, outer_tol=1e-10))
        u = np.zeros(model.n_dofs)
        du[kind], info = solver.solve_tangent(u, solver.residual(u, 1.0))
        memory[kind] = info["memory_bytes"]
    assert model.n_cells >= 100
    assert 0 < memory["rb"] < memory["standard"]
    assert np.linalg.norm(du["rb"] - du["standard"]) <= 1e-6 * np.linalg.norm(du["standard"])


def test_hole_lattice_compression():
    """4 x 4 hole cells compressed by 15 % through the top face"""
    sections = dict(
        geometry={"generator": "uc3_hole", "nx": 4, "ny": 4, "p": 2, "n_e": 2, "radius": 0.3},
        bcs={
            "dirichlet": [
                {"face": "bottom"},
                {"face": "top", "components": [0, 1], "value": [0.0, -0.6]},
            ]
        },
        program={"increments": 6},
        newton={"rel_tol": 1e-9},
    )
    results = {solver: _solve(run_config(solver={"solver": solver}, **sections)) for solver in ("standard", "rb")}
    reactions = {}
    for solver, (_, _, trace) in results.items():
        assert len(trace.increments) == 6
        reactions[solver] = np.array([inc.reaction["top"][1] for inc in trace.increments])
    standard = reactions["standard"]
    # compressive reaction grows with the imposed shortening before any instability
    assert np.all(np.diff(np.abs(standard[:3])) > 0.0)
    np.testing.assert_allclose(reactions["rb"], standard, rtol=1e-4)
