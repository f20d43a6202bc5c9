"""
Tests for greedy principal-cell selection and reduced-basis tangents.
"""
import logging

import numpy as np
import pytest

from mechanics.assembly import CellAssembler
from solvers.rom import (
    GRAM_COND_LIMIT,
    build_reduced_basis,
    greedy_select,
    project_coefficients,
)
from test_utils import make_bcs, make_lattice
from utils.error_handler import DegenerateBasisError


def test_identical_columns_need_one_principal():
    t = np.array([1.0, -2.0, 0.5, 3.0])
    T = np.stack([t, 2.0 * t, -0.5 * t, t], axis=1)
    result = greedy_select(T, 1e-10)
    assert result.principal == (0,)
    assert result.n_principal == 1
    np.testing.assert_allclose(result.reconstruction(), T, atol=1e-12)


def test_rank_three_snapshots():
    rng = np.random.default_rng(0)
    base = rng.standard_normal((20, 3))
    T = base @ rng.standard_normal((3, 9))
    result = greedy_select(T, 1e-8)
    assert result.n_principal == 3
    assert len(set(result.principal)) == 3
    np.testing.assert_allclose(result.reconstruction(), T, atol=1e-8 * np.abs(T).max())
    # residual history is the max-norm of the remaining residuals, ending below the tolerance
    assert result.history[-1] <= 1e-8
    assert len(result.history) == 4


def test_first_pick_has_largest_normalised_max_entry():
    T = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    result = greedy_select(T, 1e-12)
    # normalised columns: max entries 0.707, 1, 1; ties go to the lowest index
    assert result.principal[0] == 1


def test_zero_columns_are_never_selected():
    T = np.zeros((5, 4))
    T[:, 1] = [1.0, 2.0, 3.0, 4.0, 5.0]
    result = greedy_select(T, 1e-12)
    assert result.principal == (1,)
    np.testing.assert_allclose(result.beta[:, [0, 2, 3]], 0.0)


def test_all_zero_snapshots_select_nothing():
    result = greedy_select(np.zeros((3, 2)), 1e-6)
    assert result.n_principal == 0
    assert result.Z.shape == (3, 0)


def test_loose_tolerance_stops_early():
    rng = np.random.default_rng(1)
    T = np.outer(rng.standard_normal(10), np.ones(6)) + 1e-6 * rng.standard_normal((10, 6))
    assert greedy_select(T, 1e-3).n_principal == 1
    assert greedy_select(T, 1e-12).n_principal == 6


def test_greedy_input_validation():
    with pytest.raises(ValueError):
        greedy_select(np.ones((3, 2)), 0.0)
    with pytest.raises(ValueError):
        greedy_select(np.ones((3, 0)), 1e-3)


def test_projection_recovers_combination():
    rng = np.random.default_rng(2)
    selected = rng.standard_normal((12, 3))
    coefficients = np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(project_coefficients(selected, selected @ coefficients), coefficients)


def test_projection_is_least_squares():
    selected = np.array([[1.0], [0.0]])
    np.testing.assert_allclose(project_coefficients(selected, np.array([3.0, 4.0])), [3.0])


def test_projection_rejects_degenerate_gram():
    a = np.array([1.0, 2.0, 3.0])
    selected = np.stack([a, a * (1.0 + 1e-9)], axis=1)
    with pytest.raises(DegenerateBasisError) as info:
        project_coefficients(selected, a)
    assert info.value.details["condition"] is None or info.value.details["condition"] > GRAM_COND_LIMIT


def test_projection_rejects_empty_basis():
    with pytest.raises(DegenerateBasisError):
        project_coefficients(np.zeros((4, 0)), np.ones(4))


@pytest.fixture(scope="module")
def bent_lattice(material):
    bcs = make_bcs(traction=[{"face": "right", "traction": [0.0, -1.0]}])
    model = make_lattice(3, 1, bcs=bcs)
    assembler = CellAssembler(model, material)
    x = np.repeat(np.arange(model.n_functions, dtype=float), 2)
    u = 1e-3 * np.sin(x)
    u[model.dirichlet_mask] = 0.0
    return model, assembler, u


def test_reduced_basis_at_rest_picks_one_cell_per_mask(cantilever_2x2, cantilever_assembler):
    basis = build_reduced_basis(cantilever_assembler, np.zeros(cantilever_2x2.n_dofs), 1e-8)
    assert basis.n_principal == 2
    assert sorted(basis.alpha.shape) == [2, 4]
    for r, s in enumerate(basis.principal):
        expected = np.zeros(basis.n_principal)
        expected[r] = 1.0
        np.testing.assert_allclose(basis.alpha[:, s], expected)
    assert [m.cell for m in basis.matrices] == list(basis.principal)
    assert basis.matrices[0].tag == (0, basis.principal[0])


def test_reduced_basis_exact_when_every_cell_is_principal(bent_lattice):
    model, assembler, u = bent_lattice
    basis = build_reduced_basis(assembler, u, 1e-14)
    exact = assembler.tangents(u, range(model.n_cells))
    for K in exact:
        np.testing.assert_allclose(
            basis.approx_local_tangent(K.cell).data, K.data, atol=1e-9 * np.abs(K.data).max()
        )
    assert basis.transfer_constant(exact) < 1.0


def test_approx_tangent_matvec_matches_matrix(bent_lattice):
    model, assembler, u = bent_lattice
    basis = build_reduced_basis(assembler, u, 1e-2)
    approx = basis.approx_local_tangent(model.n_cells - 1)
    x = np.linspace(-1.0, 1.0, model.n_local_dofs)
    np.testing.assert_allclose(approx.matvec(x), approx.matrix @ x, rtol=1e-10, atol=1e-8)


def test_fallback_on_degenerate_gram(bent_lattice, monkeypatch, caplog):
    """The Gram-Schmidt coordinates reproduce the projection coefficients"""
    model, assembler, u = bent_lattice
    regular = build_reduced_basis(assembler, u, 1e-6)
    assert not regular.used_fallback

    def degenerate(*_args, **_kwargs):
        raise DegenerateBasisError("forced")

    monkeypatch.setattr("solvers.rom.project_coefficients", degenerate)
    with caplog.at_level(logging.WARNING, logger="solvers.rom"):
        fallback = build_reduced_basis(assembler, u, 1e-6)
    assert fallback.used_fallback
    assert "Gram-Schmidt" in caplog.text
    assert fallback.principal == regular.principal
    np.testing.assert_allclose(fallback.alpha, regular.alpha, atol=1e-6)


def test_summary_lists_principal_cells(cantilever_2x2, cantilever_assembler):
    basis = build_reduced_basis(cantilever_assembler, np.zeros(cantilever_2x2.n_dofs), 1e-8)
    summary = basis.summary()
    assert summary["n_principal"] == 2
    assert summary["principal"] == list(basis.principal)
    assert summary["gram_fallback"] is False


def test_rank_k_snapshots_select_exactly_k():
    rng = np.random.default_rng(9)
    for k in (1, 4, 8):
        T = rng.standard_normal((60, k)) @ rng.standard_normal((k, 200))
        result = greedy_select(T, 1e-10)
        assert result.n_principal == k
        assert result.history[-1] <= 1e-10


def test_homogeneous_lattice_collapses_to_one_tangent(material):
    """Identical cells sharing the same constrained face need a single stored tangent"""
    model = make_lattice(4, 1, bcs=make_bcs(dirichlet=[{"face": "bottom"}]))
    assembler = CellAssembler(model, material)
    basis = build_reduced_basis(assembler, np.zeros(model.n_dofs), 3e-4)
    assert basis.n_principal == 1
    np.testing.assert_allclose(basis.alpha, np.ones((1, 4)), atol=1e-10)
