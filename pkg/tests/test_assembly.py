"""
Tests for cell assembly, external loads and face post-processing.
"""
import numpy as np
import pytest

from config import FaceTag
from mechanics.assembly import CellAssembler
from mechanics.loads import external_force, face_dofs, local_external_force, mean_face_displacement, reaction_force
from test_utils import affine_field, make_bcs, make_lattice
from utils.error_handler import InvertedElementError


@pytest.fixture(scope="module")
def single_cell(material):
    model = make_lattice(1, 1, bcs=make_bcs(traction=[{"face": "right", "traction": [2.0, -1.0]}]))
    return model, CellAssembler(model, material)


def _smooth_field(model, scale=0.01, seed=3):
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal(model.n_dofs)


def test_zero_force_at_rest(cantilever_assembler):
    f = cantilever_assembler.internal_force(np.zeros(cantilever_assembler.model.n_dofs))
    np.testing.assert_allclose(f, 0.0, atol=1e-12)


def test_rigid_motions_are_force_free(cantilever_2x2, cantilever_assembler):
    angle = 0.3
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    u = affine_field(cantilever_2x2, rotation - np.eye(2)) + np.tile([0.4, -0.1], cantilever_2x2.n_functions)
    f = cantilever_assembler.internal_force(u)
    assert np.abs(f).max() < 1e-9 * cantilever_assembler.params.E


def test_tangent_matches_finite_difference(single_cell):
    """Unmasked local tangent is the derivative of the local internal force"""
    model, assembler = single_cell
    u_s = _smooth_field(model)[model.dof_map[0]]
    K = assembler.local_tangent(0, u_s, masked=False).matrix.toarray()
    h = 1e-7
    fd = np.zeros_like(K)
    for j in range(u_s.size):
        step = np.zeros_like(u_s)
        step[j] = h
        fd[:, j] = (assembler.local_internal_force(0, u_s + step) - assembler.local_internal_force(0, u_s - step)) / (2 * h)
    scale = np.abs(K).max()
    np.testing.assert_allclose(K, fd, atol=1e-6 * scale)


def test_tangent_is_symmetric(single_cell):
    model, assembler = single_cell
    u_s = _smooth_field(model, seed=7)[model.dof_map[0]]
    K = assembler.local_tangent(0, u_s, masked=False).matrix.toarray()
    np.testing.assert_allclose(K, K.T, atol=1e-10 * np.abs(K).max())


def test_masked_tangent_has_unit_diagonal(single_cell):
    model, assembler = single_cell
    mask = model.local_dirichlet_mask(0)
    assert mask.any()
    K = assembler.local_tangent(0, np.zeros(model.n_local_dofs)).matrix.toarray()
    np.testing.assert_allclose(K[mask][:, mask], np.eye(int(mask.sum())))
    np.testing.assert_allclose(K[mask][:, ~mask], 0.0)
    np.testing.assert_allclose(K[~mask][:, mask], 0.0)


def test_global_tangent_matches_local_scatter(cantilever_2x2, cantilever_assembler):
    u = _smooth_field(cantilever_2x2, scale=0.005)
    K = cantilever_assembler.global_tangent(u).toarray()
    expected = np.zeros_like(K)
    for s in range(cantilever_2x2.n_cells):
        dofs = cantilever_2x2.dof_map[s]
        local = cantilever_assembler.local_tangent(s, u[dofs], masked=False).matrix.toarray()
        expected[np.ix_(dofs, dofs)] += local
    mask = cantilever_2x2.dirichlet_mask
    expected[mask, :] = 0.0
    expected[:, mask] = 0.0
    expected[mask, mask] = 1.0
    np.testing.assert_allclose(K, expected, atol=1e-10 * np.abs(K).max())


def test_global_residual_masks_dirichlet_rows(cantilever_2x2, cantilever_assembler):
    u = _smooth_field(cantilever_2x2, scale=0.005)
    f_ext = external_force(cantilever_2x2, cantilever_assembler)
    r, r_full = cantilever_assembler.global_residual(u, f_ext)
    mask = cantilever_2x2.dirichlet_mask
    np.testing.assert_allclose(r[mask], 0.0)
    np.testing.assert_allclose(r[~mask], r_full[~mask])


def test_inverted_element_reports_cell(cantilever_2x2, cantilever_assembler):
    u = affine_field(cantilever_2x2, [[-2.0, 0.0], [0.0, 0.0]])
    with pytest.raises(InvertedElementError) as info:
        cantilever_assembler.internal_force(u)
    assert info.value.cell == 0


def test_snapshots_of_identical_cells_coincide(cantilever_2x2, cantilever_assembler):
    """At rest, cells differ only through their Dirichlet masks"""
    T = cantilever_assembler.snapshots(np.zeros(cantilever_2x2.n_dofs))
    assert T.shape == (cantilever_assembler.pattern.nnz, 4)
    np.testing.assert_allclose(T[:, 0], T[:, 2])
    np.testing.assert_allclose(T[:, 1], T[:, 3])
    assert not np.allclose(T[:, 0], T[:, 1])


def test_traction_resultant(single_cell):
    """A uniform traction on a unit-length face has the traction as its resultant"""
    model, assembler = single_cell
    f = external_force(model, assembler)
    np.testing.assert_allclose([f[0::2].sum(), f[1::2].sum()], [2.0, -1.0], rtol=1e-12)


def test_traction_scales_with_face_length(material):
    model = make_lattice(1, 3, bcs=make_bcs(traction=[{"face": "right", "traction": [0.0, 1.5]}]), height=0.5)
    f = external_force(model, CellAssembler(model, material))
    assert f[1::2].sum() == pytest.approx(1.5 * 3 * 0.5)


def test_body_force_resultant_is_material_area(material):
    radius = 0.3
    bcs = make_bcs(body_force=[1.0, 0.0])
    model = make_lattice(1, 1, generator="uc3_hole", p=2, n_e=2, bcs=bcs, radius=radius)
    f = external_force(model, CellAssembler(model, material))
    assert f[0::2].sum() == pytest.approx(1.0 - np.pi * radius**2, rel=1e-4)
    assert f[1::2].sum() == pytest.approx(0.0, abs=1e-14)


def test_face_post_processing(cantilever_2x2, cantilever_assembler):
    left = face_dofs(cantilever_2x2, FaceTag.LEFT)
    assert np.all(cantilever_2x2.dirichlet_mask[2 * left])
    u = np.tile([0.25, -0.5], cantilever_2x2.n_functions)
    np.testing.assert_allclose(mean_face_displacement(cantilever_2x2, u, FaceTag.RIGHT), [0.25, -0.5])
    r_full = np.ones(cantilever_2x2.n_dofs)
    np.testing.assert_allclose(reaction_force(cantilever_2x2, r_full, FaceTag.LEFT), [left.size, left.size])
    np.testing.assert_allclose(reaction_force(cantilever_2x2, r_full, FaceTag.RIGHT), [0.0, 0.0])


@pytest.mark.slow
def test_global_tangent_matches_directional_derivatives(material):
    """Quadratic 2 x 2 lattice, three deformed states, ten directions each"""
    model = make_lattice(2, 2, p=2, n_e=4, bcs=make_bcs(traction=[{"face": "right", "traction": [0.0, -1.0]}]))
    assembler = CellAssembler(model, material)
    f_ext = np.zeros(model.n_dofs)
    free = ~model.dirichlet_mask
    rng = np.random.default_rng(5)
    t = 1e-4
    for _ in range(3):
        u = 1e-3 * rng.standard_normal(model.n_dofs) * free
        K = assembler.global_tangent(u)
        for _ in range(10):
            v = 1e-3 * rng.standard_normal(model.n_dofs) * free
            r_plus, _ = assembler.global_residual(u + t * v, f_ext)
            r_minus, _ = assembler.global_residual(u - t * v, f_ext)
            fd = (r_plus - r_minus) / (2 * t)
            Kv = K @ v
            assert np.linalg.norm(Kv - fd) <= 1e-4 * np.linalg.norm(Kv)


def test_local_external_forces_assemble_to_global(cantilever_2x2, cantilever_assembler):
    f = external_force(cantilever_2x2, cantilever_assembler)
    assembled = np.zeros_like(f)
    for s in range(cantilever_2x2.n_cells):
        f_s = local_external_force(cantilever_2x2, cantilever_assembler, s)
        assert f_s.shape == (cantilever_2x2.n_local_dofs,)
        np.add.at(assembled, cantilever_2x2.dof_map[s], f_s)
    np.testing.assert_allclose(assembled, f)
    # only the right column carries the traction
    assert not local_external_force(cantilever_2x2, cantilever_assembler, 0).any()


def test_no_loads_no_force(material):
    model = make_lattice(2, 1)
    np.testing.assert_array_equal(external_force(model, CellAssembler(model, material)), 0.0)
