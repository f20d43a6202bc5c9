"""
Tests for reference-cell gluing, tiling and boundary data.
"""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from config import FaceTag
from geometry.lattice import build_lattice, glue_reference_cell, load_geometry_file
from geometry.macro import rectangle
from geometry.splines import BezierMacroElement, KnotVector, SplinePatch
from geometry.unit_cells import generate_patches
from test_utils import make_bcs, make_cell, make_lattice
from utils.error_handler import AmbiguousGeometryError, ConfigError, GeometryError


def _square(x0, y0, x1, y1):
    kv = KnotVector.bezier(1)
    return SplinePatch((kv, kv), np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]]))


def test_gluing_identifies_shared_control_points():
    """Two unit squares sharing an edge have 6 distinct functions"""
    cell = glue_reference_cell([_square(0.0, 0.0, 0.5, 1.0), _square(0.5, 0.0, 1.0, 1.0)])
    assert cell.n_ref == 6
    assert set(cell.glue_map[0][[1, 3]]) == set(cell.glue_map[1][[0, 2]])


def test_gluing_rejects_near_coincidence():
    with pytest.raises(AmbiguousGeometryError):
        glue_reference_cell([_square(0.0, 0.0, 0.5, 1.0), _square(0.5 + 1e-6, 0.0, 1.0, 1.0)])


def test_gluing_rejects_mixed_degrees():
    quad = KnotVector.bezier(2)
    other = SplinePatch((quad, quad), np.array([[x, y] for y in (0.0, 0.5, 1.0) for x in (0.5, 0.75, 1.0)]))
    with pytest.raises(GeometryError):
        glue_reference_cell([_square(0.0, 0.0, 0.5, 1.0), other])


@pytest.mark.parametrize("generator,p,params", [("uc1_cross", 1, {}), ("uc1_cross", 2, {}), ("uc3_hole", 2, {"radius": 0.2})])
def test_generated_cells_are_conforming(generator, p, params):
    """Every built-in cell has matching opposite faces"""
    cell = make_cell(generator, p, 2, **params)
    for axis in (0, 1):
        low = cell.ref_points[cell.face_functions(axis, 0)]
        high = cell.ref_points[cell.face_functions(axis, 1)]
        assert low.shape == high.shape
        np.testing.assert_allclose(low[:, 1 - axis], high[:, 1 - axis], atol=1e-12)


def test_unknown_generator():
    with pytest.raises(GeometryError):
        generate_patches("honeycomb", 2, 2)


def test_cross_cell_rejects_overlapping_struts():
    with pytest.raises(GeometryError):
        generate_patches("uc1_cross", 1, 1, frame=0.3, strut=0.2)


def test_lattice_counts(uc1_cell):
    """Shared faces are numbered once"""
    model = make_lattice(3, 2)
    n_face = uc1_cell.face_functions(0, 0).size
    n_face_y = uc1_cell.face_functions(1, 0).size
    expected = 6 * uc1_cell.n_ref - 4 * n_face - 3 * n_face_y
    corners_shared = 2  # interior grid vertices of a 3 x 2 grid each counted twice above
    assert model.n_functions == expected + corners_shared
    assert model.n_cells == 6
    assert len(model.interfaces) == 7
    assert model.n_dofs == 2 * model.n_functions
    assert model.dof_map.shape == (6, 2 * uc1_cell.n_ref)


def test_lattice_interfaces_and_neighbors():
    model = make_lattice(2, 2)
    pairs = {(i.lower, i.upper, i.axis, i.lower_side) for i in model.interfaces}
    assert pairs == {(0, 1, 0, 1), (2, 3, 0, 1), (0, 2, 1, 1), (1, 3, 1, 1)}
    assert model.neighbor_faces[(0, 1)] == 1
    assert model.neighbor_faces[(1, 0)] == 0
    assert model.shared_face_types == ((0, 0), (0, 1), (1, 0), (1, 1))


def test_multiplicity_of_center_vertex(uc1_cell):
    model = make_lattice(2, 2)
    mult = model.multiplicity()
    assert mult.max() == 4
    assert int(np.sum(mult == 4)) == 1
    assert int(mult.sum()) == 4 * uc1_cell.n_ref


def test_dirichlet_mask_and_values():
    bcs = make_bcs(dirichlet=[
        {"face": "bottom", "components": [0, 1], "value": [0.0, 0.0]},
        {"face": "top", "components": [1], "value": [0.0, -0.2]},
    ])
    model = make_lattice(2, 1, bcs=bcs)
    top = model.boundary_faces[FaceTag.TOP]
    assert len(top) == 2
    cell, axis, side = top[0]
    functions = model.cell_to_global[cell, model.ref_cell.face_functions(axis, side)]
    assert np.all(model.dirichlet_mask[2 * functions + 1])
    assert not np.any(model.dirichlet_mask[2 * functions])
    np.testing.assert_allclose(model.dirichlet_values[2 * functions + 1], -0.2)


def test_traction_needs_two_components():
    with pytest.raises(ValidationError):
        make_bcs(traction=[{"face": "right", "traction": [1.0]}])


def test_traction_wrong_dimension_rejected(uc1_cell):
    bcs = make_bcs(traction=[{"face": "right", "traction": [1.0, 0.0, 0.0]}])
    with pytest.raises(ConfigError):
        build_lattice(uc1_cell, rectangle(1, 1), bcs)


def test_inconsistent_orientation_rejected(uc1_cell):
    """The shared face is the right face of cell 0 but the bottom face of cell 1"""
    turned = BezierMacroElement((1, 1), np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 0.0], [2.0, 1.0]]))
    with pytest.raises(GeometryError):
        build_lattice(uc1_cell, [rectangle(1, 1)[0], turned], make_bcs(), None)


def test_load_geometry_file_with_elements(tmp_path, uc1_cell):
    payload = {
        "ref_cell": uc1_cell.to_json(),
        "macro": {
            "grid": [2, 1],
            "elements": [{"degree": [1, 1], "points": e.control_points.tolist()} for e in rectangle(2, 1)],
        },
    }
    path = tmp_path / "geometry.json"
    path.write_text(json.dumps(payload))
    ref, elements, grid = load_geometry_file(path)
    assert ref.n_ref == uc1_cell.n_ref
    assert len(elements) == 2
    assert grid == (2, 1)


def test_load_geometry_file_with_macro_patch(tmp_path, uc1_cell):
    points = [[x, y] for y in (0.0, 1.0) for x in (0.0, 1.0, 2.0, 3.0)]
    payload = {"ref_cell": uc1_cell.to_json(), "macro": {"grid": [3, 1], "degree": 1, "points": points}}
    path = tmp_path / "geometry.json"
    path.write_text(json.dumps(payload))
    _, elements, grid = load_geometry_file(path)
    assert grid == (3, 1)
    np.testing.assert_allclose(elements[1].control_points[0], [1.0, 0.0], atol=1e-12)


def test_load_geometry_file_missing_field(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text(json.dumps({"macro": {}}))
    with pytest.raises(GeometryError):
        load_geometry_file(path)
