"""
Lattice model: reference-cell gluing, cell tiling, global numbering and boundary data.

DOFs are ordered basis-major, component-minor: scalar function ``a`` carries the
DOFs ``d*a + c`` for components c = 0..d-1, both cell-locally and globally.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from config import BoundaryConfig, FaceTag
from geometry.macro import extract_patch
from geometry.splines import BezierMacroElement, SplinePatch, eval_composed
from utils.error_handler import AmbiguousGeometryError, ConfigError, GeometryError

logger = logging.getLogger(__name__)

GLUE_TOL = 1e-10
AMBIGUOUS_TOL = 1e-4

# (axis, side) of the macro parametric cube -> boundary tag
FACE_TAGS: Dict[Tuple[int, int], FaceTag] = {
    (0, 0): FaceTag.LEFT,
    (0, 1): FaceTag.RIGHT,
    (1, 0): FaceTag.BOTTOM,
    (1, 1): FaceTag.TOP,
}
CELL_FACES: Tuple[Tuple[int, int], ...] = ((0, 0), (0, 1), (1, 0), (1, 1))


def _first_occurrence_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber component labels in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.int64)
    remap[labels[first[order]]] = np.arange(order.size)
    return remap[labels]


def _union(n: int, pairs: np.ndarray) -> np.ndarray:
    if pairs.size == 0:
        return np.arange(n)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return _first_occurrence_labels(labels)


@dataclass(frozen=True, eq=False)
class ReferenceUnitCell:
    """Fully matching patches of the reference cell glued into one C0 basis."""

    patches: Tuple[SplinePatch, ...]
    glue_map: Tuple[np.ndarray, ...]
    n_ref: int
    ref_points: np.ndarray

    @property
    def dim(self) -> int:
        return self.patches[0].dim

    @property
    def degree(self) -> int:
        return self.patches[0].degrees[0]

    @cached_property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.ref_points.max(axis=0) - self.ref_points.min(axis=0)))

    def face_functions(self, axis: int, side: int) -> np.ndarray:
        """Cell-local functions on the face ``y[axis] = side``, sorted along the face."""
        return self._faces[(axis, side)]

    @cached_property
    def _faces(self) -> Dict[Tuple[int, int], np.ndarray]:
        tol = GLUE_TOL * max(self.diameter, 1.0)
        faces = {}
        for axis in range(self.dim):
            for side in (0, 1):
                members = np.flatnonzero(np.abs(self.ref_points[:, axis] - side) <= tol)
                others = [k for k in range(self.dim) if k != axis]
                order = np.lexsort(tuple(self.ref_points[members, k] for k in others[::-1]))
                faces[(axis, side)] = members[order]
        return faces

    @cached_property
    def boundary_functions(self) -> np.ndarray:
        return np.unique(np.concatenate([self.face_functions(a, s) for a in range(self.dim) for s in (0, 1)]))

    def to_json(self) -> dict:
        return {"patches": [patch.to_json() for patch in self.patches]}


def glue_reference_cell(patches: Sequence[SplinePatch]) -> ReferenceUnitCell:
    """
    Identify basis functions of different patches whose control points coincide.

    Raises:
        GeometryError: patches of different degree
        AmbiguousGeometryError: control points nearly but not exactly coincident
    """
    patches = tuple(patches)
    if not patches:
        raise GeometryError("A unit cell needs at least one patch")
    degrees = {patch.degrees for patch in patches}
    if len(degrees) != 1 or len(set(next(iter(degrees)))) != 1:
        raise GeometryError(f"All patches must share one degree, got {sorted(degrees)}")

    points = np.vstack([patch.control_points for patch in patches])
    owner = np.concatenate([np.full(patch.n_basis, k) for k, patch in enumerate(patches)])
    diam = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))

    tree = cKDTree(points)
    candidates = tree.query_pairs(r=AMBIGUOUS_TOL * diam, output_type="ndarray")
    glued = []
    for i, j in candidates:
        if owner[i] == owner[j]:
            continue
        gap = float(np.linalg.norm(points[i] - points[j]))
        if gap <= GLUE_TOL * diam:
            glued.append((i, j))
        else:
            raise AmbiguousGeometryError(
                f"Control points of patches {owner[i]} and {owner[j]} are {gap:.3e} apart",
                {"points": [points[i].tolist(), points[j].tolist()], "gap": gap},
            )
    labels = _union(points.shape[0], np.asarray(glued, dtype=np.int64).reshape(-1, 2))
    n_ref = int(labels.max()) + 1

    offsets = np.cumsum([0] + [patch.n_basis for patch in patches])
    glue_map = tuple(labels[offsets[k]: offsets[k + 1]] for k in range(len(patches)))
    ref_points = np.zeros((n_ref, points.shape[1]))
    ref_points[labels] = points
    logger.debug(f"Glued {len(patches)} patches into {n_ref} functions ({len(glued)} coincidences)")
    return ReferenceUnitCell(patches, glue_map, n_ref, ref_points)


@dataclass(frozen=True)
class Interface:
    """Cells ``lower`` < ``upper`` sharing the face ``face`` of ``lower`` (``upper`` touches the opposite side)."""

    lower: int
    upper: int
    axis: int
    lower_side: int


@dataclass(eq=False)
class LatticeModel:
    """Composed multi-cell geometry with global numbering and boundary data."""

    ref_cell: ReferenceUnitCell
    macro_elements: Tuple[BezierMacroElement, ...]
    cell_to_global: np.ndarray
    n_functions: int
    interfaces: Tuple[Interface, ...]
    boundary_faces: Dict[FaceTag, List[Tuple[int, int, int]]]
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray
    bcs: BoundaryConfig
    grid_shape: Optional[Tuple[int, int]] = None
    neighbor_faces: Dict[Tuple[int, int], int] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.ref_cell.dim

    @property
    def n_cells(self) -> int:
        return len(self.macro_elements)

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_functions

    @property
    def n_local_dofs(self) -> int:
        return self.dim * self.ref_cell.n_ref

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Assembly maps A^s as an (N_s, d*n_ref) array of global DOF indices."""
        d = self.dim
        return (d * self.cell_to_global[:, :, None] + np.arange(d)).reshape(self.n_cells, -1)

    def local_dirichlet_mask(self, cell: int) -> np.ndarray:
        return self.dirichlet_mask[self.dof_map[cell]]

    @cached_property
    def shared_face_types(self) -> Tuple[Tuple[int, int], ...]:
        """Reference faces shared by at least one pair of cells."""
        kinds = set()
        for iface in self.interfaces:
            kinds.add((iface.axis, iface.lower_side))
            kinds.add((iface.axis, 1 - iface.lower_side))
        return tuple(sorted(kinds))

    def multiplicity(self) -> np.ndarray:
        """Number of cells touching each global scalar function."""
        return np.bincount(self.cell_to_global.ravel(), minlength=self.n_functions)

    def physical_points(self, cell: int, theta_by_patch: Sequence[Tuple[int, np.ndarray]]) -> np.ndarray:
        """Physical images of (patch, theta) pairs in ``cell``."""
        macro = self.macro_elements[cell]
        return np.array([eval_composed(macro, self.ref_cell.patches[k], theta).x for k, theta in theta_by_patch])


def _face_records(macros: Sequence[BezierMacroElement]):
    records = []
    for cell, macro in enumerate(macros):
        for axis, side in CELL_FACES[: 2 * macro.dim]:
            records.append((cell, axis, side, macro.face_points(axis, side)))
    return records


def _match_macro_faces(macros: Sequence[BezierMacroElement]) -> Tuple[List[Interface], Dict[Tuple[int, int, int], bool]]:
    """Find conforming neighbour faces; raise on touching but non-conforming faces."""
    records = _face_records(macros)
    all_points = np.vstack([r[3] for r in records])
    diam = float(np.linalg.norm(all_points.max(axis=0) - all_points.min(axis=0)))
    tol = GLUE_TOL * max(diam, 1.0)
    mids = np.array([0.5 * (r[3][0] + r[3][-1]) for r in records])
    tree = cKDTree(mids)
    interfaces = []
    matched: Dict[Tuple[int, int, int], bool] = {}
    for i, j in sorted(tree.query_pairs(r=tol, output_type="set")):
        ci, ai, si, pi = records[i]
        cj, aj, sj, pj = records[j]
        if ci == cj:
            continue
        same = np.allclose(pi[[0, -1]], pj[[0, -1]], atol=tol, rtol=0.0)
        flipped = np.allclose(pi[[0, -1]], pj[[-1, 0]], atol=tol, rtol=0.0)
        if not (same or flipped):
            continue
        if pi.shape != pj.shape or not np.allclose(pi, pj if same else pj[::-1], atol=tol, rtol=0.0):
            raise GeometryError(
                f"Cells {ci} and {cj} share face corners but not their Bezier control points",
                {"cells": [ci, cj]},
            )
        if not (same and ai == aj and si != sj):
            raise GeometryError(
                f"Cells {ci} and {cj} meet with inconsistent parametric orientation",
                {"cells": [ci, cj], "faces": [(ai, si), (aj, sj)]},
            )
        if (ci, ai, si) in matched or (cj, aj, sj) in matched:
            raise GeometryError(f"Face of cell {ci} or {cj} matched twice")
        matched[(ci, ai, si)] = True
        matched[(cj, aj, sj)] = True
        lower, upper = (ci, cj) if ci < cj else (cj, ci)
        lower_side = si if lower == ci else sj
        interfaces.append(Interface(lower, upper, ai, lower_side))
    return interfaces, matched


def _global_numbering(ref_cell: ReferenceUnitCell, n_cells: int, interfaces: Sequence[Interface]) -> np.ndarray:
    n_ref = ref_cell.n_ref
    pairs = []
    for iface in interfaces:
        face_lo = ref_cell.face_functions(iface.axis, iface.lower_side)
        face_up = ref_cell.face_functions(iface.axis, 1 - iface.lower_side)
        others = [k for k in range(ref_cell.dim) if k != iface.axis]
        coords_lo = ref_cell.ref_points[face_lo][:, others]
        coords_up = ref_cell.ref_points[face_up][:, others]
        dist, nearest = cKDTree(coords_up).query(coords_lo)
        if face_lo.size != face_up.size or np.any(dist > GLUE_TOL * max(ref_cell.diameter, 1.0)):
            raise GeometryError(
                f"Opposite faces of the reference cell do not match (axis {iface.axis})",
                {"cells": [iface.lower, iface.upper]},
            )
        pairs.append(np.stack([iface.lower * n_ref + face_lo, iface.upper * n_ref + face_up[nearest]], axis=1))
    pairs_arr = np.vstack(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    labels = _union(n_cells * n_ref, pairs_arr)
    return labels.reshape(n_cells, n_ref)


def build_lattice(
    ref_cell: ReferenceUnitCell,
    macro_elements: Sequence[BezierMacroElement],
    bcs: BoundaryConfig,
    grid_shape: Optional[Tuple[int, int]] = None,
) -> LatticeModel:
    """
    Tile the reference cell over the macro elements.

    Raises:
        GeometryError: non-conforming macro tiling
        ConfigError: boundary condition on a face tag that has no boundary face
    """
    macros = tuple(macro_elements)
    if not macros:
        raise GeometryError("No macro elements")
    if any(m.dim != ref_cell.dim for m in macros):
        raise GeometryError("Macro element and unit cell dimensions differ")
    if ref_cell.dim != 2:
        raise GeometryError("Only two-dimensional lattices are supported")

    interfaces, matched = _match_macro_faces(macros)
    cell_to_global = _global_numbering(ref_cell, len(macros), interfaces)
    n_functions = int(cell_to_global.max()) + 1

    boundary_faces: Dict[FaceTag, List[Tuple[int, int, int]]] = {tag: [] for tag in FaceTag}
    for cell in range(len(macros)):
        for axis, side in CELL_FACES:
            if (cell, axis, side) not in matched:
                boundary_faces[FACE_TAGS[(axis, side)]].append((cell, axis, side))

    d = ref_cell.dim
    mask = np.zeros(d * n_functions, dtype=bool)
    values = np.zeros(d * n_functions)
    for spec in bcs.dirichlet:
        faces = boundary_faces[spec.face]
        if not faces:
            raise ConfigError(f"Dirichlet face '{spec.face.value}' has no boundary cells")
        if len(spec.value) < d or any(c >= d for c in spec.components):
            raise ConfigError(f"Dirichlet spec on '{spec.face.value}' does not fit dimension {d}")
        for cell, axis, side in faces:
            functions = cell_to_global[cell, ref_cell.face_functions(axis, side)]
            for c in spec.components:
                mask[d * functions + c] = True
                values[d * functions + c] = spec.value[c]
    for spec in bcs.traction:
        if not boundary_faces[spec.face]:
            raise ConfigError(f"Traction face '{spec.face.value}' is not on the boundary")
        if len(spec.traction) != d:
            raise ConfigError(f"Traction on '{spec.face.value}' must have {d} components")

    neighbor_faces = {}
    for iface in interfaces:
        neighbor_faces[(iface.lower, 2 * iface.axis + iface.lower_side)] = iface.upper
        neighbor_faces[(iface.upper, 2 * iface.axis + 1 - iface.lower_side)] = iface.lower

    model = LatticeModel(
        ref_cell=ref_cell,
        macro_elements=macros,
        cell_to_global=cell_to_global,
        n_functions=n_functions,
        interfaces=tuple(interfaces),
        boundary_faces=boundary_faces,
        dirichlet_mask=mask,
        dirichlet_values=values,
        bcs=bcs,
        grid_shape=grid_shape,
        neighbor_faces=neighbor_faces,
    )
    logger.info(
        f"Lattice: {model.n_cells} cells, n_ref={ref_cell.n_ref}, {model.n_dofs} DOFs, "
        f"{len(interfaces)} interfaces, {int(mask.sum())} constrained DOFs"
    )
    return model


def load_geometry_file(path: Union[str, Path]) -> Tuple[ReferenceUnitCell, List[BezierMacroElement], Optional[Tuple[int, int]]]:
    """
    Read ``{ref_cell: {patches: [...]}, macro: {...}}``.

    ``macro`` is either ``{grid: [nx, ny], degree: q, knots: ..., points: ...}``, a macro
    spline patch Bezier-extracted on the grid, or ``{elements: [{degree, points}, ...]}``.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        patches = [SplinePatch.from_json(p) for p in payload["ref_cell"]["patches"]]
        macro = payload["macro"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise GeometryError(f"Cannot read geometry file {path}: {exc}") from exc

    ref_cell = glue_reference_cell(patches)
    if "elements" in macro:
        elements = [BezierMacroElement(tuple(e["degree"]), np.asarray(e["points"], dtype=float)) for e in macro["elements"]]
        grid = tuple(macro["grid"]) if "grid" in macro else None
        return ref_cell, elements, grid
    nx, ny = (int(v) for v in macro["grid"])
    degree = macro.get("degree", 1)
    knots = macro.get("knots")
    if knots is None:
        knots = [
            [0.0] * (degree + 1) + list(np.linspace(0.0, 1.0, n + 1)[1:-1]) + [1.0] * (degree + 1)
            for n in (nx, ny)
        ]
    patch = SplinePatch.from_json({"degree": [degree, degree], "knots": knots, "points": macro["points"]})
    return ref_cell, extract_patch(patch, nx, ny), (nx, ny)
