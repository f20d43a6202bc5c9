"""
Primal / dual / interior splitting of the cell-local DOFs, the signed jump operator B
and the edge-average matrix Q.

Every cell uses the same index sets. Remaining DOFs are ordered interior first,
then dual, so the dual block of any remaining-space operator is its trailing block.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Tuple

import numpy as np
from scipy import sparse

from geometry.lattice import CELL_FACES, LatticeModel
from utils.error_handler import EnrichmentExhaustedError, GeometryError

logger = logging.getLogger(__name__)

PRIMAL_PLACEMENT_RULE = "corners at the nearest control point, edge DOFs nearest k/(level+1) along each edge"


def _expand(functions: np.ndarray, d: int) -> np.ndarray:
    """Scalar function indices -> component-minor DOF indices."""
    return (d * np.asarray(functions, dtype=np.int64)[:, None] + np.arange(d)).ravel()


@dataclass(frozen=True)
class InterfaceEdge:
    """One column of Q: an interface between two cells, for one component."""

    lower: int
    upper: int
    axis: int
    lower_side: int
    component: int


@dataclass(frozen=True, eq=False)
class DofPartition:
    """Uniform P / Delta / I split of every cell plus the constraint operators."""

    model: LatticeModel
    level: int
    corners: np.ndarray
    edge_primal: Dict[Tuple[int, int], np.ndarray]
    primal: np.ndarray
    dual: np.ndarray
    interior: np.ndarray
    coarse_functions: np.ndarray
    jump: sparse.csr_matrix
    edge_modes: sparse.csr_matrix
    edges: Tuple[InterfaceEdge, ...]
    row_edge: np.ndarray

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def remaining(self) -> np.ndarray:
        return np.concatenate([self.interior, self.dual])

    @cached_property
    def primal_dofs(self) -> np.ndarray:
        return _expand(self.primal, self.dim)

    @cached_property
    def remaining_dofs(self) -> np.ndarray:
        return _expand(self.remaining, self.dim)

    @cached_property
    def dual_dofs(self) -> np.ndarray:
        return _expand(self.dual, self.dim)

    @property
    def n_remaining(self) -> int:
        return self.remaining_dofs.size

    @property
    def n_dual(self) -> int:
        return self.dual_dofs.size

    @property
    def n_primal_local(self) -> int:
        return self.primal_dofs.size

    @property
    def n_coarse(self) -> int:
        return self.dim * self.coarse_functions.size

    @property
    def n_multipliers(self) -> int:
        return self.jump.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_modes.shape[1]

    @cached_property
    def primal_map(self) -> np.ndarray:
        """(N_s, d*n_P) coarse DOF index of each cell-local primal DOF."""
        d = self.dim
        lookup = {int(g): k for k, g in enumerate(self.coarse_functions)}
        coarse = np.vectorize(lookup.__getitem__, otypes=[np.int64])(self.model.cell_to_global[:, self.primal])
        return (d * coarse[:, :, None] + np.arange(d)).reshape(self.model.n_cells, -1)

    def nonredundant_rows(self) -> np.ndarray:
        """Rows of B kept next to the edge averages: the first row of every edge column is dropped."""
        keep = np.ones(self.n_multipliers, dtype=bool)
        seen = set()
        for row, edge in enumerate(self.row_edge):
            if edge not in seen:
                seen.add(edge)
                keep[row] = False
        return np.flatnonzero(keep)

    def gather_remaining(self, u_global: np.ndarray) -> np.ndarray:
        """Remaining coordinates of a global vector, cell-major (length N_s * d*n_R)."""
        dofs = self.model.dof_map[:, self.remaining_dofs]
        return u_global[dofs].ravel()

    def summary(self) -> dict:
        return {
            "level": self.level,
            "primal_per_cell": int(self.primal.size),
            "dual_per_cell": int(self.dual.size),
            "interior_per_cell": int(self.interior.size),
            "coarse_dofs": self.n_coarse,
            "multipliers": self.n_multipliers,
            "edge_constraints": self.n_edges,
            "placement_rule": PRIMAL_PLACEMENT_RULE,
        }


def _corner_functions(model: LatticeModel) -> np.ndarray:
    ref = model.ref_cell
    candidates = ref.boundary_functions
    corners = []
    for cx in (0.0, 1.0):
        for cy in (0.0, 1.0):
            dist = np.linalg.norm(ref.ref_points[candidates] - np.array([cx, cy]), axis=1)
            corners.append(int(candidates[np.argmin(dist)]))
    if len(set(corners)) != 4:
        raise GeometryError("Cell corners do not map to distinct basis functions")
    return np.array(corners)


def _edge_picks(model: LatticeModel, corners: np.ndarray, level: int) -> Dict[Tuple[int, int], np.ndarray]:
    ref = model.ref_cell
    picks = {}
    for axis, side in CELL_FACES:
        face = ref.face_functions(axis, side)
        candidates = [int(a) for a in face if a not in set(corners.tolist())]
        if len(candidates) < level:
            raise EnrichmentExhaustedError(
                f"Face {(axis, side)} has only {len(candidates)} non-corner functions for level {level}",
                {"level": level},
            )
        tangential = 1 - axis
        chosen: List[int] = []
        for k in range(1, level + 1):
            target = k / (level + 1)
            free = [a for a in candidates if a not in chosen]
            coords = ref.ref_points[free, tangential]
            chosen.append(free[int(np.argmin(np.abs(coords - target)))])
        picks[(axis, side)] = np.array(sorted(chosen), dtype=np.int64)
    return picks


def partition_dofs(model: LatticeModel, level: int = 0) -> DofPartition:
    """Split cell-local functions into primal, dual and interior sets and build B and Q."""
    if level < 0:
        raise ValueError(f"Primal level must be >= 0, got {level}")
    ref = model.ref_cell
    d = model.dim
    corners = _corner_functions(model)
    edge_primal = _edge_picks(model, corners, level)
    primal = np.unique(np.concatenate([corners] + list(edge_primal.values())))

    primal_set = set(primal.tolist())
    dual_set = set()
    for axis, side in model.shared_face_types:
        dual_set.update(int(a) for a in ref.face_functions(axis, side) if int(a) not in primal_set)
    dual = np.array(sorted(dual_set), dtype=np.int64)
    interior = np.array(sorted(set(range(ref.n_ref)) - primal_set - dual_set), dtype=np.int64)

    coarse_functions = np.unique(model.cell_to_global[:, primal])

    # local position of each dual function inside the remaining ordering
    n_r = interior.size + dual.size
    dual_pos = {int(a): interior.size + k for k, a in enumerate(dual)}
    dual_owner_count = np.zeros(model.n_functions, dtype=np.int64)
    np.add.at(dual_owner_count, model.cell_to_global[:, dual].ravel(), 1)
    if np.any(dual_owner_count > 2):
        raise GeometryError("A dual function is shared by more than two cells")

    rows, cols, vals = [], [], []
    row_edge: List[int] = []
    edges: List[InterfaceEdge] = []
    row = 0
    for iface in model.interfaces:
        face_lo = [int(a) for a in ref.face_functions(iface.axis, iface.lower_side) if int(a) in dual_pos]
        face_up = {
            int(model.cell_to_global[iface.upper, a]): int(a)
            for a in ref.face_functions(iface.axis, 1 - iface.lower_side)
            if int(a) in dual_pos
        }
        for c in range(d):
            edge_rows = []
            for a in face_lo:
                g = int(model.cell_to_global[iface.lower, a])
                if model.dirichlet_mask[d * g + c]:
                    continue
                b = face_up.get(g)
                if b is None:
                    raise GeometryError(
                        f"Dual function {a} of cell {iface.lower} has no dual partner in cell {iface.upper}"
                    )
                rows += [row, row]
                cols += [
                    iface.lower * d * n_r + d * dual_pos[a] + c,
                    iface.upper * d * n_r + d * dual_pos[b] + c,
                ]
                vals += [1.0, -1.0]
                edge_rows.append(row)
                row += 1
            if edge_rows:
                row_edge += [len(edges)] * len(edge_rows)
                edges.append(InterfaceEdge(iface.lower, iface.upper, iface.axis, iface.lower_side, c))

    n_cols = model.n_cells * d * n_r
    jump = sparse.csr_matrix((vals, (rows, cols)), shape=(row, n_cols))
    row_edge_arr = np.asarray(row_edge, dtype=np.int64)
    edge_modes = sparse.csr_matrix(
        (np.ones(row), (np.arange(row), row_edge_arr)), shape=(row, len(edges))
    )
    partition = DofPartition(
        model=model,
        level=level,
        corners=corners,
        edge_primal=edge_primal,
        primal=primal,
        dual=dual,
        interior=interior,
        coarse_functions=coarse_functions,
        jump=jump,
        edge_modes=edge_modes,
        edges=tuple(edges),
        row_edge=row_edge_arr,
    )
    logger.debug(f"Partition level {level}: {partition.summary()}")
    return partition


def enrich_primal(partition: DofPartition) -> DofPartition:
    """Promote one more DOF per cell edge, uniformly; raises EnrichmentExhaustedError when impossible."""
    enriched = partition_dofs(partition.model, partition.level + 1)
    logger.warning(
        f"Primal enrichment: level {partition.level} -> {enriched.level} "
        f"({partition.primal.size} -> {enriched.primal.size} primal functions per cell)"
    )
    return enriched
