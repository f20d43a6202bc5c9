"""External forces in the initial configuration and face post-processing."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import FaceTag
from geometry.lattice import GLUE_TOL, LatticeModel, ReferenceUnitCell
from mechanics.assembly import CellAssembler
from mechanics.quadrature import gauss_legendre
from utils.error_handler import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FaceKernel:
    """Line quadrature along the patch sides that make up one reference-cell face."""

    local: np.ndarray
    R: np.ndarray
    micro_x: np.ndarray
    micro_t: np.ndarray
    weights: np.ndarray


def face_kernel(ref_cell: ReferenceUnitCell, axis: int, side: int) -> FaceKernel:
    tol = GLUE_TOL * max(ref_cell.diameter, 1.0)
    local, values, xs, ts, ws = [], [], [], [], []
    for k, patch in enumerate(ref_cell.patches):
        grid = patch.control_points.reshape(patch.shape[::-1] + (-1,))
        for p_axis in range(patch.dim):
            for p_side in (0, 1):
                sl = [slice(None)] * patch.dim
                sl[patch.dim - 1 - p_axis] = 0 if p_side == 0 else -1
                side_points = grid[tuple(sl)].reshape(-1, patch.space_dim)
                if not np.all(np.abs(side_points[:, axis] - side) <= tol):
                    continue
                along = 1 - p_axis
                breaks = patch.knot_vectors[along].breakpoints
                for a, b in zip(breaks[:-1], breaks[1:]):
                    xg, wg = gauss_legendre(patch.degrees[along] + 1, a, b)
                    for t, w in zip(xg, wg):
                        theta = np.empty(patch.dim)
                        theta[p_axis] = float(p_side)
                        theta[along] = t
                        idx, R, dR = patch.basis(theta)
                        points = patch.control_points[idx]
                        local.append(ref_cell.glue_map[k][idx])
                        values.append(R)
                        xs.append(R @ points)
                        ts.append(points.T @ dR[:, along])
                        ws.append(w)
    if not local:
        raise ConfigError(f"Reference cell has no material on face {(axis, side)}")
    return FaceKernel(
        local=np.asarray(local),
        R=np.asarray(values),
        micro_x=np.asarray(xs),
        micro_t=np.asarray(ts),
        weights=np.asarray(ws),
    )


def _add_local(model: LatticeModel, local: np.ndarray, contrib: np.ndarray, out: np.ndarray) -> None:
    d = model.dim
    dofs = d * local[..., None] + np.arange(d)
    np.add.at(out, dofs.ravel(), contrib.ravel())


def local_external_force(
    model: LatticeModel,
    assembler: CellAssembler,
    cell: int,
    kernels: Optional[Dict[Tuple[int, int], FaceKernel]] = None,
) -> np.ndarray:
    """
    External force of one cell at full load, in local DOF order.

    Tractions act on the macro-boundary faces of the cell, the body force on its
    volume, both in the initial configuration.
    """
    d = model.dim
    f = np.zeros(model.n_local_dofs)
    kernels = {} if kernels is None else kernels
    for spec in model.bcs.traction:
        g = np.asarray(spec.traction, dtype=float)
        faces = model.boundary_faces.get(spec.face, [])
        if not faces:
            raise ConfigError(f"Traction face '{spec.face.value}' is not on the boundary")
        for owner, axis, side in faces:
            if owner != cell:
                continue
            kernel = kernels.get((axis, side))
            if kernel is None:
                kernel = kernels[(axis, side)] = face_kernel(model.ref_cell, axis, side)
            _, J_B = model.macro_elements[cell].evaluate(np.clip(kernel.micro_x, 0.0, 1.0))
            ds = np.linalg.norm(np.einsum("qij,qj->qi", J_B, kernel.micro_t), axis=1) * kernel.weights
            _add_local(model, kernel.local, (kernel.R * ds[:, None])[..., None] * g, f)

    if model.bcs.body_force is not None:
        f0 = np.asarray(model.bcs.body_force, dtype=float)
        if f0.size != d:
            raise ConfigError(f"Body force must have {d} components")
        full = assembler.full
        J = assembler.cell_geometry(cell, full)
        dV = np.abs(np.linalg.det(J)) * full.rule.weights.reshape(full.n_elements, -1)
        _add_local(model, full.local, np.einsum("eqa,eq->ea", full.N, dV)[..., None] * f0, f)
    return f


def external_force(model: LatticeModel, assembler: CellAssembler) -> np.ndarray:
    """
    Global external force at full load (tractions and body force on the initial configuration).

    Constant over Newton iterations; the driver scales it by the load factor.
    """
    f = np.zeros(model.n_dofs)
    kernels: Dict[Tuple[int, int], FaceKernel] = {}
    dof_map = model.dof_map
    for cell in range(model.n_cells):
        np.add.at(f, dof_map[cell], local_external_force(model, assembler, cell, kernels))
    d = model.dim
    logger.debug(f"External force resultant: {[float(f[c::d].sum()) for c in range(d)]}")
    return f


def face_dofs(model: LatticeModel, tag: FaceTag) -> np.ndarray:
    """Global scalar functions on the macro-boundary face ``tag``."""
    functions: List[np.ndarray] = []
    for cell, axis, side in model.boundary_faces.get(tag, []):
        functions.append(model.cell_to_global[cell, model.ref_cell.face_functions(axis, side)])
    if not functions:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(functions))


def reaction_force(model: LatticeModel, r_full: np.ndarray, tag: FaceTag) -> np.ndarray:
    """Sum of the unmasked residual over the constrained DOFs of a face, per component."""
    d = model.dim
    functions = face_dofs(model, tag)
    out = np.zeros(d)
    for c in range(d):
        dofs = d * functions + c
        dofs = dofs[model.dirichlet_mask[dofs]]
        out[c] = r_full[dofs].sum()
    return out


def mean_face_displacement(model: LatticeModel, u: np.ndarray, tag: FaceTag) -> np.ndarray:
    d = model.dim
    functions = face_dofs(model, tag)
    if functions.size == 0:
        return np.zeros(d)
    return np.array([u[d * functions + c].mean() for c in range(d)])
