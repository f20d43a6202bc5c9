"""
Cell-local operators of the lattice: internal forces, tangents at full quadrature,
snapshots at reduced quadrature, and their global scatter.

Every local matrix lives on one fixed CSR pattern computed from the basis
overlaps of the reference cell, so tangents and snapshots of all cells share
one coordinate space.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from geometry.lattice import LatticeModel, ReferenceUnitCell
from mechanics.hyperelastic import MaterialParams, cauchy_stress, combined_tensor, pullback_D
from mechanics.quadrature import QuadratureRule, full_rule, reduced_rule
from utils.error_handler import InvertedElementError

logger = logging.getLogger(__name__)

# elements evaluated per vectorised batch
ELEMENT_CHUNK = 256


@dataclass(frozen=True, eq=False)
class CellKernel:
    """Basis data of the reference cell at the points of one rule, grouped by element."""

    rule: QuadratureRule
    local: np.ndarray
    N: np.ndarray
    dN: np.ndarray
    micro_x: np.ndarray
    micro_J: np.ndarray

    @property
    def n_elements(self) -> int:
        return self.local.shape[0]

    @classmethod
    def build(cls, ref_cell: ReferenceUnitCell, rule: QuadratureRule) -> "CellKernel":
        npe = rule.points_per_element
        locals_, values, grads, xs, jacs = [], [], [], [], []
        for q in range(rule.n_points):
            patch_id = int(rule.patch[q])
            patch = ref_cell.patches[patch_id]
            idx, R, dR = patch.basis(rule.points[q])
            points = patch.control_points[idx]
            locals_.append(ref_cell.glue_map[patch_id][idx])
            values.append(R)
            grads.append(dR)
            xs.append(R @ points)
            jacs.append(points.T @ dR)
        n_el = rule.n_points // npe
        local = np.asarray(locals_).reshape(n_el, npe, -1)
        if np.any(local != local[:, :1, :]):
            raise ValueError("Quadrature points of one element see different basis functions")
        return cls(
            rule=rule,
            local=local[:, 0, :],
            N=np.asarray(values).reshape(n_el, npe, -1),
            dN=np.asarray(grads).reshape(n_el, npe, local.shape[-1], -1),
            micro_x=np.asarray(xs).reshape(n_el, npe, -1),
            micro_J=np.asarray(jacs).reshape(n_el, npe, ref_cell.dim, ref_cell.dim),
        )


@dataclass(frozen=True, eq=False)
class ReferencePattern:
    """CSR pattern of the (d*n_ref)^2 local matrices and the element scatter positions."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    pos: np.ndarray

    @property
    def nnz(self) -> int:
        return self.indices.size

    @cached_property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    @cached_property
    def diag_pos(self) -> np.ndarray:
        keys = self.rows * self.n + self.indices
        return np.searchsorted(keys, np.arange(self.n) * (self.n + 1))

    @classmethod
    def build(cls, kernel: CellKernel, dim: int, n_ref: int) -> "ReferencePattern":
        n = dim * n_ref
        dofs = (dim * kernel.local[:, :, None] + np.arange(dim)).reshape(kernel.n_elements, -1)
        keys = (dofs[:, :, None] * n + dofs[:, None, :]).reshape(kernel.n_elements, -1)
        unique = np.unique(keys)
        rows = unique // n
        indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))])
        return cls(n=n, indptr=indptr, indices=unique % n, pos=np.searchsorted(unique, keys))

    def to_csr(self, data: np.ndarray) -> sparse.csr_matrix:
        return sparse.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class LocalTangent:
    """Masked local tangent K^s on the reference pattern."""

    cell: int
    data: np.ndarray
    pattern: ReferencePattern
    tag: Tuple[int, int] = (0, 0)

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        return self.pattern.to_csr(self.data)


@dataclass(frozen=True, eq=False)
class SnapshotVector:
    """Reduced-quadrature tangent entries of one cell in reference-pattern order."""

    cell: int
    values: np.ndarray


class CellAssembler:
    """
    Evaluates cell-local quantities of a lattice for one material.

    Args:
        model: Lattice model
        params: Material parameters
        reduced_points: Gauss points per direction of the snapshot rule
    """

    def __init__(self, model: LatticeModel, params: MaterialParams, reduced_points: int = 2):
        self.model = model
        self.params = params
        ref = model.ref_cell
        self.full = CellKernel.build(ref, full_rule(ref))
        self.reduced = CellKernel.build(ref, reduced_rule(ref, reduced_points))
        self.pattern = ReferencePattern.build(self.full, model.dim, ref.n_ref)
        self._reduced_pos = self._pattern_positions(self.reduced)
        logger.debug(
            f"Reference pattern: {self.pattern.n} local DOFs, {self.pattern.nnz} nonzeros, "
            f"{self.full.rule.n_points} full / {self.reduced.rule.n_points} reduced points"
        )

    def _pattern_positions(self, kernel: CellKernel) -> np.ndarray:
        n, d = self.pattern.n, self.model.dim
        dofs = (d * kernel.local[:, :, None] + np.arange(d)).reshape(kernel.n_elements, -1)
        keys = (dofs[:, :, None] * n + dofs[:, None, :]).reshape(kernel.n_elements, -1)
        all_keys = self.pattern.rows * n + self.pattern.indices
        return np.searchsorted(all_keys, keys)

    def _positions(self, kernel: CellKernel) -> np.ndarray:
        return self.pattern.pos if kernel is self.full else self._reduced_pos

    def cell_geometry(self, cell: int, kernel: CellKernel) -> np.ndarray:
        """Jacobians dX/dxi of the composed reference map at the kernel points."""
        macro = self.model.macro_elements[cell]
        flat_x = kernel.micro_x.reshape(-1, self.model.dim)
        _, J_B = macro.evaluate(np.clip(flat_x, 0.0, 1.0))
        return J_B.reshape(kernel.micro_J.shape) @ kernel.micro_J

    def _evaluate(
        self,
        cell: int,
        u_s: np.ndarray,
        kernel: CellKernel,
        want_force: bool,
        want_tangent: bool,
    ) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        d = self.model.dim
        m = kernel.local.shape[1]
        U = np.asarray(u_s, dtype=float).reshape(-1, d)
        J_geom = self.cell_geometry(cell, kernel)
        weights = kernel.rule.weights.reshape(kernel.n_elements, -1)
        force = np.zeros(self.pattern.n) if want_force else None
        data = np.zeros(self.pattern.nnz) if want_tangent else None
        positions = self._positions(kernel)

        for start in range(0, kernel.n_elements, ELEMENT_CHUNK):
            sl = slice(start, start + ELEMENT_CHUNK)
            dN = kernel.dN[sl]
            Jg = J_geom[sl]
            Ue = U[kernel.local[sl]]
            grad_X = np.einsum("eqak,eqkK->eqaK", dN, np.linalg.inv(Jg))
            F = np.eye(d) + np.einsum("eai,eqaK->eqiK", Ue, grad_X)
            try:
                J_psi = F @ Jg
                if want_force:
                    sigma = cauchy_stress(F, self.params)
                    J_inv = np.linalg.inv(J_psi)
                    det = np.abs(np.linalg.det(J_psi))
                    P_hat = np.einsum("eqim,eqkm->eqik", sigma, J_inv) * (weights[sl] * det)[..., None, None]
                    f_el = np.einsum("eqik,eqak->eai", P_hat, dN)
                    np.add.at(force, (d * kernel.local[sl][:, :, None] + np.arange(d)).ravel(), f_el.ravel())
                if want_tangent:
                    D_ref = pullback_D(combined_tensor(F, self.params), J_psi)
                    D_ref = D_ref * weights[sl][..., None, None, None, None]
                    T = np.einsum("eqijkl,eqak->eqaijl", D_ref, dN)
                    K_el = np.einsum("eqaijl,eqbl->eaibj", T, dN)
                    data += np.bincount(
                        positions[sl].ravel(), weights=K_el.reshape(K_el.shape[0], -1).ravel(), minlength=self.pattern.nnz
                    )
            except InvertedElementError as exc:
                raise exc.with_cell(cell) from exc
        return force, data

    def _mask_data(self, cell: int, data: np.ndarray) -> np.ndarray:
        mask = self.model.local_dirichlet_mask(cell)
        if not mask.any():
            return data
        data = data.copy()
        hit = mask[self.pattern.rows] | mask[self.pattern.indices]
        data[hit] = 0.0
        data[self.pattern.diag_pos[mask]] = 1.0
        return data

    def local_internal_force(self, cell: int, u_s: np.ndarray) -> np.ndarray:
        """f_int^s at full quadrature (unmasked)."""
        force, _ = self._evaluate(cell, u_s, self.full, True, False)
        return force

    def local_tangent(self, cell: int, u_s: np.ndarray, masked: bool = True, tag: Tuple[int, int] = (0, 0)) -> LocalTangent:
        """K^s at full quadrature; Dirichlet rows and columns eliminated with a unit diagonal."""
        _, data = self._evaluate(cell, u_s, self.full, False, True)
        if masked:
            data = self._mask_data(cell, data)
        return LocalTangent(cell, data, self.pattern, tag)

    def snapshot(self, cell: int, u_s: np.ndarray) -> SnapshotVector:
        """Reduced-quadrature matrix entries in reference-pattern order, Dirichlet-masked."""
        _, data = self._evaluate(cell, u_s, self.reduced, False, True)
        return SnapshotVector(cell, self._mask_data(cell, data))

    def cell_vector(self, u: np.ndarray, cell: int) -> np.ndarray:
        return u[self.model.dof_map[cell]]

    def internal_force(self, u: np.ndarray) -> np.ndarray:
        f = np.zeros(self.model.n_dofs)
        for cell in range(self.model.n_cells):
            dofs = self.model.dof_map[cell]
            np.add.at(f, dofs, self.local_internal_force(cell, u[dofs]))
        return f

    def global_residual(self, u: np.ndarray, f_ext: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        r(u) = f_int(u) - f_ext at full quadrature.

        Returns:
            The residual with Dirichlet rows zeroed and the unmasked residual.
        """
        r_full = self.internal_force(u) - f_ext
        r = r_full.copy()
        r[self.model.dirichlet_mask] = 0.0
        return r, r_full

    def global_tangent(self, u: np.ndarray, local: Optional[Sequence[LocalTangent]] = None) -> sparse.csr_matrix:
        """Assembled tangent with Dirichlet elimination (unit diagonal on constrained DOFs)."""
        model = self.model
        if local is None:
            data = [self.local_tangent(s, u[model.dof_map[s]], masked=False).data for s in range(model.n_cells)]
        else:
            data = [t.data for t in local]
        rows = model.dof_map[:, self.pattern.rows].ravel()
        cols = model.dof_map[:, self.pattern.indices].ravel()
        K = sparse.csr_matrix((np.concatenate(data), (rows, cols)), shape=(model.n_dofs, model.n_dofs))
        free = sparse.diags((~model.dirichlet_mask).astype(float))
        return (free @ K @ free + sparse.diags(model.dirichlet_mask.astype(float))).tocsr()

    def tangents(self, u: np.ndarray, cells: Sequence[int], tag: Tuple[int, int] = (0, 0)) -> List[LocalTangent]:
        return [self.local_tangent(s, u[self.model.dof_map[s]], tag=tag) for s in cells]

    def snapshots(self, u: np.ndarray) -> np.ndarray:
        """Snapshot matrix T with one column per cell."""
        columns = [self.snapshot(s, u[self.model.dof_map[s]]).values for s in range(self.model.n_cells)]
        return np.stack(columns, axis=1)
