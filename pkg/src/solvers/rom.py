"""
Principal-cell selection and reduced-basis reconstruction of local tangents.

Cell tangents are compared through their reduced-quadrature snapshots. A greedy
pass picks the cells whose snapshots span all others to a tolerance; every other
cell's tangent is then a linear combination of the principal cells' full tangents.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve, solve_triangular

from mechanics.assembly import CellAssembler, LocalTangent
from utils.error_handler import DegenerateBasisError

logger = logging.getLogger(__name__)

GRAM_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class GreedyResult:
    principal: Tuple[int, ...]
    Z: np.ndarray
    beta: np.ndarray
    norms: np.ndarray
    history: Tuple[float, ...]

    @property
    def n_principal(self) -> int:
        return len(self.principal)

    def reconstruction(self) -> np.ndarray:
        """Certified reconstructions ||t^s|| Z beta^s, one column per cell."""
        return (self.Z @ self.beta) * self.norms


def greedy_select(T: np.ndarray, epsilon: float) -> GreedyResult:
    """
    Greedy selection of principal snapshots.

    Columns are normalised; the column with the largest residual (max-norm) joins
    the basis after orthogonalisation, and all residuals are updated, until every
    residual is at most ``epsilon``. Ties go to the lowest column index.
    Zero columns are exactly representable and never selected.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[1] < 1:
        raise ValueError("Snapshot matrix needs at least one column")
    n, n_s = T.shape
    norms = np.linalg.norm(T, axis=0)
    nonzero = norms > 0.0
    delta = np.zeros_like(T)
    delta[:, nonzero] = T[:, nonzero] / norms[nonzero]

    basis: List[np.ndarray] = []
    coefficients: List[np.ndarray] = []
    principal: List[int] = []
    residual = np.abs(delta).max(axis=0)
    history = [float(residual.max())]

    while residual.max() > epsilon and len(principal) < min(n, n_s):
        s = int(np.argmax(residual))
        if s in principal:
            logger.warning(f"Greedy selection stalled at residual {residual.max():.3e} (cell {s} already selected)")
            break
        zeta = delta[:, s].copy()
        if basis:
            Zb = np.stack(basis, axis=1)
            zeta -= Zb @ (Zb.T @ zeta)
        zeta /= np.linalg.norm(zeta)
        b = zeta @ delta
        delta -= np.outer(zeta, b)
        basis.append(zeta)
        coefficients.append(b)
        principal.append(s)
        residual = np.abs(delta).max(axis=0)
        history.append(float(residual.max()))
        logger.debug(f"Greedy step {len(principal)}: cell {s}, max residual {history[-1]:.3e}")

    Z = np.stack(basis, axis=1) if basis else np.zeros((n, 0))
    beta = np.stack(coefficients, axis=0) if coefficients else np.zeros((0, n_s))
    return GreedyResult(tuple(principal), Z, beta, norms, tuple(history))


def project_coefficients(selected: np.ndarray, t_new: np.ndarray) -> np.ndarray:
    """
    Least-squares coefficients of ``t_new`` (one or several columns) on the raw
    principal snapshots, through the normal equations.

    Raises:
        DegenerateBasisError: Gram matrix condition number above GRAM_COND_LIMIT
    """
    selected = np.asarray(selected, dtype=float)
    if selected.ndim != 2 or selected.shape[1] == 0:
        raise DegenerateBasisError("Empty reduced basis")
    gram = selected.T @ selected
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
        raise DegenerateBasisError(
            f"Gram matrix of the principal snapshots is ill-conditioned (cond={cond:.2e})",
            {"condition": float(cond) if np.isfinite(cond) else None},
        )
    return lu_solve(lu_factor(gram), selected.T @ np.asarray(t_new, dtype=float))


@dataclass(frozen=True, eq=False)
class ApproxTangent:
    """K~ = sum_r alpha_r K^(s_r), kept as coefficients plus handles to the principal tangents."""

    alpha: np.ndarray
    matrices: Tuple[LocalTangent, ...]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = np.zeros(self.matrices[0].pattern.n if self.matrices else 0)
        for a, K in zip(self.alpha, self.matrices):
            if a != 0.0:
                y += a * (K.matrix @ x)
        return y

    @cached_property
    def data(self) -> np.ndarray:
        return sum(a * K.data for a, K in zip(self.alpha, self.matrices))

    @property
    def matrix(self) -> sparse.csr_matrix:
        return self.matrices[0].pattern.to_csr(self.data)


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Principal cells, their full tangents and the coefficients of every cell."""

    epsilon: float
    greedy: GreedyResult
    alpha: np.ndarray
    matrices: Tuple[LocalTangent, ...]
    zero_cells: Tuple[int, ...] = ()
    used_fallback: bool = False

    @property
    def principal(self) -> Tuple[int, ...]:
        return self.greedy.principal

    @property
    def n_principal(self) -> int:
        return self.greedy.n_principal

    @property
    def n_cells(self) -> int:
        return self.alpha.shape[1]

    @property
    def Z(self) -> np.ndarray:
        return self.greedy.Z

    def approx_local_tangent(self, cell: int) -> ApproxTangent:
        return approx_local_tangent(self, cell)

    def transfer_constant(self, exact: Sequence[LocalTangent]) -> float:
        """max_s ||K^s - K~^s||_F / (epsilon ||K^s||_F) over the given exact tangents."""
        worst = 0.0
        for K in exact:
            ref = np.linalg.norm(K.data)
            if ref == 0.0:
                continue
            err = np.linalg.norm(K.data - self.approx_local_tangent(K.cell).data)
            worst = max(worst, err / (self.epsilon * ref))
        return float(worst)

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "n_principal": self.n_principal,
            "principal": list(self.principal),
            "zero_cells": list(self.zero_cells),
            "gram_fallback": self.used_fallback,
        }


def approx_local_tangent(basis: ReducedBasis, cell: int) -> ApproxTangent:
    return ApproxTangent(basis.alpha[:, cell].copy(), basis.matrices)


def _triangular_coefficients(greedy: GreedyResult) -> np.ndarray:
    """Coefficients from the Gram-Schmidt coordinates: R alpha^s = ||t^s|| beta^s."""
    S = list(greedy.principal)
    R = greedy.beta[:, S] * greedy.norms[S]
    return solve_triangular(R, greedy.beta * greedy.norms, lower=False)


def build_reduced_basis(
    assembler: CellAssembler,
    u: np.ndarray,
    epsilon: float,
    snapshots: Optional[np.ndarray] = None,
) -> ReducedBasis:
    """
    Snapshots at reduced quadrature, greedy selection, full tangents of the principal
    cells and coefficients of every cell.
    """
    T = assembler.snapshots(u) if snapshots is None else snapshots
    greedy = greedy_select(T, epsilon)
    S = list(greedy.principal)
    n_s = T.shape[1]
    zero_cells = tuple(int(s) for s in np.flatnonzero(greedy.norms == 0.0))

    used_fallback = False
    if S:
        try:
            alpha = project_coefficients(T[:, S], T)
        except DegenerateBasisError as exc:
            logger.warning(f"{exc.message}; using Gram-Schmidt coordinates instead")
            alpha = _triangular_coefficients(greedy)
            used_fallback = True
        alpha[:, S] = np.eye(len(S))
    else:
        alpha = np.zeros((0, n_s))
    if zero_cells:
        alpha[:, list(zero_cells)] = 0.0
        logger.warning(f"Cells with vanishing snapshots get zero coefficients: {list(zero_cells)}")

    dof_map = assembler.model.dof_map
    matrices = tuple(assembler.local_tangent(s, u[dof_map[s]], tag=(r, s)) for r, s in enumerate(S))
    basis = ReducedBasis(epsilon, greedy, alpha, matrices, zero_cells, used_fallback)
    logger.debug(f"Reduced basis: N_r={basis.n_principal} of {n_s} cells, principal={S}")
    return basis
