"""Sparse direct solves and factorisation helpers."""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from utils.error_handler import SolverError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-12


def sparse_bytes(matrix: sparse.spmatrix) -> int:
    """Storage of a CSR/CSC matrix (data, indices and index pointer)."""
    m = matrix if sparse.isspmatrix_csr(matrix) or sparse.isspmatrix_csc(matrix) else matrix.tocsr()
    return int(m.data.nbytes + m.indices.nbytes + m.indptr.nbytes)


def factor_bytes(lu) -> int:
    """Storage of a SuperLU factorisation: values plus row indices of L and U."""
    return int((lu.L.nnz + lu.U.nnz) * (8 + 4))


def array_bytes(arrays: Iterable[np.ndarray]) -> int:
    return int(sum(np.asarray(a).nbytes for a in arrays))


@dataclass
class DirectSolution:
    x: np.ndarray
    relative_residual: float
    memory_bytes: int


def solve_direct(K: sparse.spmatrix, rhs: np.ndarray) -> DirectSolution:
    """
    Solve K x = rhs by sparse LU.

    Raises:
        SolverError: singular matrix or non-finite solution
    """
    K = sparse.csc_matrix(K)
    rhs = np.asarray(rhs, dtype=float)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return DirectSolution(np.zeros_like(rhs), 0.0, sparse_bytes(K))
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise SolverError(f"Sparse LU failed: {exc}", {"n": K.shape[0]}) from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolverError("Direct solve produced non-finite values")
    rel = float(np.linalg.norm(K @ x - rhs) / rhs_norm)
    memory = sparse_bytes(K) + factor_bytes(lu)
    logger.debug(f"Direct solve: n={K.shape[0]}, factor nnz={lu.L.nnz + lu.U.nnz}, rel. residual={rel:.2e}")
    return DirectSolution(x, rel, memory)


def symmetric_factor(K: sparse.spmatrix):
    """
    LU of a symmetric matrix with symmetric ordering and no numerical pivoting.

    The U diagonal then carries the LDL^T pivots, whose signs give the inertia.

    Returns:
        The SuperLU object, or None when the factorisation hits an exactly zero pivot.
    """
    try:
        return splu(
            sparse.csc_matrix(K),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        return None


def is_definite(lu, K: sparse.spmatrix, tol: float = PIVOT_TOL) -> bool:
    """True when every pivot of ``lu`` exceeds ``tol`` times the largest diagonal entry of K."""
    if lu is None:
        return False
    scale = float(np.abs(K.diagonal()).max()) if K.shape[0] else 1.0
    pivots = lu.U.diagonal()
    return bool(np.all(pivots > tol * scale))


def check_spd(K: sparse.spmatrix, tol: float = PIVOT_TOL) -> bool:
    """Positive definiteness test by attempted pivot-free symmetric factorisation."""
    return is_definite(symmetric_factor(K), K, tol)


def dense_solve(matrix: np.ndarray, rhs: np.ndarray, rcond: Optional[float] = None) -> np.ndarray:
    """Least-squares solve for the small dense systems of the solvers."""
    solution, *_ = np.linalg.lstsq(matrix, rhs, rcond=rcond)
    return solution
