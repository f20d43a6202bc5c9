"""
Tangent solves on the cell decomposition: the constrained saddle-point system and
its inexact FETI-DP block preconditioner built from a handful of local factorisations.

Unknowns of the saddle system, in order:

* remaining DOFs of every cell (interior then dual), cell-major
* coarse block: assembled primal DOFs, then one edge-average multiplier per
  interface edge and component
* jump multipliers on the nonredundant rows of B

Cell operators are combinations sum_q alpha_q^s K^q of a few stored tangents, so the
operator is never assembled. Dirichlet DOFs of every cell are eliminated with a
unit diagonal, on top of whatever the stored tangents carry.
"""
import logging
import time
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg, splu

from config import SolverConfig
from geometry.lattice import LatticeModel
from geometry.partition import DofPartition, enrich_primal
from mechanics.assembly import LocalTangent
from solvers.direct import array_bytes, dense_solve, factor_bytes, is_definite, sparse_bytes, symmetric_factor
from solvers.krylov import fgmres
from solvers.rom import ReducedBasis
from utils.error_handler import NeedsEnrichment, NonConvergenceError, SolverError

logger = logging.getLogger(__name__)


class DeltaMethod(str, Enum):
    """
    Rule for the per-cell dual Schur coefficients.

    GALERKIN keeps one factorisation per stored tangent. EXACT factorises every
    combined cell operator and is only meant for checking the Galerkin fit.
    """

    GALERKIN = "galerkin"
    EXACT = "exact"


class SolveStats(BaseModel):
    """Counters of one RB tangent solve."""

    outer_iterations: int = 0
    inner_iterations: int = 0
    interface_solves: int = 0
    relative_residual: float = 0.0
    jump_norm: float = 0.0
    edge_jump_norm: float = 0.0
    factorizations: int = 0
    memory_bytes: int = 0
    preconditioned: bool = True
    setup_time: float = 0.0
    solve_time: float = 0.0


@dataclass(frozen=True, eq=False)
class LocalOperators:
    """Cell operators K~^s = sum_q alpha[q, s] K^q over a few stored local tangents."""

    matrices: Tuple[LocalTangent, ...]
    alpha: np.ndarray

    @classmethod
    def exact(cls, tangents: Sequence[LocalTangent]) -> "LocalOperators":
        """One stored tangent per cell; ``tangents[s]`` must belong to cell s."""
        return cls(tuple(tangents), np.eye(len(tangents)))

    @classmethod
    def from_basis(cls, basis: ReducedBasis) -> "LocalOperators":
        return cls(tuple(basis.matrices), basis.alpha)

    @property
    def n_stored(self) -> int:
        return len(self.matrices)

    @property
    def n_cells(self) -> int:
        return self.alpha.shape[1]

    @property
    def principal(self) -> Tuple[int, ...]:
        return tuple(m.cell for m in self.matrices)

    @cached_property
    def support(self) -> List[np.ndarray]:
        """Cells using each stored tangent."""
        return [np.flatnonzero(self.alpha[q] != 0.0) for q in range(self.n_stored)]

    @cached_property
    def is_complete(self) -> bool:
        """Every cell is represented by exactly one stored tangent with coefficient one."""
        a = self.alpha
        if a.size == 0:
            return False
        return bool(np.all(np.sum(a != 0.0, axis=0) == 1) and np.all(np.isin(a, (0.0, 1.0))))


class SaddleSystem:
    """
    Constrained tangent system for one Newton iteration.

    Args:
        partition: DOF splitting and constraint operators
        operators: cell operators
        residual: masked global residual r; the system solves K du = -r
    """

    def __init__(self, partition: DofPartition, operators: LocalOperators, residual: np.ndarray):
        model = partition.model
        self.partition = partition
        self.operators = operators
        self.model = model
        d = model.dim
        R = partition.remaining_dofs
        P = partition.primal_dofs
        self.n_cells = model.n_cells
        self.n_R = R.size
        self.n_P = P.size
        self.n_d = partition.n_dual
        self.n_primal = partition.n_coarse
        self.n_edges = partition.n_edges
        self.n_coarse = self.n_primal + self.n_edges

        blocks = [m.matrix for m in operators.matrices]
        self.K_RR = [K[R][:, R].tocsc() for K in blocks]
        self.K_RP = [K[R][:, P].tocsr() for K in blocks]
        self.K_PR = [K[P][:, R].tocsr() for K in blocks]
        self.K_PP = [K[P][:, P].toarray() for K in blocks]

        masks = np.stack([model.local_dirichlet_mask(s) for s in range(self.n_cells)])
        self.free_R = ~masks[:, R]
        self.free_P = ~masks[:, P]
        self.primal_map = partition.primal_map

        rows = partition.nonredundant_rows()
        self.B = partition.jump[rows].tocsr()
        self.C = (partition.edge_modes.T @ partition.jump).tocsr()
        self.n_lambda = self.B.shape[0]
        offset = self.n_R - self.n_d
        dual_cols = (np.arange(self.n_cells)[:, None] * self.n_R + offset + np.arange(self.n_d)).ravel()
        self.B_d = self.B[:, dual_cols].tocsr()

        self.coarse_global = (d * partition.coarse_functions[:, None] + np.arange(d)).ravel()
        multiplicity = np.bincount(model.dof_map.ravel(), minlength=model.n_dofs)
        residual = np.asarray(residual, dtype=float)
        f_R = -(residual / np.maximum(multiplicity, 1))[model.dof_map[:, R]]
        f_P = -residual[self.coarse_global]
        self.rhs = np.concatenate([f_R.ravel(), f_P, np.zeros(self.n_edges), np.zeros(self.n_lambda)])

    @property
    def size(self) -> int:
        return self.n_cells * self.n_R + self.n_coarse + self.n_lambda

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n_u = self.n_cells * self.n_R
        return (
            x[:n_u].reshape(self.n_cells, self.n_R),
            x[n_u : n_u + self.n_coarse],
            x[n_u + self.n_coarse :],
        )

    def join(self, U: np.ndarray, c: np.ndarray, lam: np.ndarray) -> np.ndarray:
        return np.concatenate([U.ravel(), c, lam])

    def _combine(self, blocks, X: np.ndarray, n_out: int) -> np.ndarray:
        Y = np.zeros((self.n_cells, n_out))
        alpha = self.operators.alpha
        for q, K in enumerate(blocks):
            cells = self.operators.support[q]
            if cells.size:
                Y[cells] += np.asarray(K @ X[cells].T).T * alpha[q, cells][:, None]
        return Y

    def rr(self, U: np.ndarray) -> np.ndarray:
        Y = self._combine(self.K_RR, U * self.free_R, self.n_R)
        return np.where(self.free_R, Y, U)

    def rp(self, UP: np.ndarray) -> np.ndarray:
        return self._combine(self.K_RP, UP * self.free_P, self.n_R) * self.free_R

    def pr(self, U: np.ndarray) -> np.ndarray:
        return self._combine(self.K_PR, U * self.free_R, self.n_P) * self.free_P

    def pp(self, UP: np.ndarray) -> np.ndarray:
        Y = self._combine(self.K_PP, UP * self.free_P, self.n_P)
        return np.where(self.free_P, Y, UP)

    def gather_primal(self, Y: np.ndarray) -> np.ndarray:
        return np.bincount(self.primal_map.ravel(), weights=Y.ravel(), minlength=self.n_primal)

    def coupling_t(self, U: np.ndarray) -> np.ndarray:
        """Coarse residual of remaining values: assembled K_PR u plus edge averages C u."""
        return np.concatenate([self.gather_primal(self.pr(U)), self.C @ U.ravel()])

    def coupling(self, c: np.ndarray) -> np.ndarray:
        """Remaining-space image of coarse values: K_RP u_P plus C^T mu."""
        UP = c[: self.n_primal][self.primal_map]
        return self.rp(UP) + (self.C.T @ c[self.n_primal :]).reshape(self.n_cells, self.n_R)

    def coarse_diagonal(self, c: np.ndarray) -> np.ndarray:
        UP = c[: self.n_primal][self.primal_map]
        return np.concatenate([self.gather_primal(self.pp(UP)), np.zeros(self.n_edges)])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        U, c, lam = self.split(x)
        y_U = self.rr(U) + self.coupling(c) + (self.B.T @ lam).reshape(self.n_cells, self.n_R)
        y_c = self.coupling_t(U) + self.coarse_diagonal(c)
        return self.join(y_U, y_c, self.B @ U.ravel())

    def recover(self, x: np.ndarray) -> np.ndarray:
        """Global increment from the saddle unknowns (copies of shared DOFs are averaged)."""
        U, c, _ = self.split(x)
        model = self.model
        dofs = model.dof_map[:, self.partition.remaining_dofs]
        du = np.zeros(model.n_dofs)
        counts = np.zeros(model.n_dofs)
        np.add.at(du, dofs.ravel(), U.ravel())
        np.add.at(counts, dofs.ravel(), 1.0)
        hit = counts > 0
        du[hit] /= counts[hit]
        du[self.coarse_global] = c[: self.n_primal]
        du[model.dirichlet_mask] = 0.0
        return du

    def memory_bytes(self) -> int:
        blocks = sum(sparse_bytes(K) for K in self.K_RR + self.K_RP + self.K_PR)
        return int(blocks + array_bytes(self.K_PP) + sparse_bytes(self.B) + sparse_bytes(self.C))


@dataclass(eq=False)
class PreconditionerState:
    """
    Inexact FETI-DP preconditioner.

    ``delta[f, s]`` weights factorisation f in the local inverse of cell s and
    ``sigma[f, s]`` weights its dual Schur complement in the interface preconditioner.
    """

    system: SaddleSystem
    factors: List
    factor_cells: Tuple[int, ...]
    delta: np.ndarray
    sigma: np.ndarray
    F_dd: List[np.ndarray]
    S_dd: List[np.ndarray]
    phi_d: List[np.ndarray]
    coarse_index: List[np.ndarray]
    coarse_lu: object
    inner_tol: float
    max_inner: int
    inner_iterations: int = 0
    interface_solves: int = 0

    @property
    def n_factorizations(self) -> int:
        return len(self.factors)

    @cached_property
    def _delta_support(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.delta[f] != 0.0) for f in range(len(self.factors))]

    @cached_property
    def _sigma_support(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.sigma[f] != 0.0) for f in range(len(self.factors))]

    def local_solve(self, Y: np.ndarray) -> np.ndarray:
        free = self.system.free_R
        Yf = Y * free
        out = np.zeros_like(Y)
        for f, lu in enumerate(self.factors):
            cells = self._delta_support[f]
            if cells.size:
                out[cells] += lu.solve(np.ascontiguousarray(Yf[cells].T)).T * self.delta[f, cells][:, None]
        return np.where(free, out, Y)

    def block_solve(self, r_U: np.ndarray, r_c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Approximate inverse of the unconstrained block by local solves and one coarse solve."""
        system = self.system
        w = self.local_solve(r_U)
        c = self.coarse_lu.solve(r_c - system.coupling_t(w))
        return w - self.local_solve(system.coupling(c)), c

    def interface_apply(self, lam: np.ndarray) -> np.ndarray:
        system = self.system
        free_d = system.free_R[:, system.n_R - system.n_d :]
        rd = (system.B_d.T @ lam).reshape(system.n_cells, system.n_d) * free_d
        v = np.zeros_like(rd)
        for f, F in enumerate(self.F_dd):
            cells = self._delta_support[f]
            if cells.size:
                v[cells] += (F @ rd[cells].T).T * self.delta[f, cells][:, None]
        h = np.zeros(system.n_coarse)
        for s in range(system.n_cells):
            np.add.at(h, self.coarse_index[s], self.phi_d[s].T @ rd[s])
        c = self.coarse_lu.solve(h)
        for s in range(system.n_cells):
            v[s] += self.phi_d[s] @ c[self.coarse_index[s]]
        return system.B_d @ (v * free_d).ravel()

    def interface_precondition(self, lam: np.ndarray) -> np.ndarray:
        system = self.system
        rd = 0.5 * (system.B_d.T @ lam).reshape(system.n_cells, system.n_d)
        y = np.zeros_like(rd)
        for f, S in enumerate(self.S_dd):
            cells = self._sigma_support[f]
            if cells.size:
                y[cells] += (S @ rd[cells].T).T * self.sigma[f, cells][:, None]
        return 0.5 * (system.B_d @ y.ravel())

    def apply(self, v: np.ndarray) -> np.ndarray:
        system = self.system
        r_U, r_c, r_lam = system.split(v)
        U, c = self.block_solve(r_U, r_c)
        lam = np.zeros(system.n_lambda)
        if system.n_lambda:
            n = system.n_lambda
            F = LinearOperator((n, n), matvec=self.interface_apply, dtype=float)
            M = LinearOperator((n, n), matvec=self.interface_precondition, dtype=float)
            rhs = system.B @ U.ravel() - r_lam
            counter = {"n": 0}

            def _count(_):
                counter["n"] += 1

            lam, _ = cg(F, rhs, rtol=self.inner_tol, maxiter=self.max_inner, M=M, callback=_count)
            self.inner_iterations += counter["n"]
            self.interface_solves += 1
            dU, dc = self.block_solve((system.B.T @ lam).reshape(system.n_cells, system.n_R), np.zeros(system.n_coarse))
            U, c = U - dU, c - dc
        return system.join(U, c, lam)

    def memory_bytes(self) -> int:
        stored = sum(factor_bytes(lu) for lu in self.factors) + factor_bytes(self.coarse_lu)
        return int(stored + array_bytes(self.F_dd) + array_bytes(self.S_dd) + array_bytes(self.phi_d))


def _masked(K: sparse.spmatrix, free: np.ndarray) -> sparse.csc_matrix:
    D = sparse.diags(free.astype(float))
    return (D @ K @ D + sparse.diags((~free).astype(float))).tocsc()


def _factorize(system: SaddleSystem, method: DeltaMethod):
    """Local factorisations, the cells they belong to, and the delta/sigma weights."""
    ops = system.operators
    if ops.is_complete or method == DeltaMethod.GALERKIN:
        matrices = system.K_RR
        cells = ops.principal
        weights = ops.alpha
    else:
        matrices = [
            _masked(
                sum(
                    (ops.alpha[q, s] * system.K_RR[q] for q in range(ops.n_stored) if ops.alpha[q, s] != 0.0),
                    sparse.csc_matrix((system.n_R, system.n_R)),
                ),
                system.free_R[s],
            )
            for s in range(system.n_cells)
        ]
        cells = tuple(range(system.n_cells))
        weights = np.eye(system.n_cells)

    factors, failing = [], []
    for K, cell in zip(matrices, cells):
        lu = symmetric_factor(K)
        if not is_definite(lu, K):
            failing.append(int(cell))
        factors.append(lu)
    if failing:
        raise NeedsEnrichment(failing, {"level": system.partition.level})
    return factors, tuple(int(c) for c in cells), weights


def _dual_blocks(system: SaddleSystem, factors) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Dual block of each local inverse and its inverse, the dual Schur complement."""
    n_R, n_d = system.n_R, system.n_d
    E = np.zeros((n_R, n_d))
    E[n_R - n_d + np.arange(n_d), np.arange(n_d)] = 1.0
    F_dd, S_dd = [], []
    for lu in factors:
        F = lu.solve(E)[n_R - n_d :] if n_d else np.zeros((0, 0))
        F = 0.5 * (F + F.T)
        F_dd.append(F)
        S_dd.append(np.linalg.inv(F) if n_d else F)
    return F_dd, S_dd


def _galerkin_delta(alpha: np.ndarray, F_dd: List[np.ndarray], S_dd: List[np.ndarray]) -> np.ndarray:
    """
    delta^s minimising ||(sum_p alpha_p S^p)(sum_q delta_q F^q) - I||_F, one small
    N_r x N_r system per cell.
    """
    n_f, n_s = alpha.shape
    n_d = F_dd[0].shape[0] if F_dd else 0
    if n_d == 0:
        return alpha.copy()
    P = np.einsum("pij,qjk->pqik", np.asarray(S_dd), np.asarray(F_dd))
    flat = P.reshape(n_f * n_f, -1)
    H = (flat @ flat.T).reshape(n_f, n_f, n_f, n_f)
    trace = np.einsum("pqii->pq", P)
    G = np.einsum("ps,prtq,ts->srq", alpha, H, alpha)
    b = np.einsum("ps,pr->sr", alpha, trace)
    delta = np.zeros_like(alpha)
    for s in range(n_s):
        if np.any(alpha[:, s]):
            delta[:, s] = dense_solve(G[s], b[s])
    return delta


def _cell_combination(ops: LocalOperators, blocks: List[np.ndarray], cell: int, shape: Tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    for q in range(ops.n_stored):
        if ops.alpha[q, cell] != 0.0:
            out += ops.alpha[q, cell] * blocks[q]
    return out


def _coarse_problem(system: SaddleSystem, state_factors, delta: np.ndarray):
    """Phi^s = X^s M^s per cell, its dual rows, and the assembled coarse operator."""
    ops = system.operators
    n_R, n_P, n_s = system.n_R, system.n_P, system.n_cells
    K_RP_dense = [K.toarray() for K in system.K_RP]
    K_PP = system.K_PP

    coarse_index, M_cells = [], []
    for s in range(n_s):
        block = system.C[:, s * n_R : (s + 1) * n_R].tocsr()
        edges = np.flatnonzero(np.diff(block.indptr))
        W = _cell_combination(ops, K_RP_dense, s, (n_R, n_P))
        W = W * system.free_R[s][:, None] * system.free_P[s][None, :]
        M_cells.append(np.hstack([W, block[edges].toarray().T]))
        coarse_index.append(np.concatenate([system.primal_map[s], system.n_primal + edges]))

    phi = [np.zeros_like(M) for M in M_cells]
    for f, lu in enumerate(state_factors):
        cells = np.flatnonzero(delta[f] != 0.0)
        if not cells.size:
            continue
        stacked = np.hstack([M_cells[s] * system.free_R[s][:, None] for s in cells])
        solved = lu.solve(np.asfortranarray(stacked))
        start = 0
        for s in cells:
            width = M_cells[s].shape[1]
            phi[s] += delta[f, s] * solved[:, start : start + width]
            start += width

    rows, cols, vals = [], [], []
    for s in range(n_s):
        phi[s] *= system.free_R[s][:, None]
        K_pp = _cell_combination(ops, K_PP, s, (n_P, n_P))
        free = system.free_P[s]
        K_pp = K_pp * free[:, None] * free[None, :] + np.diag((~free).astype(float))
        n_cl = M_cells[s].shape[1]
        local = -M_cells[s].T @ phi[s]
        local[:n_P, :n_P] += K_pp
        idx = coarse_index[s]
        rows.append(np.repeat(idx, n_cl))
        cols.append(np.tile(idx, n_cl))
        vals.append(local.ravel())
    S_c = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(system.n_coarse, system.n_coarse),
    )
    try:
        coarse_lu = splu(S_c)
    except RuntimeError as exc:
        raise SolverError(f"Coarse problem is singular: {exc}", {"n_coarse": system.n_coarse}) from exc
    phi_d = [p[n_R - system.n_d :] for p in phi]
    return phi_d, coarse_index, coarse_lu


def build_preconditioner(
    system: SaddleSystem,
    settings: SolverConfig,
    delta_method: DeltaMethod = DeltaMethod.GALERKIN,
) -> PreconditionerState:
    """
    Factorise the local remaining blocks, fit the dual-Schur weights and factorise
    the coarse problem (primal DOFs plus edge averages).

    With the default Galerkin rule exactly one local factorisation is stored per
    stored tangent.

    Raises:
        NeedsEnrichment: a factorised remaining block is not positive definite
    """
    factors, cells, weights = _factorize(system, delta_method)
    F_dd, S_dd = _dual_blocks(system, factors)
    ops = system.operators
    if ops.is_complete or delta_method == DeltaMethod.EXACT:
        delta = weights.copy()
    else:
        delta = _galerkin_delta(weights, F_dd, S_dd)
    phi_d, coarse_index, coarse_lu = _coarse_problem(system, factors, delta)
    state = PreconditionerState(
        system=system,
        factors=factors,
        factor_cells=cells,
        delta=delta,
        sigma=weights,
        F_dd=F_dd,
        S_dd=S_dd,
        phi_d=phi_d,
        coarse_index=coarse_index,
        coarse_lu=coarse_lu,
        inner_tol=settings.inner_tol,
        max_inner=settings.max_inner,
    )
    logger.debug(
        f"Preconditioner: {state.n_factorizations} local factorisations, {system.n_coarse} coarse unknowns, "
        f"{system.n_lambda} multipliers"
    )
    return state


def solve_rb(
    system: SaddleSystem,
    precond: Optional[PreconditionerState],
    settings: SolverConfig,
    precondition: bool = True,
) -> Tuple[np.ndarray, np.ndarray, SolveStats]:
    """
    Flexible GMRES on the saddle system, preconditioned by ``precond``.

    Returns:
        Global increment, jump multipliers and solve statistics

    Raises:
        NonConvergenceError: outer iteration limit reached
    """
    start = time.perf_counter()
    use_precond = precondition and precond is not None
    result = fgmres(
        system.matvec,
        system.rhs,
        precond.apply if use_precond else None,
        tol=settings.outer_tol,
        max_iter=settings.max_outer,
    )
    U, _, lam = system.split(result.x)
    stats = SolveStats(
        outer_iterations=result.iterations,
        inner_iterations=precond.inner_iterations if use_precond else 0,
        interface_solves=precond.interface_solves if use_precond else 0,
        relative_residual=result.relative_residual,
        jump_norm=float(np.abs(system.partition.jump @ U.ravel()).max(initial=0.0)),
        edge_jump_norm=float(np.abs(system.C @ U.ravel()).max(initial=0.0)),
        factorizations=precond.n_factorizations if precond is not None else 0,
        memory_bytes=system.memory_bytes() + (precond.memory_bytes() if precond is not None else 0),
        preconditioned=use_precond,
        solve_time=time.perf_counter() - start,
    )
    if not result.converged:
        raise NonConvergenceError(
            f"Outer Krylov iteration did not reach {settings.outer_tol:.1e} in {settings.max_outer} iterations",
            stats=stats.model_dump(),
        )
    logger.debug(
        f"RB solve: {stats.outer_iterations} outer / {stats.inner_iterations} inner iterations, "
        f"residual {stats.relative_residual:.2e}, jump {stats.jump_norm:.2e}"
    )
    return system.recover(result.x), lam, stats


def handle_enrichment(model: LatticeModel, partition: DofPartition, signal: Optional[NeedsEnrichment] = None) -> DofPartition:
    """
    One more primal DOF on every cell edge, kept for the rest of the run.

    Args:
        model: lattice the partition was built for
        partition: current partition
        signal: the NeedsEnrichment raised by build_preconditioner, if any

    Raises:
        EnrichmentExhaustedError: the cell faces have no functions left to promote
    """
    if partition.model is not model:
        raise ValueError("partition belongs to a different lattice model")
    cells = signal.cells if signal is not None else []
    logger.warning(f"Indefinite remaining blocks on cells {cells} at primal level {partition.level}")
    return enrich_primal(partition)
