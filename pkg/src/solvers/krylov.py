"""Flexible GMRES for operators whose preconditioner changes between applications."""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    relative_residual: float
    converged: bool
    history: List[float] = field(default_factory=list)


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _cycle(
    matvec: Operator,
    r0: np.ndarray,
    precond: Optional[Operator],
    tol_abs: float,
    budget: int,
    scale: float,
):
    """One flexible Arnoldi cycle from residual r0; returns the correction, its step count and history."""
    beta = float(np.linalg.norm(r0))
    V = [r0 / beta]
    Z: List[np.ndarray] = []
    H = np.zeros((budget + 1, budget))
    cs = np.zeros(budget)
    sn = np.zeros(budget)
    g = np.zeros(budget + 1)
    g[0] = beta
    history: List[float] = []
    k = 0

    for j in range(budget):
        z = precond(V[j]) if precond is not None else V[j]
        Z.append(z)
        w = matvec(z)
        # modified Gram-Schmidt, two passes
        for _ in range(2):
            for i in range(j + 1):
                h = float(w @ V[i])
                H[i, j] += h
                w = w - h * V[i]
        H[j + 1, j] = float(np.linalg.norm(w))
        breakdown = H[j + 1, j] <= 1e-14 * beta
        if not breakdown:
            V.append(w / H[j + 1, j])

        for i in range(j):
            hi, hi1 = H[i, j], H[i + 1, j]
            H[i, j] = cs[i] * hi + sn[i] * hi1
            H[i + 1, j] = -sn[i] * hi + cs[i] * hi1
        cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]

        k = j + 1
        history.append(abs(g[k]) / scale)
        logger.debug(f"FGMRES iteration {k}: relative residual {history[-1]:.3e}")
        if abs(g[k]) <= tol_abs or breakdown:
            break

    y = solve_triangular(H[:k, :k], g[:k])
    return np.asarray(Z[:k]).T @ y, k, history


def fgmres(
    matvec: Operator,
    b: np.ndarray,
    precond: Optional[Operator] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> KrylovResult:
    """
    Right-preconditioned flexible GMRES starting from x0 = 0.

    The preconditioned directions are stored, so ``precond`` may differ at every call
    (for instance when it contains an inner iterative solve). When the recurrence
    reports convergence but the true residual ||b - A x|| is still above ``tol``, the
    iteration restarts from the current iterate with the remaining step budget.

    Args:
        matvec: y = A x
        b: right-hand side
        precond: z = M^-1 v, identity when None
        tol: relative residual target ||b - A x|| / ||b||
        max_iter: maximum number of Arnoldi steps over all cycles

    Returns:
        KrylovResult; ``converged`` holds only if the true relative residual is <= tol
    """
    b = np.asarray(b, dtype=float)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return KrylovResult(np.zeros_like(b), 0, 0.0, True, [0.0])

    x = np.zeros_like(b)
    r = b
    true_rel = 1.0
    history = [1.0]
    used = 0
    while used < max_iter:
        dx, k, cycle_history = _cycle(matvec, r, precond, tol * beta, max_iter - used, beta)
        x = x + dx
        used += k
        history.extend(cycle_history)
        r = b - matvec(x)
        previous, true_rel = true_rel, float(np.linalg.norm(r) / beta)
        if true_rel <= tol:
            break
        if true_rel >= previous:
            logger.debug(f"FGMRES stagnated at relative residual {true_rel:.3e} after {used} iterations")
            break
        if used < max_iter:
            logger.debug(f"FGMRES restart after {used} iterations: true residual {true_rel:.3e} above {tol:.1e}")
    return KrylovResult(x, used, true_rel, true_rel <= tol, history)
