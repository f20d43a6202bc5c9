"""
B-spline, rational and Bernstein bases and the (composed) spline mappings
built on them.

Patch control points are stored flat with the first parametric direction
running fastest: ``flat = i0 + n0 * (i1 + n1 * i2)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.error_handler import DomainError, GeometryError

logger = logging.getLogger(__name__)

# tolerance on the micro image leaving the macro parametric domain
COMPOSITION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector of degree ``degree`` on [0, 1]."""

    degree: int
    knots: np.ndarray

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = int(self.degree)
        object.__setattr__(self, "degree", p)
        if p < 1:
            raise GeometryError(f"Degree must be >= 1, got {p}")
        if knots.ndim != 1 or knots.size < 2 * p + 2:
            raise GeometryError(f"Knot vector too short for degree {p}: {knots.size} knots")
        if np.any(np.diff(knots) < 0.0):
            raise GeometryError("Knot vector must be nondecreasing")
        if not (np.all(knots[: p + 1] == 0.0) and np.all(knots[-(p + 1):] == 1.0)):
            raise GeometryError("Knot vector must be open on [0, 1]")
        if knots[p + 1] == 0.0 or knots[-(p + 2)] == 1.0:
            raise GeometryError("End knots must have multiplicity exactly p+1")
        interior, counts = np.unique(knots[p + 1: -(p + 1)], return_counts=True)
        if np.any(counts > p):
            raise GeometryError(f"Interior knot multiplicity exceeds p={p} at {interior[counts > p]}")

    @classmethod
    def uniform(cls, degree: int, n_elements: int) -> "KnotVector":
        """Open uniform knot vector with ``n_elements`` spans and maximal smoothness."""
        inner = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]
        knots = np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])
        return cls(degree, knots)

    @classmethod
    def bezier(cls, degree: int) -> "KnotVector":
        return cls(degree, np.concatenate([np.zeros(degree + 1), np.ones(degree + 1)]))

    @property
    def n_basis(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    def find_span(self, xi: float) -> int:
        """Index i with knots[i] <= xi < knots[i+1]; xi = 1 maps to the last nonempty span."""
        span = int(np.searchsorted(self.knots, xi, side="right")) - 1
        return min(max(span, self.degree), self.n_basis - 1)

    def greville(self) -> np.ndarray:
        p = self.degree
        return np.array([self.knots[i + 1: i + p + 1].mean() for i in range(self.n_basis)])

    def to_list(self) -> List[float]:
        return [float(k) for k in self.knots]


@dataclass(frozen=True)
class MappingEval:
    """Image point and Jacobian (rows: physical, columns: parametric) of a mapping."""

    x: np.ndarray
    jacobian: np.ndarray


def _check_unit(xi: float) -> None:
    if not (0.0 <= xi <= 1.0):
        raise DomainError(f"Parameter {xi!r} outside [0, 1]", {"xi": float(xi)})


def _ders_basis_funs(kv: KnotVector, span: int, xi: float, n_ders: int) -> np.ndarray:
    """Cox-de Boor recursion with derivatives for the p+1 functions nonzero on ``span``."""
    p = kv.degree
    U = kv.knots
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = xi - U[span + 1 - j]
        right[j] = U[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n_ders + 1, p + 1))
    ders[0, :] = ndu[:, p]
    top = min(n_ders, p)
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, top + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    factor = p
    for k in range(1, top + 1):
        ders[k, :] *= factor
        factor *= p - k
    return ders


def eval_basis(kv: KnotVector, xi: float, deriv_order: int = 0) -> Tuple[int, np.ndarray]:
    """
    Evaluate the p+1 possibly-nonzero B-spline functions at ``xi``.

    Args:
        kv: Knot vector
        xi: Parameter in [0, 1]
        deriv_order: Highest derivative order (0, 1 or 2)

    Returns:
        Index of the first nonzero function and an array of shape
        (deriv_order + 1, p + 1) holding values and derivatives.
    """
    if deriv_order not in (0, 1, 2):
        raise ValueError(f"deriv_order must be 0, 1 or 2, got {deriv_order}")
    xi = float(xi)
    _check_unit(xi)
    span = kv.find_span(xi)
    return span - kv.degree, _ders_basis_funs(kv, span, xi, deriv_order)


def bernstein(degree: int, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Bernstein polynomials and first derivatives at the points ``t`` (vectorised)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    q = degree
    i = np.arange(q + 1)
    binom = np.array([math.comb(q, k) for k in range(q + 1)], dtype=float)
    values = binom * np.power(t[:, None], i) * np.power(1.0 - t[:, None], q - i)
    derivs = np.zeros_like(values)
    if q > 0:
        lower_binom = np.array([math.comb(q - 1, k) for k in range(q)], dtype=float)
        j = np.arange(q)
        lower = lower_binom * np.power(t[:, None], j) * np.power(1.0 - t[:, None], q - 1 - j)
        derivs[:, 1:] += q * lower
        derivs[:, :-1] -= q * lower
    return values, derivs


def _tensor_combine(per_direction: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]]):
    """
    Combine per-direction (indices, values, derivatives) into tensor-product
    arrays with the first direction running fastest.
    """
    idx0, val0, der0 = per_direction[0]
    indices = np.asarray(idx0)
    values = np.asarray(val0)
    grads = [np.asarray(der0)]
    for idx_j, val_j, der_j in per_direction[1:]:
        new_indices = (idx_j[:, None] + indices[None, :]).ravel()
        new_values = (val_j[:, None] * values[None, :]).ravel()
        grads = [(val_j[:, None] * g[None, :]).ravel() for g in grads]
        grads.append((der_j[:, None] * values[None, :]).ravel())
        indices, values = new_indices, new_values
    return indices, values, np.stack(grads, axis=-1)


@dataclass(frozen=True, eq=False)
class SplinePatch:
    """Tensor-product B-spline or NURBS entity mapping [0,1]^d into R^space_dim."""

    knot_vectors: Tuple[KnotVector, ...]
    control_points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "knot_vectors", tuple(self.knot_vectors))
        points = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        object.__setattr__(self, "control_points", points)
        n_p = int(np.prod([kv.n_basis for kv in self.knot_vectors]))
        if points.shape[0] != n_p:
            raise GeometryError(
                f"Patch needs {n_p} control points, got {points.shape[0]}",
                {"shape": self.shape},
            )
        if self.weights is None:
            weights = np.ones(n_p)
        else:
            weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.shape != (n_p,):
            raise GeometryError(f"Patch needs {n_p} weights, got {weights.size}")
        if np.any(weights <= 0.0):
            raise GeometryError("Patch weights must be strictly positive")
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return len(self.knot_vectors)

    @property
    def space_dim(self) -> int:
        return self.control_points.shape[1]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(kv.n_basis for kv in self.knot_vectors)

    @property
    def n_basis(self) -> int:
        return self.control_points.shape[0]

    @property
    def degrees(self) -> Tuple[int, ...]:
        return tuple(kv.degree for kv in self.knot_vectors)

    @property
    def is_rational(self) -> bool:
        return bool(np.any(self.weights != 1.0))

    def multi_index(self, flat: int) -> Tuple[int, ...]:
        out = []
        for n in self.shape:
            out.append(flat % n)
            flat //= n
        return tuple(out)

    def basis(self, theta: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Nonzero (rational) basis functions at ``theta``.

        Returns:
            Flat patch indices (m,), values (m,) and parametric gradients (m, dim).
        """
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.dim:
            raise DomainError(f"Expected {self.dim} parameters, got {theta.size}")
        per_direction = []
        stride = 1
        for kv, t in zip(self.knot_vectors, theta):
            first, ders = eval_basis(kv, t, 1)
            per_direction.append((stride * (first + np.arange(kv.degree + 1)), ders[0], ders[1]))
            stride *= kv.n_basis
        indices, values, grads = _tensor_combine(per_direction)
        if not self.is_rational:
            return indices, values, grads
        w = self.weights[indices]
        weight_sum = np.dot(w, values)
        weight_grad = w @ grads
        r = w * values / weight_sum
        dr = (w[:, None] * (grads * weight_sum - values[:, None] * weight_grad[None, :])) / weight_sum**2
        return indices, r, dr

    def to_json(self) -> Dict[str, Any]:
        return {
            "degree": [kv.degree for kv in self.knot_vectors],
            "knots": [kv.to_list() for kv in self.knot_vectors],
            "points": self.control_points.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "SplinePatch":
        try:
            degrees = payload["degree"]
            knots = payload["knots"]
            points = payload["points"]
        except KeyError as exc:
            raise GeometryError(f"Patch description missing field {exc}") from exc
        if len(degrees) != len(knots):
            raise GeometryError("Patch 'degree' and 'knots' lengths differ")
        kvs = tuple(KnotVector(p, k) for p, k in zip(degrees, knots))
        return cls(kvs, np.asarray(points, dtype=float), payload.get("weights"))


def eval_patch(patch: SplinePatch, theta: Sequence[float]) -> MappingEval:
    """Point and Jacobian of the (rational if weighted) tensor-product mapping."""
    indices, values, grads = patch.basis(theta)
    points = patch.control_points[indices]
    return MappingEval(values @ points, points.T @ grads)


@dataclass(frozen=True, eq=False)
class BezierMacroElement:
    """Bernstein (single-element) polynomial mapping of the macro parametric cube."""

    degrees: Tuple[int, ...]
    control_points: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "degrees", tuple(int(q) for q in self.degrees))
        points = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        object.__setattr__(self, "control_points", points)
        expected = int(np.prod([q + 1 for q in self.degrees]))
        if points.shape[0] != expected:
            raise GeometryError(f"Bezier element needs {expected} control points, got {points.shape[0]}")

    @property
    def dim(self) -> int:
        return len(self.degrees)

    def evaluate(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Vectorised evaluation at points ``y`` of shape (n, dim).

        Returns:
            Images (n, space_dim) and Jacobians (n, space_dim, dim).
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[0]
        values = None
        grads: List[np.ndarray] = []
        for j, q in enumerate(self.degrees):
            b, db = bernstein(q, y[:, j])
            if values is None:
                values = b
                grads = [db]
                continue
            grads = [(b[:, :, None] * g[:, None, :]).reshape(n, -1) for g in grads]
            grads.append((db[:, :, None] * values[:, None, :]).reshape(n, -1))
            values = (b[:, :, None] * values[:, None, :]).reshape(n, -1)
        x = values @ self.control_points
        jac = np.stack([g @ self.control_points for g in grads], axis=-1)
        return x, jac

    def face_points(self, axis: int, side: int) -> np.ndarray:
        """Control points on the face ``y[axis] = side``."""
        shape = tuple(q + 1 for q in self.degrees)
        grid = self.control_points.reshape(shape[::-1] + (-1,))
        # reversed shape: axis j of the element sits at grid axis (dim - 1 - j)
        sl = [slice(None)] * self.dim
        sl[self.dim - 1 - axis] = 0 if side == 0 else -1
        return grid[tuple(sl)].reshape(-1, self.control_points.shape[1])


def eval_macro(macro: BezierMacroElement, y: Sequence[float]) -> MappingEval:
    y = np.asarray(y, dtype=float).ravel()
    for t in y:
        _check_unit(float(t))
    x, jac = macro.evaluate(y[None, :])
    return MappingEval(x[0], jac[0])


def clip_to_unit(y: np.ndarray, tol: float = COMPOSITION_TOL) -> np.ndarray:
    """Clamp micro images into [0,1]^d, rejecting excursions beyond ``tol``."""
    y = np.asarray(y, dtype=float)
    if np.any(y < -tol) or np.any(y > 1.0 + tol):
        raise GeometryError(
            "Micro image leaves the macro parametric domain",
            {"min": float(y.min()), "max": float(y.max())},
        )
    return np.clip(y, 0.0, 1.0)


def eval_composed(macro: BezierMacroElement, micro: SplinePatch, theta: Sequence[float]) -> MappingEval:
    """Point ``(B o S)(theta)`` and chain-rule Jacobian ``J_B(S(theta)) J_S(theta)``."""
    inner = eval_patch(micro, theta)
    y = clip_to_unit(inner.x)
    outer = eval_macro(macro, y)
    return MappingEval(outer.x, outer.jacobian @ inner.jacobian)
