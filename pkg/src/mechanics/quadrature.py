"""Element-by-element tensor Gauss-Legendre rules on the reference cell."""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from geometry.lattice import ReferenceUnitCell

logger = logging.getLogger(__name__)


@lru_cache(maxsize=16)
def _unit_gauss(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    x, w = _unit_gauss(n)
    return a + (b - a) * x, (b - a) * w


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """
    Quadrature points of the reference cell in patch parametric coordinates.

    Points are grouped by element: ``points_per_element`` consecutive points
    belong to one knot-span element of one patch.
    """

    patch: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    points_per_dir: int
    points_per_element: int

    @property
    def n_points(self) -> int:
        return self.weights.size

    @property
    def n_elements(self) -> int:
        return self.n_points // self.points_per_element


def gauss_rule(ref_cell: ReferenceUnitCell, points_per_dir: int) -> QuadratureRule:
    """Tensor rule with ``points_per_dir`` Gauss points per direction on every element."""
    if points_per_dir < 1:
        raise ValueError(f"points_per_dir must be >= 1, got {points_per_dir}")
    dim = ref_cell.dim
    patch_ids, points, weights = [], [], []
    for k, patch in enumerate(ref_cell.patches):
        spans = [kv.breakpoints for kv in patch.knot_vectors]
        element_shape = tuple(s.size - 1 for s in spans)
        for element in np.ndindex(*element_shape[::-1]):
            element = element[::-1]
            per_dir = [gauss_legendre(points_per_dir, spans[j][element[j]], spans[j][element[j] + 1]) for j in range(dim)]
            grids = np.meshgrid(*[x for x, _ in per_dir][::-1], indexing="ij")
            wgrids = np.meshgrid(*[w for _, w in per_dir][::-1], indexing="ij")
            points.append(np.stack([g.ravel() for g in grids[::-1]], axis=1))
            weights.append(np.prod(np.stack([g.ravel() for g in wgrids]), axis=0))
            patch_ids.append(np.full(points_per_dir**dim, k))
    return QuadratureRule(
        patch=np.concatenate(patch_ids),
        points=np.vstack(points),
        weights=np.concatenate(weights),
        points_per_dir=points_per_dir,
        points_per_element=points_per_dir**dim,
    )


def full_rule(ref_cell: ReferenceUnitCell, p: Optional[int] = None) -> QuadratureRule:
    """(p+1)^d points per element."""
    degree = ref_cell.degree if p is None else p
    return gauss_rule(ref_cell, degree + 1)


def reduced_rule(ref_cell: ReferenceUnitCell, points_per_dir: int = 2) -> QuadratureRule:
    """Snapshot rule, 2^d points per element by default."""
    return gauss_rule(ref_cell, points_per_dir)
