"""
Macro geometries: one Bezier element per lattice cell.

Cells are numbered with the first grid direction running fastest, ``s = i + nx * j``.
"""
import logging
import math
from typing import Callable, List, Sequence, Tuple

import numpy as np

from geometry.splines import BezierMacroElement, SplinePatch, bernstein, eval_patch
from utils.error_handler import GeometryError

logger = logging.getLogger(__name__)

MacroMap = Callable[[np.ndarray], np.ndarray]


def _bernstein_interpolate(fn: MacroMap, box: Sequence[Tuple[float, float]], degrees: Sequence[int]) -> np.ndarray:
    """Bernstein control points of the tensor interpolant of ``fn`` at equispaced nodes of ``box``."""
    dim = len(degrees)
    nodes = [np.linspace(0.0, 1.0, q + 1) for q in degrees]
    inverse = [np.linalg.inv(bernstein(q, nodes[j])[0]) for j, q in enumerate(degrees)]
    grids = np.meshgrid(
        *[lo + (hi - lo) * nodes[j] for j, (lo, hi) in enumerate(box)][::-1], indexing="ij"
    )
    # reversed axes: grid axis (dim - 1 - j) is macro direction j
    params = np.stack(grids[::-1], axis=-1).reshape(-1, dim)
    values = np.asarray(fn(params), dtype=float)
    shape = tuple(q + 1 for q in degrees)[::-1]
    coeffs = values.reshape(shape + (values.shape[-1],))
    for j in range(dim):
        axis = dim - 1 - j
        coeffs = np.moveaxis(np.tensordot(inverse[j], np.moveaxis(coeffs, axis, 0), axes=1), 0, axis)
    return coeffs.reshape(-1, values.shape[-1])


def _grid_boxes(nx: int, ny: int) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
    boxes = []
    for j in range(ny):
        for i in range(nx):
            boxes.append(((i / nx, (i + 1) / nx), (j / ny, (j + 1) / ny)))
    return boxes


def rectangle(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> List[BezierMacroElement]:
    """Bilinear elements tiling [0, nx*width] x [0, ny*height]."""
    elements = []
    for j in range(ny):
        for i in range(nx):
            x0, x1 = i * width, (i + 1) * width
            y0, y1 = j * height, (j + 1) * height
            points = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
            elements.append(BezierMacroElement((1, 1), points))
    return elements


def curved_beam(
    nx: int,
    ny: int,
    inner_radius: float,
    outer_radius: float,
    angle_deg: float = 90.0,
    degree: int = 2,
) -> List[BezierMacroElement]:
    """
    Annular sector: macro direction 0 runs along the arc from angle 0, direction 1
    runs radially outwards. Each element is the degree-``degree`` interpolant of the
    exact polar map, so neighbouring elements share their face control points.
    """
    if outer_radius <= inner_radius:
        raise GeometryError("outer_radius must exceed inner_radius")
    span = math.radians(angle_deg)

    def polar(y: np.ndarray) -> np.ndarray:
        phi = span * y[:, 0]
        r = inner_radius + (outer_radius - inner_radius) * y[:, 1]
        return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)

    return [
        BezierMacroElement((degree, degree), _bernstein_interpolate(polar, box, (degree, degree)))
        for box in _grid_boxes(nx, ny)
    ]


def extract_patch(patch: SplinePatch, nx: int, ny: int) -> List[BezierMacroElement]:
    """
    Bezier elements of a macro spline patch on an nx x ny uniform element grid.

    The patch must be polynomial on each grid element (breakpoints on the grid),
    in which case interpolation at (q+1)^d nodes recovers its Bernstein form exactly.
    """
    if patch.is_rational:
        raise GeometryError("Macro patches must be polynomial")
    degrees = patch.degrees

    def fn(y: np.ndarray) -> np.ndarray:
        return np.array([eval_patch(patch, point).x for point in y])

    elements = [
        BezierMacroElement(degrees, _bernstein_interpolate(fn, box, degrees))
        for box in _grid_boxes(nx, ny)
    ]
    logger.debug(f"Extracted {len(elements)} Bezier elements of degree {degrees}")
    return elements
