"""
Built-in reference unit cells.

Each cell is described by coarse Bezier patches over the unit square and refined
to degree p with n_e uniform elements per direction. Refinement interpolates the
homogeneous coordinates at the Greville abscissae of the target space, which is
exact because the coarse map already lies in that space.
"""
import logging
import math
from typing import Callable, Dict, List, Sequence

import numpy as np

from geometry.splines import KnotVector, SplinePatch, eval_basis, eval_patch
from utils.error_handler import GeometryError

logger = logging.getLogger(__name__)


def _collocation(kv: KnotVector, points: np.ndarray) -> np.ndarray:
    matrix = np.zeros((points.size, kv.n_basis))
    for row, xi in enumerate(points):
        first, values = eval_basis(kv, float(xi), 0)
        matrix[row, first: first + kv.degree + 1] = values[0]
    return matrix


def refine_patch(coarse: SplinePatch, degree: int, n_elements: int) -> SplinePatch:
    """Represent ``coarse`` exactly in the uniform degree-``degree`` space with ``n_elements`` spans."""
    if any(p > degree for p in coarse.degrees):
        raise GeometryError(f"Cannot lower degree {coarse.degrees} to {degree}")
    dim = coarse.dim
    homogeneous = SplinePatch(
        coarse.knot_vectors,
        np.hstack([coarse.control_points * coarse.weights[:, None], coarse.weights[:, None]]),
    )
    kvs = tuple(KnotVector.uniform(degree, n_elements) for _ in range(dim))
    grevilles = [kv.greville() for kv in kvs]
    shape = tuple(kv.n_basis for kv in kvs)

    # samples[i_{d-1}, ..., i_0, :] so that C-order flattening runs i0 fastest
    samples = np.empty(shape[::-1] + (coarse.space_dim + 1,))
    for flat in range(int(np.prod(shape))):
        multi = np.unravel_index(flat, shape[::-1])
        theta = [grevilles[j][multi[dim - 1 - j]] for j in range(dim)]
        samples[multi] = eval_patch(homogeneous, theta).x

    for j, kv in enumerate(kvs):
        axis = dim - 1 - j
        matrix = _collocation(kv, grevilles[j])
        moved = np.moveaxis(samples, axis, 0)
        solved = np.linalg.solve(matrix, moved.reshape(moved.shape[0], -1)).reshape(moved.shape)
        samples = np.moveaxis(solved, 0, axis)

    flat_hom = samples.reshape(-1, coarse.space_dim + 1)
    weights = flat_hom[:, -1]
    points = flat_hom[:, :-1] / weights[:, None]
    if not coarse.is_rational:
        weights = np.ones_like(weights)
    return SplinePatch(kvs, points, weights)


def _quad(vertices: Sequence[Sequence[float]]) -> SplinePatch:
    """Bilinear patch through four vertices, reordered counter-clockwise if needed."""
    v = np.asarray(vertices, dtype=float)
    area = 0.5 * sum(v[i, 0] * v[(i + 1) % 4, 1] - v[(i + 1) % 4, 0] * v[i, 1] for i in range(4))
    if abs(area) < 1e-14:
        raise GeometryError("Degenerate quadrilateral patch", {"vertices": v.tolist()})
    if area < 0.0:
        v = v[[0, 3, 2, 1]]
    kv = KnotVector.bezier(1)
    return SplinePatch((kv, kv), v[[0, 1, 3, 2]])


def uc1_cross_patches(frame: float = 0.1, strut: float = 0.1) -> List[SplinePatch]:
    """
    Coarse patches of the cross cell: a square frame of thickness ``frame`` with two
    diagonal struts of half-width ``strut`` meeting in a central diamond (24 quads).
    """
    t = frame
    root2 = math.sqrt(2.0)
    s = t + strut * root2
    m = 0.5 * (s + t)
    b = strut / root2
    if not (s < 0.5 and m < 0.5 - b):
        raise GeometryError(
            "Frame and strut too wide for the cross cell",
            {"frame": frame, "strut": strut},
        )
    center = (0.5, 0.5)
    vertex = {"b": (0.5, 0.5 - 2 * b), "r": (0.5 + 2 * b, 0.5), "t": (0.5, 0.5 + 2 * b), "l": (0.5 - 2 * b, 0.5)}
    mid = {"ll": (0.5 - b, 0.5 - b), "lr": (0.5 + b, 0.5 - b), "ur": (0.5 + b, 0.5 + b), "ul": (0.5 - b, 0.5 + b)}

    quads = [
        [center, mid["ll"], vertex["b"], mid["lr"]],
        [center, mid["lr"], vertex["r"], mid["ur"]],
        [center, mid["ur"], vertex["t"], mid["ul"]],
        [center, mid["ul"], vertex["l"], mid["ll"]],
        [(s, 0.0), (1 - s, 0.0), (1 - s, t), (s, t)],
        [(1 - t, s), (1.0, s), (1.0, 1 - s), (1 - t, 1 - s)],
        [(s, 1 - t), (1 - s, 1 - t), (1 - s, 1.0), (s, 1.0)],
        [(0.0, s), (t, s), (t, 1 - s), (0.0, 1 - s)],
    ]
    lower_left = [
        [(0.0, 0.0), (s, 0.0), (s, t), (m, m)],
        [(0.0, 0.0), (m, m), (t, s), (0.0, s)],
        [(s, t), vertex["b"], mid["ll"], (m, m)],
        [(m, m), mid["ll"], vertex["l"], (t, s)],
    ]
    reflections: List[Callable[[float, float], tuple]] = [
        lambda x, y: (x, y),
        lambda x, y: (1.0 - x, y),
        lambda x, y: (x, 1.0 - y),
        lambda x, y: (1.0 - x, 1.0 - y),
    ]
    for reflect in reflections:
        for quad in lower_left:
            quads.append([reflect(*p) for p in quad])
    return [_quad(q) for q in quads]


def uc3_hole_patches(radius: float = 0.3) -> List[SplinePatch]:
    """Coarse rational patches of the unit square with a centred circular hole (4 patches)."""
    if not 0.0 < radius < 0.5:
        raise GeometryError(f"Hole radius must lie in (0, 0.5), got {radius}")
    w = math.sqrt(2.0) / 2.0
    c = np.array([0.5, 0.5])
    kv2 = KnotVector.bezier(2)
    kv1 = KnotVector.bezier(1)
    base_side = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    angles = np.deg2rad([225.0, 270.0, 315.0])
    base_arc = c + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    base_arc[1] = c + radius * math.sqrt(2.0) * np.array([0.0, -1.0])

    patches = []
    for quarter in range(4):
        phi = quarter * np.pi / 2.0
        rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        side = (base_side - c) @ rot.T + c
        arc = (base_arc - c) @ rot.T + c
        points = np.vstack([side, arc])
        # snap rounding noise so that shared corners coincide exactly
        points[np.abs(points) < 1e-15] = 0.0
        points[np.abs(points - 1.0) < 1e-15] = 1.0
        weights = np.array([1.0, w, 1.0, 1.0, w, 1.0])
        patches.append(SplinePatch((kv2, kv1), points, weights))
    return patches


def _build(coarse: List[SplinePatch], p: int, n_e: int) -> List[SplinePatch]:
    return [refine_patch(patch, p, n_e) for patch in coarse]


def uc1_cross(p: int = 2, n_e: int = 4, frame: float = 0.1, strut: float = 0.1) -> List[SplinePatch]:
    return _build(uc1_cross_patches(frame, strut), p, n_e)


def uc3_hole(p: int = 2, n_e: int = 4, radius: float = 0.3) -> List[SplinePatch]:
    if p < 2:
        raise GeometryError("The hole cell needs p >= 2 for an exact circle")
    return _build(uc3_hole_patches(radius), p, n_e)


GENERATORS: Dict[str, Callable[..., List[SplinePatch]]] = {
    "uc1_cross": uc1_cross,
    "uc3_hole": uc3_hole,
}


def generate_patches(name: str, p: int, n_e: int, **params) -> List[SplinePatch]:
    """Refined patches of a built-in cell; ``params`` are the generator's shape parameters."""
    try:
        generator = GENERATORS[name]
    except KeyError:
        raise GeometryError(f"Unknown unit cell generator '{name}'") from None
    logger.debug(f"Generating {name} cell with p={p}, n_e={n_e}, params={params}")
    return generator(p=p, n_e=n_e, **params)
