"""Builders for small lattice models used across the test suite."""
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import BoundaryConfig, DirichletBC, RunConfig, TractionBC
from geometry.lattice import LatticeModel, build_lattice, glue_reference_cell
from geometry.macro import rectangle
from geometry.unit_cells import generate_patches

CLAMPED_LEFT = {"dirichlet": [{"face": "left", "components": [0, 1], "value": [0.0, 0.0]}]}


def make_bcs(
    dirichlet: Optional[List[Dict]] = None,
    traction: Optional[List[Dict]] = None,
    body_force: Optional[Sequence[float]] = None,
) -> BoundaryConfig:
    return BoundaryConfig(
        dirichlet=[DirichletBC(**d) for d in (dirichlet if dirichlet is not None else CLAMPED_LEFT["dirichlet"])],
        traction=[TractionBC(**t) for t in (traction or [])],
        body_force=list(body_force) if body_force is not None else None,
    )


def make_cell(generator: str = "uc1_cross", p: int = 1, n_e: int = 1, **params):
    return glue_reference_cell(generate_patches(generator, p, n_e, **params))


def make_lattice(
    nx: int = 2,
    ny: int = 2,
    generator: str = "uc1_cross",
    p: int = 1,
    n_e: int = 1,
    bcs: Optional[BoundaryConfig] = None,
    width: float = 1.0,
    height: float = 1.0,
    **params,
) -> LatticeModel:
    ref = make_cell(generator, p, n_e, **params)
    return build_lattice(ref, rectangle(nx, ny, width, height), bcs or make_bcs(), (nx, ny))


def run_config(**sections) -> RunConfig:
    """Small valid run configuration; keyword sections override the defaults."""
    payload = {
        "geometry": {"generator": "uc1_cross", "nx": 2, "ny": 1, "p": 1, "n_e": 1},
        "bcs": {
            "dirichlet": [{"face": "left", "components": [0, 1], "value": [0.0, 0.0]}],
            "traction": [{"face": "right", "traction": [0.0, -0.5]}],
        },
        "program": {"increments": 2},
        "solver": {"solver": "standard"},
    }
    payload.update(sections)
    return RunConfig.model_validate(payload)


def affine_field(model: LatticeModel, gradient: Sequence[Sequence[float]]) -> np.ndarray:
    """Global displacement u(X) = H X interpolated at the control points (exact for affine maps)."""
    H = np.asarray(gradient, dtype=float)
    d = model.dim
    u = np.zeros(model.n_dofs)
    for cell in range(model.n_cells):
        X, _ = model.macro_elements[cell].evaluate(model.ref_cell.ref_points)
        functions = model.cell_to_global[cell]
        u.reshape(-1, d)[functions] = X @ H.T
    return u
