"""Run artifacts: VTK displacement field, CSV histories and JSON reports."""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from geometry.lattice import LatticeModel
from mechanics.hyperelastic import hencky_strain

logger = logging.getLogger(__name__)

VTK_QUAD = 9

PathLike = Union[str, Path]


def _sample_cell(model: LatticeModel, u: np.ndarray, cell: int, samples: int):
    """Physical points, displacements and deformation gradients on a samples^d lattice of every element of one cell."""
    d = model.dim
    U = u.reshape(-1, d)
    macro = model.macro_elements[cell]
    ref = model.ref_cell
    t = np.linspace(0.0, 1.0, samples)
    blocks = []
    for k, patch in enumerate(ref.patches):
        spans = [kv.breakpoints for kv in patch.knot_vectors]
        for element in np.ndindex(*[s.size - 1 for s in spans]):
            axes = [spans[j][element[j]] + t * (spans[j][element[j] + 1] - spans[j][element[j]]) for j in range(d)]
            grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="xy")], axis=1)
            micro, micro_J, disp, disp_grad = [], [], [], []
            for theta in grid:
                idx, R, dR = patch.basis(theta)
                points = patch.control_points[idx]
                Ue = U[model.cell_to_global[cell, ref.glue_map[k][idx]]]
                micro.append(R @ points)
                micro_J.append(points.T @ dR)
                disp.append(R @ Ue)
                disp_grad.append(Ue.T @ dR)
            x, J_B = macro.evaluate(np.clip(np.asarray(micro), 0.0, 1.0))
            J_geom = J_B @ np.asarray(micro_J)
            F = np.eye(d) + np.asarray(disp_grad) @ np.linalg.inv(J_geom)
            blocks.append((x, np.asarray(disp), F))
    return blocks


def _sample_strain(F: np.ndarray) -> np.ndarray:
    """Hencky strain per sample; NaN where the sampled map is inverted."""
    strain = np.full(F.shape, np.nan)
    valid = np.linalg.det(F) > 0.0
    if np.any(valid):
        strain[valid] = hencky_strain(F[valid])
    if not np.all(valid):
        logger.warning(f"{int(np.sum(~valid))} VTK samples with non-positive det F get NaN strain")
    return strain


def write_vtk(path: PathLike, model: LatticeModel, u: np.ndarray, samples: int = 3) -> None:
    """Legacy ASCII unstructured grid of the displacement and Hencky strain, sampled per element."""
    if model.dim != 2:
        raise ValueError("VTK export supports two-dimensional lattices")
    points: List[np.ndarray] = []
    displacements: List[np.ndarray] = []
    gradients: List[np.ndarray] = []
    quads: List[List[int]] = []
    owner: List[int] = []
    offset = 0
    n = samples
    for cell in range(model.n_cells):
        for x, disp, F in _sample_cell(model, u, cell, samples):
            points.append(x)
            displacements.append(disp)
            gradients.append(F)
            for j in range(n - 1):
                for i in range(n - 1):
                    a = offset + j * n + i
                    quads.append([a, a + 1, a + n + 1, a + n])
                    owner.append(cell)
            offset += x.shape[0]
    P = np.vstack(points)
    D = np.vstack(displacements)
    E = _sample_strain(np.concatenate(gradients))

    lines = [
        "# vtk DataFile Version 3.0",
        "latro displacement field",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {P.shape[0]} double",
    ]
    lines += [f"{p[0]:.12e} {p[1]:.12e} 0.0" for p in P]
    lines.append(f"CELLS {len(quads)} {5 * len(quads)}")
    lines += ["4 " + " ".join(str(v) for v in q) for q in quads]
    lines.append(f"CELL_TYPES {len(quads)}")
    lines += [str(VTK_QUAD)] * len(quads)
    lines.append(f"CELL_DATA {len(quads)}")
    lines += ["SCALARS lattice_cell int 1", "LOOKUP_TABLE default"]
    lines += [str(c) for c in owner]
    lines.append(f"POINT_DATA {P.shape[0]}")
    lines.append("VECTORS displacement double")
    lines += [f"{v[0]:.12e} {v[1]:.12e} 0.0" for v in D]
    # plane strain: the out-of-plane row and column stay zero
    lines.append("TENSORS hencky_strain double")
    lines += [f"{e[0, 0]:.12e} {e[0, 1]:.12e} 0.0 {e[1, 0]:.12e} {e[1, 1]:.12e} 0.0 0.0 0.0 0.0" for e in E]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {path}: {P.shape[0]} points, {len(quads)} quads")


def write_csv(path: PathLike, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_value(v) for v in row])


def _csv_value(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


def load_displacement_table(increments: Sequence[Dict[str, Any]]):
    """Header and rows of the per-increment reaction / mean displacement table."""
    if not increments:
        return ["increment", "load_factor"], []
    reaction_faces = sorted(increments[0]["reaction"])
    mean_faces = sorted(increments[0]["mean_displacement"])
    header = ["increment", "load_factor"]
    header += [f"{face}_u{c}" for face in mean_faces for c in range(len(increments[0]["mean_displacement"][face]))]
    header += [f"{face}_reaction{c}" for face in reaction_faces for c in range(len(increments[0]["reaction"][face]))]
    rows = []
    for inc in increments:
        row = [inc["increment"], inc["load_factor"]]
        row += [v for face in mean_faces for v in inc["mean_displacement"][face]]
        row += [v for face in reaction_faces for v in inc["reaction"][face]]
        rows.append(row)
    return header, rows


RESIDUAL_COLUMNS = (
    "increment",
    "attempt",
    "iteration",
    "residual_norm",
    "relative_residual",
    "step_length",
    "n_principal",
    "outer_iterations",
    "inner_iterations",
)


def residual_history_rows(iterations: Sequence[Dict[str, Any]]) -> List[List[Any]]:
    return [["" if it.get(c) is None else it.get(c) for c in RESIDUAL_COLUMNS] for it in iterations]


def write_json(path: PathLike, payload: Dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
