"""
Run orchestration: build the lattice from a validated configuration, solve, and
write the artifacts of a run.
"""
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from config import RunConfig
from geometry.lattice import LatticeModel, build_lattice, glue_reference_cell, load_geometry_file
from geometry.macro import curved_beam, rectangle
from geometry.partition import PRIMAL_PLACEMENT_RULE
from geometry.unit_cells import generate_patches
from mechanics.hyperelastic import MaterialParams
from solvers.newton import NewtonSolver, NewtonTrace
from utils.error_handler import ConfigError, NonConvergenceError, StepFailureError
from utils.export import (
    RESIDUAL_COLUMNS,
    load_displacement_table,
    read_json,
    residual_history_rows,
    write_csv,
    write_json,
    write_vtk,
)

logger = logging.getLogger(__name__)

MASKING_RULE = "Dirichlet rows and columns of every local operator zeroed, unit diagonal"

# per-iteration timings are kept out of trace.json so that it is reproducible
_TIMING_FIELDS = {"assembly_time", "solve_time"}
TRACE_EXCLUDE = {**{f: True for f in _TIMING_FIELDS}, "iterations": {"__all__": _TIMING_FIELDS}}

ARTIFACTS = {
    "vtk": "displacement.vtk",
    "load_displacement": "load_displacement.csv",
    "residual_history": "residual_history.csv",
    "report": "report.json",
    "trace": "trace.json",
    "solution": "displacement.npy",
}


class RunReport(BaseModel):
    """Summary of one run; the numbers the standard-vs-RB comparison is made of."""

    problem: Dict[str, Any]
    solver: str
    n_dofs: int
    n_cells: int
    n_ref: int
    increments: int
    total_newton_iterations: int
    iterations_per_increment: List[int]
    n_principal: List[Optional[int]] = Field(default_factory=list)
    principal: List[List[int]] = Field(default_factory=list)
    primal_level: int = 0
    enrichment_events: List[str] = Field(default_factory=list)
    fallback_direct: bool = False
    halved_increments: List[int] = Field(default_factory=list)
    timing: Dict[str, float]
    memory_bytes: int
    achieved: Dict[str, float]
    transfer_constant: Optional[float] = None
    placement_rule: str = PRIMAL_PLACEMENT_RULE
    masking_rule: str = MASKING_RULE


def problem_signature(config: RunConfig) -> Dict[str, Any]:
    """Configuration parts that define the mechanical problem (everything but solver and output)."""
    return config.model_dump(mode="json", include={"geometry", "material", "bcs", "program", "newton"})


def build_model(config: RunConfig) -> Tuple[LatticeModel, MaterialParams]:
    """Lattice model and material of a run configuration."""
    geo = config.geometry
    if geo.file is not None:
        ref_cell, elements, grid = load_geometry_file(geo.file)
    else:
        params = {"frame": geo.frame, "strut": geo.strut} if geo.generator == "uc1_cross" else {"radius": geo.radius}
        ref_cell = glue_reference_cell(generate_patches(geo.generator, geo.p, geo.n_e, **params))
        macro = geo.macro
        if macro.kind == "rectangle":
            elements = rectangle(geo.nx, geo.ny, macro.width, macro.height)
        else:
            elements = curved_beam(geo.nx, geo.ny, macro.inner_radius, macro.outer_radius, macro.angle_deg)
        grid = (geo.nx, geo.ny)
    model = build_lattice(ref_cell, elements, config.bcs, grid)
    material = MaterialParams(E=config.material.E, nu=config.material.nu)
    return model, material


def _write_history(out: Path, trace: NewtonTrace) -> None:
    iterations = [it.model_dump() for it in trace.iterations]
    write_csv(out / ARTIFACTS["residual_history"], RESIDUAL_COLUMNS, residual_history_rows(iterations))
    header, rows = load_displacement_table([inc.model_dump() for inc in trace.increments])
    write_csv(out / ARTIFACTS["load_displacement"], header, rows)
    write_json(out / ARTIFACTS["trace"], trace.model_dump(mode="json", exclude=TRACE_EXCLUDE))


def make_report(config: RunConfig, model: LatticeModel, trace: NewtonTrace, wall_time: float) -> RunReport:
    finals = [inc.final_residual / inc.initial_residual for inc in trace.increments if inc.initial_residual > 0]
    tangent = [it.tangent_residual for it in trace.iterations]
    transfer = [it.transfer_constant for it in trace.iterations if it.transfer_constant is not None]
    return RunReport(
        problem=problem_signature(config),
        solver=trace.solver,
        n_dofs=model.n_dofs,
        n_cells=model.n_cells,
        n_ref=model.ref_cell.n_ref,
        increments=len(trace.increments),
        total_newton_iterations=trace.total_iterations,
        iterations_per_increment=[inc.iterations for inc in trace.increments],
        n_principal=[it.n_principal for it in trace.iterations],
        principal=[it.principal for it in trace.iterations],
        primal_level=trace.primal_level,
        enrichment_events=list(trace.events),
        fallback_direct=trace.fallback_direct,
        halved_increments=[inc.increment for inc in trace.increments if inc.halved],
        timing={
            "assembly": trace.assembly_time,
            "solve": trace.solve_time,
            "total": wall_time,
        },
        memory_bytes=trace.peak_memory_bytes,
        achieved={
            "newton_relative_residual": max(finals, default=0.0),
            "tangent_relative_residual": max(tangent, default=0.0),
        },
        transfer_constant=max(transfer) if transfer else None,
    )


def run(config: RunConfig, output_dir: Optional[Union[str, Path]] = None) -> RunReport:
    """
    Solve the configured problem and write its artifacts.

    The model is built before the output directory is touched. On non-convergence
    the history written so far is kept and the error is re-raised.
    """
    start = time.perf_counter()
    model, material = build_model(config)
    out = Path(output_dir if output_dir is not None else config.output.directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"Cannot create output directory {out}: {exc}") from exc

    solver = NewtonSolver(model, material, config.newton, config.solver)
    try:
        u, trace = solver.solve(config.program)
    except (NonConvergenceError, StepFailureError):
        _write_history(out, solver.trace)
        logger.error(f"Run aborted; partial history kept in {out}")
        raise

    _write_history(out, trace)
    write_vtk(out / ARTIFACTS["vtk"], model, u, config.output.vtk_samples)
    np.save(out / ARTIFACTS["solution"], u)
    report = make_report(config, model, trace, time.perf_counter() - start)
    write_json(out / ARTIFACTS["report"], report.model_dump(mode="json"))
    logger.info(
        f"Run finished: {report.total_newton_iterations} Newton iterations, "
        f"{report.timing['total']:.2f} s, memory proxy {report.memory_bytes / 2**20:.1f} MiB"
    )
    return report


COMPARED_FIELDS = ("total_newton_iterations", "n_dofs", "n_cells", "timing.total", "timing.assembly", "timing.solve", "memory_bytes")


def _field(report: Dict[str, Any], dotted: str) -> float:
    value: Any = report
    for key in dotted.split("."):
        value = value[key]
    return float(value)


def compare_reports(path_a: Union[str, Path], path_b: Union[str, Path]) -> Dict[str, Any]:
    """
    Side-by-side numbers of two reports of the same problem, with ratios b / a.

    When both run directories hold a saved solution, their relative l2 difference
    is included.
    """
    path_a, path_b = Path(path_a), Path(path_b)
    if path_a.is_dir():
        path_a = path_a / ARTIFACTS["report"]
    if path_b.is_dir():
        path_b = path_b / ARTIFACTS["report"]
    for path in (path_a, path_b):
        if not path.is_file():
            raise ConfigError(f"Report not found: {path}", {"path": str(path)})
    a, b = RunReport.model_validate(read_json(path_a)), RunReport.model_validate(read_json(path_b))
    if a.problem != b.problem:
        raise ConfigError("Reports describe different problems", {"a": str(path_a), "b": str(path_b)})

    da, db = a.model_dump(), b.model_dump()
    rows = []
    for name in COMPARED_FIELDS:
        va, vb = _field(da, name), _field(db, name)
        rows.append({"field": name, "a": va, "b": vb, "ratio": vb / va if va != 0 else (1.0 if vb == 0 else float("inf"))})
    result: Dict[str, Any] = {"a": str(path_a), "b": str(path_b), "solvers": [a.solver, b.solver], "rows": rows}

    sol_a, sol_b = path_a.parent / ARTIFACTS["solution"], path_b.parent / ARTIFACTS["solution"]
    if sol_a.is_file() and sol_b.is_file():
        ua, ub = np.load(sol_a), np.load(sol_b)
        if ua.shape == ub.shape:
            scale = max(float(np.linalg.norm(ua)), 1e-300)
            result["displacement_difference"] = float(np.linalg.norm(ua - ub) / scale)
    return result
