"""
Load-incremented Newton-Raphson with Armijo backtracking.

The residual is always evaluated at full quadrature. The tangent is either the
assembled global matrix (standard path) or the reduced-basis cell operators handed
to the FETI-DP solver (rb path).
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from config import NewtonConfig, ProgramConfig, SolverConfig, SolverKind
from geometry.lattice import LatticeModel
from geometry.partition import DofPartition, partition_dofs
from mechanics.assembly import CellAssembler
from mechanics.hyperelastic import MaterialParams
from mechanics.loads import external_force, mean_face_displacement, reaction_force
from solvers.direct import solve_direct
from solvers.fetidp import LocalOperators, SaddleSystem, build_preconditioner, handle_enrichment, solve_rb
from solvers.rom import build_reduced_basis
from utils.error_handler import (
    EnrichmentExhaustedError,
    InvertedElementError,
    NeedsEnrichment,
    NonConvergenceError,
    StepFailureError,
)

logger = logging.getLogger(__name__)


class IterationRecord(BaseModel):
    increment: int
    attempt: int = 1
    load_factor: float
    iteration: int
    residual_norm: float
    relative_residual: float
    step_length: float
    backtracks: int
    solver: str
    n_principal: Optional[int] = None
    principal: List[int] = Field(default_factory=list)
    outer_iterations: int = 0
    inner_iterations: int = 0
    tangent_residual: float = 0.0
    primal_level: Optional[int] = None
    enrichment_events: int = 0
    transfer_constant: Optional[float] = None
    memory_bytes: int = 0
    assembly_time: float = 0.0
    solve_time: float = 0.0


class IncrementRecord(BaseModel):
    increment: int
    load_factor: float
    iterations: int
    halved: bool = False
    start_norm: float
    initial_residual: float
    final_residual: float
    reaction: Dict[str, List[float]] = Field(default_factory=dict)
    mean_displacement: Dict[str, List[float]] = Field(default_factory=dict)


class NewtonTrace(BaseModel):
    solver: str
    increments: List[IncrementRecord] = Field(default_factory=list)
    iterations: List[IterationRecord] = Field(default_factory=list)
    events: List[str] = Field(default_factory=list)
    primal_level: int = 0
    fallback_direct: bool = False
    peak_memory_bytes: int = 0
    assembly_time: float = 0.0
    solve_time: float = 0.0

    @property
    def total_iterations(self) -> int:
        return sum(inc.iterations for inc in self.increments)


@dataclass
class LineSearchResult:
    alpha: float
    backtracks: int
    residual: np.ndarray
    residual_norm: float


def line_search(
    u: np.ndarray,
    delta_u: np.ndarray,
    residual_fn: Callable[[np.ndarray], np.ndarray],
    settings: NewtonConfig,
    r_norm: Optional[float] = None,
) -> LineSearchResult:
    """
    Armijo backtracking: the smallest m >= 0 with
    ||r(u + beta^m du)|| <= (1 - c beta^m) ||r(u)||.

    Trial states with inverted elements count as failed trials.

    Raises:
        StepFailureError: no admissible step within max_backtracks
    """
    if r_norm is None:
        r_norm = float(np.linalg.norm(residual_fn(u)))
    if r_norm <= 0.0:
        raise ValueError("Line search needs a nonzero residual")
    last = None
    for m in range(settings.max_backtracks + 1):
        alpha = settings.beta**m
        try:
            r = residual_fn(u + alpha * delta_u)
        except InvertedElementError as exc:
            logger.debug(f"Line search trial alpha={alpha:.3e} inverts cell {exc.cell}")
            last = "inverted element"
            continue
        norm = float(np.linalg.norm(r))
        if norm <= (1.0 - settings.armijo_c * alpha) * r_norm:
            return LineSearchResult(alpha, m, r, norm)
        last = f"residual {norm:.3e}"
    raise StepFailureError(
        f"Line search failed after {settings.max_backtracks} backtracks",
        {"last_trial": last, "residual": r_norm},
    )


class NewtonSolver:
    """
    Newton driver over one lattice model.

    Args:
        model: Lattice model
        params: Material parameters
        newton: Newton and line-search settings
        solver: Tangent solver settings
    """

    def __init__(
        self,
        model: LatticeModel,
        params: MaterialParams,
        newton: NewtonConfig,
        solver: SolverConfig,
        assembler: Optional[CellAssembler] = None,
    ):
        self.model = model
        self.newton = newton
        self.solver = solver
        start = time.perf_counter()
        self.assembler = assembler or CellAssembler(model, params, solver.reduced_points)
        self.f_ext = external_force(model, self.assembler)
        self.partition: Optional[DofPartition] = partition_dofs(model) if solver.solver == SolverKind.RB else None
        self.trace = NewtonTrace(solver=solver.solver.value)
        self.trace.assembly_time += time.perf_counter() - start

    @property
    def use_rb(self) -> bool:
        return self.solver.solver == SolverKind.RB and not self.trace.fallback_direct

    def residual(self, u: np.ndarray, factor: float) -> np.ndarray:
        r, _ = self.assembler.global_residual(u, factor * self.f_ext)
        return r

    def _solve_standard(self, u: np.ndarray, r: np.ndarray, info: dict) -> np.ndarray:
        start = time.perf_counter()
        K = self.assembler.global_tangent(u)
        info["assembly_time"] += time.perf_counter() - start
        start = time.perf_counter()
        solution = solve_direct(K, -r)
        info["solve_time"] += time.perf_counter() - start
        info["tangent_residual"] = solution.relative_residual
        info["memory_bytes"] = solution.memory_bytes
        return solution.x

    def _solve_rb(self, u: np.ndarray, r: np.ndarray, info: dict) -> np.ndarray:
        start = time.perf_counter()
        basis = build_reduced_basis(self.assembler, u, self.solver.epsilon)
        info["n_principal"] = basis.n_principal
        info["principal"] = [int(s) for s in basis.principal]
        if self.solver.monitor_transfer:
            exact = self.assembler.tangents(u, range(self.model.n_cells))
            info["transfer_constant"] = basis.transfer_constant(exact)
        operators = LocalOperators.from_basis(basis)
        while True:
            system = SaddleSystem(self.partition, operators, r)
            try:
                precond = build_preconditioner(system, self.solver)
                break
            except NeedsEnrichment as exc:
                try:
                    self.partition = handle_enrichment(self.model, self.partition, exc)
                except EnrichmentExhaustedError as exhausted:
                    message = f"{exhausted.message}; switching to the direct solver"
                    logger.warning(message)
                    self.trace.events.append(message)
                    self.trace.fallback_direct = True
                    info["assembly_time"] += time.perf_counter() - start
                    return self._solve_standard(u, r, info)
                info["enrichment_events"] += 1
                self.trace.primal_level = self.partition.level
                self.trace.events.append(f"primal enrichment to level {self.partition.level} (cells {exc.cells})")
        info["assembly_time"] += time.perf_counter() - start
        du, _, stats = solve_rb(system, precond, self.solver)
        info["solve_time"] += stats.solve_time
        info["outer_iterations"] = stats.outer_iterations
        info["inner_iterations"] = stats.inner_iterations
        info["tangent_residual"] = stats.relative_residual
        info["memory_bytes"] = stats.memory_bytes
        info["primal_level"] = self.partition.level
        return du

    def solve_tangent(self, u: np.ndarray, r: np.ndarray) -> Tuple[np.ndarray, dict]:
        info = {"assembly_time": 0.0, "solve_time": 0.0, "enrichment_events": 0}
        du = self._solve_rb(u, r, info) if self.use_rb else self._solve_standard(u, r, info)
        return du, info

    def _iterate(self, u: np.ndarray, factor: float, increment: int, attempt: int) -> Tuple[np.ndarray, int, float, float]:
        """Newton iterations at a fixed load factor, starting from u with lifted Dirichlet values."""
        model = self.model
        u = u.copy()
        u[model.dirichlet_mask] = factor * model.dirichlet_values[model.dirichlet_mask]
        start = time.perf_counter()
        try:
            r = self.residual(u, factor)
        except InvertedElementError as exc:
            raise StepFailureError(f"Imposed displacement inverts cell {exc.cell}", exc.details) from exc
        self.trace.assembly_time += time.perf_counter() - start
        r0 = float(np.linalg.norm(r))
        if r0 == 0.0:
            return u, 0, 0.0, 0.0
        r_norm = r0
        for it in range(1, self.newton.max_iter + 1):
            du, info = self.solve_tangent(u, r)
            start = time.perf_counter()
            ls = line_search(u, du, lambda v: self.residual(v, factor), self.newton, r_norm)
            info["assembly_time"] += time.perf_counter() - start
            u = u + ls.alpha * du
            r, r_norm = ls.residual, ls.residual_norm
            record = IterationRecord(
                increment=increment,
                attempt=attempt,
                load_factor=factor,
                iteration=it,
                residual_norm=r_norm,
                relative_residual=r_norm / r0,
                step_length=ls.alpha,
                backtracks=ls.backtracks,
                solver="rb" if self.use_rb else "standard",
                **info,
            )
            self.trace.iterations.append(record)
            self.trace.assembly_time += record.assembly_time
            self.trace.solve_time += record.solve_time
            self.trace.peak_memory_bytes = max(self.trace.peak_memory_bytes, record.memory_bytes)
            logger.info(
                f"Increment {increment} iteration {it}: |r|={r_norm:.3e} (rel {r_norm / r0:.3e}), "
                f"alpha={ls.alpha:g}"
                + (f", N_r={record.n_principal}, outer={record.outer_iterations}" if record.n_principal else "")
            )
            if r_norm / r0 <= self.newton.rel_tol:
                return u, it, r0, r_norm
        raise NonConvergenceError(
            f"Newton did not converge in {self.newton.max_iter} iterations at load factor {factor:g}",
            stats=self.trace.model_dump(),
        )

    def _record_increment(self, increment: int, factor: float, u: np.ndarray, its: int, r0: float, r_end: float,
                          start_norm: float, halved: bool) -> None:
        model = self.model
        _, r_full = self.assembler.global_residual(u, factor * self.f_ext)
        reaction = {spec.face.value: reaction_force(model, r_full, spec.face).tolist() for spec in model.bcs.dirichlet}
        faces = [spec.face for spec in model.bcs.dirichlet] + [spec.face for spec in model.bcs.traction]
        mean = {face.value: mean_face_displacement(model, u, face).tolist() for face in faces}
        self.trace.increments.append(
            IncrementRecord(
                increment=increment,
                load_factor=factor,
                iterations=its,
                halved=halved,
                start_norm=start_norm,
                initial_residual=r0,
                final_residual=r_end,
                reaction=reaction,
                mean_displacement=mean,
            )
        )

    def solve(self, program: ProgramConfig, u0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, NewtonTrace]:
        """Run all load increments, warm-starting each from the previous solution."""
        u = np.zeros(self.model.n_dofs) if u0 is None else np.asarray(u0, dtype=float).copy()
        previous = 0.0
        for k, factor in enumerate(program.factors(), start=1):
            start_norm = float(np.linalg.norm(u))
            halved = False
            for attempt in Retrying(
                stop=stop_after_attempt(2), retry=retry_if_exception_type(StepFailureError), reraise=True
            ):
                with attempt:
                    number = attempt.retry_state.attempt_number
                    if number == 1:
                        u_new, its, r0, r_end = self._iterate(u, factor, k, number)
                    else:
                        halved = True
                        middle = 0.5 * (previous + factor)
                        message = f"Increment {k}: step failure, retrying as two halves ({previous:g} -> {middle:g} -> {factor:g})"
                        logger.warning(message)
                        self.trace.events.append(message)
                        u_mid, its_mid, r0, _ = self._iterate(u, middle, k, number)
                        u_new, its, _, r_end = self._iterate(u_mid, factor, k, number)
                        its += its_mid
            u = u_new
            self._record_increment(k, factor, u, its, r0, r_end, start_norm, halved)
            logger.info(f"Increment {k}/{len(program.factors())} converged in {its} iterations (load factor {factor:g})")
            previous = factor
        return u, self.trace


def newton_solve(
    model: LatticeModel,
    params: MaterialParams,
    program: ProgramConfig,
    newton: NewtonConfig,
    solver: SolverConfig,
) -> Tuple[np.ndarray, NewtonTrace]:
    return NewtonSolver(model, params, newton, solver).solve(program)
