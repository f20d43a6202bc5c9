"""Common error types and exit-code mapping."""
import logging
from typing import Any, Dict, Iterable, Optional

from pydantic import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NON_CONVERGENCE = 3


class LatroError(Exception):
    """Base error for lattice solver failures."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class DomainError(LatroError, ValueError):
    """A parametric coordinate lies outside [0, 1]."""


class GeometryError(LatroError):
    """Invalid or non-conforming geometry."""


class AmbiguousGeometryError(GeometryError):
    """Control points are close to coincident but not within the gluing tolerance."""


class ConfigError(LatroError):
    """Invalid run configuration or boundary-condition specification."""


class InvertedElementError(LatroError):
    """det(F) <= 0 at some quadrature point."""

    def __init__(self, message: str, cell: Optional[int] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details)
        self.cell = cell

    def with_cell(self, cell: int) -> "InvertedElementError":
        return InvertedElementError(f"{self.message} (cell {cell})", cell=cell, details=self.details)


class EnrichmentExhaustedError(LatroError):
    """No non-primal edge function is left to promote."""


class DegenerateBasisError(LatroError):
    """The Gram matrix of the selected snapshots is numerically singular."""


class NeedsEnrichment(LatroError):
    """A principal remaining block is not positive definite."""

    def __init__(self, cells: Iterable[int], details: Optional[Dict[str, Any]] = None):
        cells = sorted(int(c) for c in cells)
        super().__init__(f"Remaining block not definite for cells {cells}", details)
        self.cells = cells


class SolverError(LatroError):
    """Linear solver failure (singular factorization, non-finite result)."""


class NonConvergenceError(LatroError):
    """An iterative procedure hit its iteration limit."""

    def __init__(self, message: str, stats: Any = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, details)
        self.stats = stats


class StepFailureError(LatroError):
    """The line search exhausted its backtracking budget."""


def handle_run_error(exc: BaseException) -> int:
    """
    Log a run failure once and translate it to a process exit code.

    Args:
        exc: Exception raised by a CLI command

    Returns:
        Exit code
    """
    if isinstance(exc, (ConfigError, ValidationError)):
        logger.error("Configuration error: %s", str(exc))
        return EXIT_CONFIG
    if isinstance(exc, (NonConvergenceError, StepFailureError)):
        logger.error("Solver did not converge: %s", str(exc))
        return EXIT_NON_CONVERGENCE
    if isinstance(exc, LatroError):
        logger.error(f"{type(exc).__name__}: %s", exc.message)
        return EXIT_FAILURE
    logger.exception("Unexpected error")
    return EXIT_FAILURE
