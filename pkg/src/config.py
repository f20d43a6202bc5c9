"""Configuration module for the lattice solver."""
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from utils.error_handler import ConfigError

# Load environment variables from .env file
load_dotenv()


class FaceTag(str, Enum):
    """Macro-boundary faces of the rectangular cell grid."""

    LEFT = "left"
    RIGHT = "right"
    BOTTOM = "bottom"
    TOP = "top"


class SolverKind(str, Enum):
    """Linear solver used for every tangent system."""

    STANDARD = "standard"
    RB = "rb"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RectangleMacro(_Strict):
    kind: Literal["rectangle"] = "rectangle"
    width: float = Field(1.0, gt=0.0, description="Physical width of one cell")
    height: float = Field(1.0, gt=0.0, description="Physical height of one cell")


class CurvedBeamMacro(_Strict):
    kind: Literal["curved_beam"] = "curved_beam"
    inner_radius: float = Field(..., gt=0.0)
    outer_radius: float = Field(..., gt=0.0)
    angle_deg: float = Field(90.0, gt=0.0, le=180.0)

    @model_validator(mode="after")
    def _radii_ordered(self) -> "CurvedBeamMacro":
        if self.outer_radius <= self.inner_radius:
            raise ValueError("outer_radius must exceed inner_radius")
        return self


class GeometryConfig(_Strict):
    """Built-in unit cell on a macro grid, or a geometry JSON file."""

    generator: Optional[Literal["uc1_cross", "uc3_hole"]] = "uc1_cross"
    file: Optional[str] = Field(None, description="Geometry JSON (overrides generator)")
    nx: int = Field(1, ge=1)
    ny: int = Field(1, ge=1)
    p: int = Field(2, ge=1, le=5, description="Spline degree of the unit cell")
    n_e: int = Field(4, ge=1, description="Elements per patch direction (h = 1/n_e)")
    frame: float = Field(0.1, gt=0.0, lt=0.5, description="UC1 frame thickness")
    strut: float = Field(0.1, gt=0.0, lt=0.5, description="UC1 strut half-width")
    radius: float = Field(0.3, gt=0.0, lt=0.5, description="UC3 hole radius")
    macro: Union[RectangleMacro, CurvedBeamMacro] = Field(
        default_factory=RectangleMacro, discriminator="kind"
    )

    @model_validator(mode="after")
    def _check_generator(self) -> "GeometryConfig":
        if self.file is None and self.generator is None:
            raise ValueError("either 'generator' or 'file' is required")
        if self.file is None and self.generator == "uc3_hole" and self.p < 2:
            raise ValueError("uc3_hole needs p >= 2 to represent the circular hole exactly")
        return self


class MaterialConfig(_Strict):
    E: float = Field(500.0, gt=0.0, description="Young's modulus [MPa]")
    nu: float = Field(0.4, gt=-1.0, lt=0.5, description="Poisson ratio")


class DirichletBC(_Strict):
    face: FaceTag
    components: List[int] = Field(default_factory=lambda: [0, 1])
    value: List[float] = Field(default_factory=lambda: [0.0, 0.0], description="Target displacement")

    @field_validator("components")
    @classmethod
    def _check_components(cls, value: List[int]) -> List[int]:
        if not value or any(c not in (0, 1, 2) for c in value) or len(set(value)) != len(value):
            raise ValueError(f"invalid components {value}")
        return value


class TractionBC(_Strict):
    face: FaceTag
    traction: List[float] = Field(..., min_length=2, max_length=3, description="Target traction [MPa]")


class BoundaryConfig(_Strict):
    dirichlet: List[DirichletBC] = Field(default_factory=list)
    traction: List[TractionBC] = Field(default_factory=list)
    body_force: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_constrained(self) -> "BoundaryConfig":
        if not self.dirichlet:
            raise ValueError("at least one Dirichlet face is required")
        return self


class ProgramConfig(_Strict):
    increments: int = Field(4, ge=1)
    ramp: Optional[List[float]] = Field(None, description="Explicit load factors")

    @model_validator(mode="after")
    def _check_ramp(self) -> "ProgramConfig":
        if self.ramp is not None:
            if len(self.ramp) != self.increments:
                raise ValueError("ramp length must equal increments")
            prev = 0.0
            for factor in self.ramp:
                if factor <= prev:
                    raise ValueError("ramp factors must be strictly increasing")
                prev = factor
            if abs(self.ramp[-1] - 1.0) > 1e-14:
                raise ValueError("ramp must end at 1")
        return self

    def factors(self) -> List[float]:
        if self.ramp is not None:
            return list(self.ramp)
        return [(k + 1) / self.increments for k in range(self.increments)]


class NewtonConfig(_Strict):
    rel_tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(50, ge=1)
    beta: float = Field(0.5, gt=0.0, lt=1.0)
    armijo_c: float = Field(1e-4, gt=0.0, lt=1.0)
    max_backtracks: int = Field(20, ge=0)


class SolverConfig(_Strict):
    solver: SolverKind = SolverKind.STANDARD
    outer_tol: float = Field(1e-8, gt=0.0)
    inner_tol: float = Field(1e-2, gt=0.0, lt=1.0)
    max_outer: int = Field(500, ge=1)
    max_inner: int = Field(200, ge=1)
    epsilon: float = Field(3e-4, gt=0.0, description="Reduced-basis tolerance")
    reduced_points: int = Field(2, ge=1, description="Snapshot quadrature points per direction")
    monitor_transfer: bool = Field(False, description="Report the reduced-basis Frobenius transfer constant")


class OutputConfig(_Strict):
    directory: str = "results"
    vtk_samples: int = Field(3, ge=2, description="Visualization points per element direction")


class RunConfig(_Strict):
    """Complete description of one simulation run."""

    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    material: MaterialConfig = Field(default_factory=MaterialConfig)
    bcs: BoundaryConfig
    program: ProgramConfig = Field(default_factory=ProgramConfig)
    newton: NewtonConfig = Field(default_factory=NewtonConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


class LatroSettings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_prefix="LATRO_", extra="ignore")

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_file: Optional[str] = None
    log_json: bool = False
    verbosity: Literal["quiet", "normal", "verbose"] = "normal"

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_level(cls, value):
        return value.upper() if isinstance(value, str) else value


def read_config_file(path: Union[str, Path]) -> dict:
    """Parse a TOML or YAML run configuration into a plain mapping."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}", {"path": str(path)})
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        elif suffix in (".yaml", ".yml"):
            with open(path, "r", encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        else:
            raise ConfigError(f"Unsupported config format '{suffix}'", {"path": str(path)})
    except (tomllib.TOMLDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"Cannot parse {path}: {exc}", {"path": str(path)}) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config root of {path} must be a mapping")
    return data


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and fully validate a run configuration. Raises pydantic ValidationError on bad fields."""
    config = RunConfig.model_validate(read_config_file(path))
    if config.geometry.file is not None:
        geometry_file = Path(config.geometry.file)
        if not geometry_file.is_absolute():
            geometry_file = Path(path).parent / geometry_file
        if not geometry_file.is_file():
            raise ConfigError(f"Geometry file not found: {geometry_file}")
        config.geometry.file = os.fspath(geometry_file)
    return config
