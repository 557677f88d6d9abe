"""Experiment configuration: validated before any solve, unknown keys rejected."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .fields import (
    CoefficientField,
    channels_field,
    checkerboard_field,
    constant_field,
    inclusions_field,
    laminate_field,
    localized_source,
    read_field,
)
from .gmsfem import SNAPSHOT_KINDS
from .grid import GridHierarchy, build_grid

__all__ = [
    "ExperimentConfig",
    "load_config",
    "config_hash",
    "generate_field",
    "source_values",
    "cell_source_values",
    "boundary_function",
]

class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Model):
    nx: int = Field(10, ge=1, le=4096)
    ny: int = Field(10, ge=1, le=4096)
    refine: int = Field(10, ge=1, le=4096)


class FieldConfig(_Model):
    kind: Literal["constant", "laminate", "checkerboard", "channels", "inclusions", "file"] = "channels"
    value: float = Field(1.0, gt=0)
    contrast: float = Field(1e4, gt=0)
    low: float = Field(1.0, gt=0)
    high: float = Field(100.0, gt=0)
    period: int = Field(2, ge=2)
    axis: Literal[0, 1] = 1
    n_channels: int = Field(2, ge=1)
    width: int = Field(0, ge=0)
    count: int = Field(10, ge=0)
    size: int = Field(0, ge=0)
    seed: Optional[int] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "file" and not self.path:
            raise ValueError("field kind 'file' needs a path")
        return self


class SourceConfig(_Model):
    """``constant`` (value everywhere) or ``localized`` (value on a max-norm ball)."""

    kind: Literal["constant", "localized"] = "constant"
    value: float = 1.0
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = Field(0.1, gt=0)


class BoundaryConfig(_Model):
    """Dirichlet data ``a + b·x₁ + c·x₂``."""

    coefficients: tuple[float, float, float] = (0.0, 0.0, 0.0)


class HomogenizeOptions(_Model):
    layers: list[int] = Field(default_factory=lambda: [0])
    per: Literal["block", "triangle"] = "block"


class MsfemOptions(_Model):
    variants: list[Literal["linear-bc", "oversampled"]] = Field(default_factory=lambda: ["linear-bc"])
    layers: Optional[int] = Field(None, ge=1)


class GmsfemOptions(_Model):
    snapshots: str = "harmonic"
    counts: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    layers: Optional[int] = Field(None, ge=0)
    count: Optional[int] = Field(None, ge=1)
    pou: Literal["ms", "linear"] = "ms"
    weight: Literal["ms", "linear"] = "ms"
    save_offline: bool = False
    dump_basis: bool = False

    @field_validator("snapshots")
    @classmethod
    def _kind(cls, v):
        if v not in SNAPSHOT_KINDS:
            raise ValueError(f"snapshot kind must be one of {SNAPSHOT_KINDS}")
        return v

    @field_validator("counts")
    @classmethod
    def _counts(cls, v):
        if not v or min(v) < 1:
            raise ValueError("counts must be a nonempty list of positive integers")
        return v


class AdaptOptions(_Model):
    initial: int = Field(1, ge=1)
    theta: float = Field(0.7, gt=0, le=1)
    tol: float = Field(0.0, ge=0)
    max_dof: Optional[int] = Field(None, ge=1)
    max_iter: int = Field(50, ge=0)
    increment: int = Field(1, ge=1)
    uniform: bool = True
    # also run the online loop from the same start and write its history
    compare_online: bool = False


class OnlineOptions(_Model):
    initial: int = Field(1, ge=1)
    theta: float = Field(0.7, gt=0, le=1)
    tol: float = Field(0.0, ge=0)
    max_iter: int = Field(3, ge=0)
    select: Literal["nonoverlap", "all"] = "nonoverlap"
    limit: Optional[int] = Field(None, ge=1)


class MixedOptions(_Model):
    counts: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    boundary: Literal["pressure", "flux"] = "pressure"
    # outward normal velocity on the left, right, bottom, top sides (flux boundary)
    flux: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    export_velocity: bool = True


class DgOptions(_Model):
    counts: list[Union[int, Literal["full"]]] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    layers: Optional[int] = Field(None, ge=0)
    gamma: Optional[float] = Field(None, gt=0)


class FemOptions(_Model):
    """Polynomial baseline: P1 hats on coarse grids with these block counts along x₁."""

    coarse: list[int] = Field(default_factory=list)


class OutputConfig(_Model):
    dir: str = "out"
    write_field: bool = True


class ExperimentConfig(_Model):
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1, le=256)
    grid: GridConfig = Field(default_factory=GridConfig)
    field: FieldConfig = Field(default_factory=FieldConfig)
    source: SourceConfig = Field(default_factory=SourceConfig)
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    homogenize: HomogenizeOptions = Field(default_factory=HomogenizeOptions)
    msfem: MsfemOptions = Field(default_factory=MsfemOptions)
    gmsfem: GmsfemOptions = Field(default_factory=GmsfemOptions)
    adapt: AdaptOptions = Field(default_factory=AdaptOptions)
    online: OnlineOptions = Field(default_factory=OnlineOptions)
    mixed: MixedOptions = Field(default_factory=MixedOptions)
    dg: DgOptions = Field(default_factory=DgOptions)
    fem: FemOptions = Field(default_factory=FemOptions)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @property
    def field_seed(self) -> int:
        return self.seed if self.field.seed is None else self.field.seed

    def make_grid(self) -> GridHierarchy:
        return build_grid(self.grid.nx, self.grid.ny, self.grid.refine)


def _parse(data, origin: str) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML or JSON config (JSON is valid YAML) and apply top-level overrides."""
    data = {}
    origin = "defaults"
    if path is not None:
        origin = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML/JSON: {exc}") from exc
    if overrides:
        data = dict(data or {})
        data.update({k: v for k, v in overrides.items() if v is not None})
    return _parse(data, origin)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the validated config, without output location and thread count."""
    data = cfg.model_dump(mode="json")
    # where results go and how many workers compute them do not change them
    data.pop("threads")
    data["output"].pop("dir")
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def generate_field(cfg: ExperimentConfig, grid: GridHierarchy) -> CoefficientField:
    """Coefficient field from the config; deterministic for a given seed."""
    fc = cfg.field
    seed = cfg.field_seed
    if fc.kind == "constant":
        return constant_field(grid, fc.value)
    if fc.kind == "laminate":
        return laminate_field(grid, fc.low, fc.high, fc.period, fc.axis)
    if fc.kind == "checkerboard":
        return checkerboard_field(grid, fc.low, fc.high, fc.period)
    if fc.kind == "channels":
        return channels_field(grid, fc.contrast, seed, fc.n_channels, fc.width)
    if fc.kind == "inclusions":
        return inclusions_field(grid, fc.contrast, seed, fc.count, fc.size)
    return read_field(fc.path, grid)


def source_values(cfg: ExperimentConfig, grid: GridHierarchy):
    """Nodal source (or scalar) for the conforming solvers."""
    sc = cfg.source
    if sc.kind == "constant":
        return float(sc.value)
    return localized_source(grid, sc.center, sc.radius, sc.value)


def cell_source_values(cfg: ExperimentConfig, grid: GridHierarchy):
    """Per-fine-cell source density for the mixed solver."""
    sc = cfg.source
    if sc.kind == "constant":
        return float(sc.value)
    cx = (np.arange(grid.Nx) + 0.5) * grid.hx
    cy = (np.arange(grid.Ny) + 0.5) * grid.hy
    X, Y = np.meshgrid(cx, cy)
    d = np.maximum(np.abs(X - sc.center[0]), np.abs(Y - sc.center[1]))
    return np.where(d <= sc.radius + 1e-12, sc.value, 0.0).ravel()


def boundary_function(cfg: ExperimentConfig):
    """Dirichlet data as a scalar or a callable ``g(x₁, x₂)``."""
    a, b, c = cfg.boundary.coefficients
    if b == 0.0 and c == 0.0:
        return float(a)
    return lambda x, y: a + b * x + c * y
