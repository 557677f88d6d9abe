"""Coefficient fields and source terms on the fine grid."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import GridHierarchy

__all__ = [
    "CoefficientField",
    "constant_field",
    "laminate_field",
    "checkerboard_field",
    "channels_field",
    "inclusions_field",
    "localized_source",
    "read_field",
    "write_field",
    "make_rng",
]

# stream identifiers for seed splitting: (module, region, index)
STREAM_FIELD = 0
STREAM_SNAPSHOT = 1
STREAM_TEST = 2


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the counter ``key`` under a root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Cell-wise constant positive coefficient.

    Attributes
    ----------
    values : ndarray
        Flat array of length ``Nx * Ny`` in row-major cell order.
    """

    nx_fine: int
    ny_fine: int
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float).ravel()
        if v.size != self.nx_fine * self.ny_fine:
            raise ConfigError(
                f"field has {v.size} values, expected {self.nx_fine}x{self.ny_fine}"
            )
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ConfigError("coefficient values must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "CoefficientField":
        arr = np.asarray(arr, dtype=float)
        return cls(arr.shape[1], arr.shape[0], arr.ravel())

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.ny_fine, self.nx_fine)

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def contrast(self) -> float:
        return self.max / self.min

    def per_triangle(self) -> np.ndarray:
        return np.repeat(self.values, 2)

    def transpose(self) -> "CoefficientField":
        return CoefficientField.from_array(self.as_array().T)

    def scaled(self, c: float) -> "CoefficientField":
        return CoefficientField(self.nx_fine, self.ny_fine, self.values * c)

    def check_grid(self, grid: GridHierarchy) -> None:
        if (self.nx_fine, self.ny_fine) != (grid.Nx, grid.Ny):
            raise ConfigError(
                f"field is {self.nx_fine}x{self.ny_fine} but fine grid is {grid.Nx}x{grid.Ny}"
            )


def _cell_centers(grid: GridHierarchy) -> tuple[np.ndarray, np.ndarray]:
    ci, cj = np.meshgrid(np.arange(grid.Nx), np.arange(grid.Ny))
    return (ci + 0.5) * grid.hx, (cj + 0.5) * grid.hy


def constant_field(grid: GridHierarchy, value: float = 1.0) -> CoefficientField:
    return CoefficientField(grid.Nx, grid.Ny, np.full(grid.n_fine_cells, float(value)))


def laminate_field(
    grid: GridHierarchy, low: float, high: float, period: int, axis: int = 1
) -> CoefficientField:
    """Layers of thickness ``period / 2`` fine cells, varying along ``axis``.

    ``axis=1`` gives horizontal layers (κ depends on x₂ only).  The first
    layer from the origin takes the value ``low``.
    """
    if period < 2 or period % 2:
        raise ConfigError("laminate period must be an even number of fine cells >= 2")
    ci, cj = np.meshgrid(np.arange(grid.Nx), np.arange(grid.Ny))
    idx = cj if axis == 1 else ci
    arr = np.where((idx // (period // 2)) % 2 == 0, float(low), float(high))
    return CoefficientField.from_array(arr)


def checkerboard_field(grid: GridHierarchy, a: float, b: float, period: int) -> CoefficientField:
    """Squares of side ``period / 2`` fine cells alternating ``a`` and ``b``."""
    if period < 2 or period % 2:
        raise ConfigError("checkerboard period must be an even number of fine cells >= 2")
    half = period // 2
    ci, cj = np.meshgrid(np.arange(grid.Nx), np.arange(grid.Ny))
    arr = np.where(((ci // half) + (cj // half)) % 2 == 0, float(a), float(b))
    return CoefficientField.from_array(arr)


def channels_field(
    grid: GridHierarchy,
    contrast: float,
    seed: int,
    n_channels: int = 2,
    width: int = 0,
) -> CoefficientField:
    """Background 1 with ``n_channels`` high-κ paths crossing left to right.

    Each channel is a random walk in x₂ whose vertical step per column is at
    most one cell, so the band (``width`` cells thick) stays connected.
    Channels start in disjoint horizontal strips and never leave them.
    ``width=0`` picks ``max(2, Ny // 25)``.
    """
    if n_channels < 1:
        raise ConfigError("n_channels must be >= 1")
    width = width or max(2, grid.Ny // 25)
    strip = grid.Ny // n_channels
    if strip < width + 2:
        raise ConfigError("fine grid too small for the requested channels")
    rng = make_rng(seed, STREAM_FIELD, 0)
    arr = np.ones((grid.Ny, grid.Nx))
    for c in range(n_channels):
        lo, hi = c * strip + 1, (c + 1) * strip - width - 1
        y = int(rng.integers(lo, hi + 1))
        steps = rng.integers(-1, 2, size=grid.Nx)
        # mostly straight runs keep the channel from filling its strip
        steps[rng.random(grid.Nx) < 0.7] = 0
        for x in range(grid.Nx):
            y = min(max(y + int(steps[x]), lo), hi)
            arr[y : y + width, x] = contrast
    return CoefficientField.from_array(arr)


def inclusions_field(
    grid: GridHierarchy,
    contrast: float,
    seed: int,
    count: int = 10,
    size: int = 0,
) -> CoefficientField:
    """Background 1 with ``count`` square inclusions of value ``contrast``.

    Inclusions are placed at random with a one-cell gap to each other and
    to the domain boundary so each is an isolated high-κ island.
    """
    size = size or max(1, grid.Nx // 20)
    rng = make_rng(seed, STREAM_FIELD, 1)
    arr = np.ones((grid.Ny, grid.Nx))
    taken = np.zeros_like(arr, dtype=bool)
    placed = 0
    for _ in range(count * 200):
        if placed == count:
            break
        x = int(rng.integers(1, grid.Nx - size))
        y = int(rng.integers(1, grid.Ny - size))
        if taken[max(y - 1, 0) : y + size + 1, max(x - 1, 0) : x + size + 1].any():
            continue
        arr[y : y + size, x : x + size] = contrast
        taken[y : y + size, x : x + size] = True
        placed += 1
    if placed == 0 and count > 0:
        raise ConfigError("could not place any inclusion")
    return CoefficientField.from_array(arr)


def localized_source(
    grid: GridHierarchy, center=(0.5, 0.5), radius: float = 0.1, value: float = 1.0
) -> np.ndarray:
    """Nodal source equal to ``value`` within ``radius`` (max-norm) of ``center``, zero elsewhere."""
    if radius <= 0:
        raise ConfigError("source radius must be positive")
    d = np.abs(grid.fine_coords - np.asarray(center, dtype=float)).max(axis=1)
    return np.where(d <= radius + 1e-12, float(value), 0.0)


def read_field(path: str | Path, grid: GridHierarchy | None = None) -> CoefficientField:
    """Read the text format: ``nx_fine ny_fine`` then row-major cell values."""
    try:
        tokens = Path(path).read_text().split()
        nx, ny = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]])
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from exc
    field = CoefficientField(nx, ny, values)
    if grid is not None:
        field.check_grid(grid)
    return field


def write_field(path: str | Path, field: CoefficientField) -> None:
    arr = field.as_array()
    with open(path, "w") as fh:
        fh.write(f"{field.nx_fine} {field.ny_fine}\n")
        for row in arr:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
