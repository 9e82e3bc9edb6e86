"""Discretized 1D/2D domains, carrying-capacity landscapes, and quadrature.

Grids are uniform and cell-centered; all integrals are midpoint sums.  The
planner decouples per cell (no diffusion), so this is the natural
discretization: the optimum is resolved pointwise at cell centers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rates
from .params import BioParams


@dataclass(frozen=True)
class Grid:
    dim: int
    extents: tuple[float, ...]
    centers: np.ndarray  # (n_cells, dim)
    cell_measure: float
    shape: tuple[int, ...]

    @property
    def n_cells(self) -> int:
        return self.centers.shape[0]

    @property
    def volume(self) -> float:
        out = 1.0
        for L in self.extents:
            out *= L
        return out

    @property
    def x(self) -> np.ndarray:
        """First coordinate of each cell center (the only one in 1D)."""
        return self.centers[:, 0]


def build_grid(dim: int, extents, resolution) -> Grid:
    """Uniform cell-centered grid over [0, Lx] (x [0, Ly])."""
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    extents = tuple(float(L) for L in np.atleast_1d(extents))
    if len(extents) == 1 and dim == 2:
        extents = (extents[0], extents[0])
    if any(L <= 0 for L in extents):
        raise ValueError("extents must be positive")
    res = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(res) == 1 and dim == 2:
        res = (res[0], res[0])
    if any(r < 2 for r in res):
        raise ValueError("resolution must be at least 2 cells per axis")

    axes = [
        (np.arange(r) + 0.5) * (L / r) for r, L in zip(res[:dim], extents[:dim])
    ]
    if dim == 1:
        centers = axes[0][:, None]
        measure = extents[0] / res[0]
        shape = (res[0],)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        centers = np.column_stack([xx.ravel(), yy.ravel()])
        measure = (extents[0] / res[0]) * (extents[1] / res[1])
        shape = (res[0], res[1])
    return Grid(dim=dim, extents=extents[:dim], centers=centers,
                cell_measure=measure, shape=shape)


@dataclass(frozen=True)
class CarryingCapacity:
    kind: str
    K0: float
    samples: np.ndarray

    def __post_init__(self):
        if np.any(self.samples <= 0.0):
            raise ValueError("carrying capacity must be positive everywhere")


@dataclass
class Field:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.label.startswith("p") and (
            np.any(self.values < -1e-9) or np.any(self.values > 1.0 + 1e-9)
        ):
            raise ValueError(f"{self.label}-field must lie in [0, 1]")
        if self.label.startswith("u") and np.any(self.values < -1e-9):
            raise ValueError(f"{self.label}-field must be nonnegative")


def eval_K(kind: str, K0: float, grid: Grid, table: np.ndarray | None = None) -> CarryingCapacity:
    """Sample one of the built-in landscape families at the cell centers.

    All built-in families integrate to K0 * |domain| (same average capacity),
    so plans across landscapes compare like for like.
    """
    x = grid.centers[:, 0]
    L = grid.extents[0]
    if kind == "constant":
        samples = np.full(grid.n_cells, K0)
    elif kind == "sinusoidal":
        samples = K0 * (1.0 - 0.5 * np.cos(2.0 * np.pi * x / L))
    elif kind == "two-patch":
        samples = np.where(x <= L / 2.0, 1.5 * K0, 0.5 * K0)
    elif kind == "arctan":
        samples = K0 * (1.0 + np.arctan(-10.0 * (x - L / 2.0)) / np.pi)
    elif kind == "separable-2d":
        if grid.dim != 2:
            raise ValueError("separable-2d requires a 2D grid")
        y = grid.centers[:, 1]
        Ly = grid.extents[1]
        samples = K0 * (
            1.0
            - np.cos(2.0 * np.pi * x / L) / 6.0
            - np.cos(2.0 * np.pi * y / Ly) / 3.0
        )
    elif kind == "table":
        if table is None:
            raise ValueError("kind='table' requires per-cell samples")
        samples = np.asarray(table, dtype=float)
        if samples.shape != (grid.n_cells,):
            raise ValueError(
                f"table has {samples.shape[0]} values for {grid.n_cells} cells"
            )
    else:
        raise ValueError(f"unknown carrying-capacity kind {kind!r}")
    return CarryingCapacity(kind=kind, K0=K0, samples=samples)


def load_K_csv(path, grid: Grid, K0: float | None = None) -> CarryingCapacity:
    """Read per-cell K from a two-column CSV (cell_index, K); header required."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip().lower() for h in header[:2]] != ["cell_index", "k"]:
            raise ValueError("expected header 'cell_index,K'")
        values = np.full(grid.n_cells, np.nan)
        for row in reader:
            values[int(row[0])] = float(row[1])
    if np.any(np.isnan(values)):
        raise ValueError("CSV does not cover every cell")
    if np.any(values <= 0.0):
        raise ValueError("K must be positive on every cell")
    mean = values.mean()
    return CarryingCapacity(kind="table", K0=K0 if K0 is not None else mean,
                            samples=values)


def integrate(values, grid: Grid) -> float:
    """Midpoint quadrature of a per-cell field."""
    values = values.values if isinstance(values, Field) else np.asarray(values)
    if values.shape[0] != grid.n_cells:
        raise ValueError("field length does not match grid")
    return float(values.sum() * grid.cell_measure)


def budget_integral(p0, K: CarryingCapacity, grid: Grid, params: BioParams) -> float:
    """Released mosquitoes implied by an initial-proportion field: sum K G(p0) dx."""
    p0 = p0.values if isinstance(p0, Field) else np.asarray(p0)
    if p0.shape[0] != grid.n_cells:
        raise ValueError("field length does not match grid")
    return float((K.samples * rates.G_antideriv(p0, params)).sum() * grid.cell_measure)
