"""Uniform grids on a box or torus, grid functions, balls and counting.

Cell ``i`` has lattice coordinates ``np.unravel_index(i, (N,) * d)`` and its
center sits at ``coords * h`` with ``h = L / N``; all centers lie in
``[0, L)^d``.  Ball membership is the strict inequality
``|center - ball.center| < radius`` on cell centers, evaluated with a tiny
guard band so that centers lying exactly on the sphere are excluded.
Measures are always integer counts times ``h**d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import ndimage
from scipy.special import gamma

__all__ = [
    "Grid",
    "GridFunction",
    "Ball",
    "GridError",
    "unit_ball_volume",
    "distance",
    "ball_cells",
    "ball_mask",
    "mask_ball_count",
    "ball_counts_at_cells",
    "lattice_stencil",
    "stencil_size",
]

# Relative guard band (in units of h**2) that turns "on the sphere" into "outside".
_BOUNDARY_GUARD = 1e-9


class GridError(ValueError):
    """Raised for invalid grid inputs (bad indices, shape mismatches)."""


def unit_ball_volume(d: int) -> float:
    """Lebesgue measure of the unit ball in R^d."""
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


@dataclass(frozen=True)
class Grid:
    dim: int
    cells_per_axis: int
    box_length: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or not 1 <= self.dim <= 3:
            raise GridError(f"dim must be 1, 2 or 3, got {self.dim!r}")
        if not isinstance(self.cells_per_axis, (int, np.integer)) or self.cells_per_axis < 2:
            raise GridError(f"cells_per_axis must be an integer >= 2, got {self.cells_per_axis!r}")
        if not (self.box_length > 0 and math.isfinite(self.box_length)):
            raise GridError(f"box_length must be positive, got {self.box_length!r}")

    @property
    def spacing(self) -> float:
        return self.box_length / self.cells_per_axis

    @property
    def shape(self) -> tuple:
        return (self.cells_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.cells_per_axis ** self.dim

    @property
    def cell_measure(self) -> float:
        return self.spacing ** self.dim

    @cached_property
    def lattice(self) -> np.ndarray:
        """Integer lattice coordinates, shape ``(size, dim)``."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return np.ascontiguousarray(idx, dtype=np.int64)

    @cached_property
    def centers(self) -> np.ndarray:
        return self.lattice * self.spacing

    def check_index(self, i) -> int:
        i = int(i)
        if not 0 <= i < self.size:
            raise GridError(f"cell index {i} out of range for grid with {self.size} cells")
        return i

    def index_of(self, coords) -> int:
        """Flat index of the cell with lattice coordinates ``coords``."""
        c = np.asarray(coords, dtype=np.int64)
        if self.periodic:
            c = c % self.cells_per_axis
        return int(np.ravel_multi_index(tuple(c), self.shape))

    def nearest_cell(self, point) -> int:
        p = np.asarray(point, dtype=float) / self.spacing
        c = np.rint(p).astype(np.int64)
        if not self.periodic:
            c = np.clip(c, 0, self.cells_per_axis - 1)
        return self.index_of(c)

    def offsets_from(self, i) -> np.ndarray:
        """Signed lattice offsets ``x_j - x_i`` for every cell j, shape ``(size, dim)``.

        On a torus the minimal image is taken with components in ``(-N/2, N/2]``.
        """
        i = self.check_index(i)
        off = self.lattice - self.lattice[i]
        if self.periodic:
            off = wrap_offsets(off, self.cells_per_axis)
        return off

    def to_config(self) -> dict:
        return {
            "dim": int(self.dim),
            "cells_per_axis": int(self.cells_per_axis),
            "box_length": float(self.box_length),
            "periodic": bool(self.periodic),
        }

    @classmethod
    def from_config(cls, cfg) -> "Grid":
        return cls(
            dim=cfg["dim"],
            cells_per_axis=cfg["cells_per_axis"],
            box_length=float(cfg.get("box_length", 1.0)),
            periodic=bool(cfg.get("periodic", True)),
        )


def wrap_offsets(off, n):
    """Map integer offsets to the minimal image with components in (-n/2, n/2]."""
    off = np.mod(off, n)
    return np.where(off > n / 2, off - n, off)


@lru_cache(maxsize=8)
def pair_offsets(grid: Grid) -> np.ndarray:
    """Signed minimal-image offsets ``x_j - x_i`` for all pairs, shape ``(n, n, d)``."""
    lat = grid.lattice.astype(np.int32)
    off = lat[None, :, :] - lat[:, None, :]
    if grid.periodic:
        off = wrap_offsets(off, grid.cells_per_axis).astype(np.int32)
    off.setflags(write=False)
    return off


@lru_cache(maxsize=8)
def lattice_dist2(grid: Grid) -> np.ndarray:
    """Squared pair distances in lattice units (exact integers), shape ``(n, n)``."""
    off = pair_offsets(grid).astype(np.int64)
    d2 = np.einsum("ijk,ijk->ij", off, off)
    d2.setflags(write=False)
    return d2


@lru_cache(maxsize=8)
def distance_matrix(grid: Grid) -> np.ndarray:
    dist = np.sqrt(lattice_dist2(grid).astype(float)) * grid.spacing
    dist.setflags(write=False)
    return dist


def distance(grid: Grid, i, j) -> float:
    """Euclidean distance between two cell centers (minimal image on a torus)."""
    i = grid.check_index(i)
    j = grid.check_index(j)
    off = grid.lattice[j] - grid.lattice[i]
    if grid.periodic:
        off = wrap_offsets(off, grid.cells_per_axis)
    return float(np.sqrt(np.dot(off, off))) * grid.spacing


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise GridError(f"ball radius must be positive, got {self.radius!r}")

    def scaled(self, factor: float) -> "Ball":
        """The concentric ball ``factor * B``."""
        return Ball(self.center, self.radius * factor)

    @classmethod
    def at_cell(cls, grid: Grid, i, radius: float) -> "Ball":
        return cls(tuple(grid.centers[grid.check_index(i)]), radius)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.shape[0] != self.grid.size:
            raise GridError(f"grid function has {v.shape[0]} values, grid has {self.grid.size} cells")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        self.values = v

    @classmethod
    def from_callable(cls, grid: Grid, f) -> "GridFunction":
        return cls(grid, np.asarray(f(grid.centers), dtype=float))

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise GridError("grid functions live on different grids")
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)


def _ball_dist2(grid: Grid, ball: Ball) -> np.ndarray:
    c = np.asarray(ball.center, dtype=float)
    if c.shape != (grid.dim,):
        raise GridError(f"ball center has dimension {c.shape[0]}, grid has {grid.dim}")
    diff = grid.centers - c
    if grid.periodic:
        L = grid.box_length
        diff = diff - L * np.round(diff / L)
    return np.einsum("ij,ij->i", diff, diff)


def ball_mask(grid: Grid, ball: Ball) -> np.ndarray:
    """Boolean membership of every cell in the open ball."""
    d2 = _ball_dist2(grid, ball)
    return d2 < ball.radius ** 2 - _BOUNDARY_GUARD * grid.spacing ** 2


def ball_cells(grid: Grid, ball: Ball):
    """Indices of the cells inside ``ball`` and their measure (count * h^d)."""
    idx = np.flatnonzero(ball_mask(grid, ball))
    return idx, idx.size * grid.cell_measure


def mask_ball_count(grid: Grid, mask, ball: Ball) -> int:
    """Number of cells inside ``ball`` where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape[0] != grid.size:
        raise GridError(f"mask has {mask.shape[0]} entries, grid has {grid.size} cells")
    return int(np.count_nonzero(mask & ball_mask(grid, ball)))


@lru_cache(maxsize=256)
def lattice_stencil(radius_units: float, dim: int) -> np.ndarray:
    """Integer offsets ``o`` with ``|o| < radius_units`` (same guard as balls)."""
    m = int(math.ceil(radius_units))
    ax = np.arange(-m, m + 1)
    pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    keep = np.einsum("ij,ij->i", pts, pts) < radius_units ** 2 - _BOUNDARY_GUARD
    out = pts[keep]
    out.setflags(write=False)
    return out


def stencil_size(radius_units: float, dim: int) -> int:
    """Lattice-point count of a ball of the given radius centered at a lattice point."""
    return int(lattice_stencil(float(radius_units), int(dim)).shape[0])


def _footprint(radius_units: float, dim: int) -> np.ndarray:
    st = lattice_stencil(float(radius_units), int(dim))
    m = int(math.ceil(radius_units))
    fp = np.zeros((2 * m + 1,) * dim, dtype=np.int64)
    fp[tuple((st + m).T)] = 1
    return fp


def ball_counts_at_cells(grid: Grid, masks, radius: float) -> np.ndarray:
    """Count true cells of ``masks`` inside ``B_radius(c)`` for every cell center c.

    ``masks`` has shape ``(size,)`` or ``(m, size)``; the result has the same
    shape and holds exact integers.  On a torus the minimal-image ball is used;
    on a free box cells outside the box simply do not exist.
    """
    masks = np.asarray(masks)
    single = masks.ndim == 1
    m2 = masks.reshape(-1, grid.size).astype(np.int64)
    r_units = radius / grid.spacing
    reach = int(math.ceil(r_units))
    if grid.periodic and 2 * reach + 1 > grid.cells_per_axis:
        # stencil would wrap onto itself; fall back to explicit membership
        inside = (lattice_dist2(grid) < r_units ** 2 - _BOUNDARY_GUARD).astype(np.int64)
        out = m2 @ inside.T
    else:
        fp = _footprint(r_units, grid.dim)[None]
        arr = m2.reshape((m2.shape[0],) + grid.shape)
        mode = "grid-wrap" if grid.periodic else "constant"
        out = ndimage.correlate(arr, fp, mode=mode, cval=0).reshape(m2.shape[0], -1)
    return out[0] if single else out
