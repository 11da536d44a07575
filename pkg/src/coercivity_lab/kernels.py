"""Kernel gallery, tabulation, density-assumption checks and the conjecture explorer.

All gallery kernels are evaluated on the signed minimal-image lattice offset
``o = (y - x) / h``, so translation-invariant kernels are bitwise
translation-invariant after tabulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .grid import (
    Ball,
    Grid,
    GridError,
    ball_counts_at_cells,
    lattice_dist2,
    pair_offsets,
)

__all__ = [
    "VARIANTS",
    "KernelError",
    "KernelSpec",
    "TabulatedKernel",
    "SamplingPlan",
    "AssumptionReport",
    "tabulate",
    "singular_profile",
    "nondegeneracy_matrix",
    "check_assumption",
    "conjecture_ratio",
    "symmetrize",
]

VARIANTS = ("fractional_laplacian", "one_sided", "directional", "stripes", "tabulated")


class KernelError(ValueError):
    """Invalid kernel specification or kernel evaluation."""


@dataclass(frozen=True)
class KernelSpec:
    """Closed-form kernel description.

    ``params`` by variant:

    * ``one_sided``: ``axis`` (default 0); support is ``(y - x)[axis] > 0``.
    * ``directional``: in 1-d ``b = [b_minus, b_plus]``; in 2-d either ``b``
      (values on a uniform angle grid over ``[0, 2*pi)``) or a cone given by
      ``axis_angle``, ``half_angle``, ``two_sided`` and ``floor``.
    * ``stripes``: ``width`` and ``axis``; nondegenerate iff
      ``floor(|(y - x)[axis]| / width)`` is even.
    * ``tabulated``: ``density`` and ``seed`` for a random symmetric mask.
    """

    variant: str
    s: float
    lam: float = 1.0
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise KernelError(f"unknown kernel variant {self.variant!r}")
        if not 0 < self.s < 1:
            raise KernelError(f"order s must lie in (0, 1), got {self.s!r}")
        if not self.lam > 0:
            raise KernelError(f"lambda must be positive, got {self.lam!r}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def kernel_id(self) -> str:
        extra = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        tag = f"{self.variant}(s={self.s},lambda={self.lam}"
        return tag + (f",{extra})" if extra else ")")

    def to_config(self) -> dict:
        return {"variant": self.variant, "s": self.s, "lambda": self.lam, "params": dict(self.params)}

    @classmethod
    def from_config(cls, cfg) -> "KernelSpec":
        return cls(cfg["variant"], float(cfg["s"]), float(cfg.get("lambda", 1.0)), cfg.get("params", {}))


@dataclass
class TabulatedKernel:
    grid: Grid
    entries: np.ndarray
    s: float
    kernel_id: str = "tabulated"

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        n = self.grid.size
        if e.shape != (n, n):
            raise KernelError(f"kernel matrix has shape {e.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(e)):
            i, j = np.argwhere(~np.isfinite(e))[0]
            raise KernelError(f"non-finite kernel entry at pair ({i}, {j})")
        if np.any(e < 0):
            i, j = np.argwhere(e < 0)[0]
            raise KernelError(f"negative kernel entry {e[i, j]} at pair ({i}, {j})")
        np.fill_diagonal(e, 0.0)
        self.entries = e

    @property
    def size(self) -> int:
        return self.grid.size

    def scaled(self, t: float) -> "TabulatedKernel":
        return TabulatedKernel(self.grid, self.entries * t, self.s, f"{t}*{self.kernel_id}")

    def __add__(self, other: "TabulatedKernel") -> "TabulatedKernel":
        if other.grid != self.grid or other.s != self.s:
            raise KernelError("kernels must share grid and order to be added")
        return TabulatedKernel(self.grid, self.entries + other.entries, self.s,
                               f"{self.kernel_id}+{other.kernel_id}")


def singular_profile(grid: Grid, s: float) -> np.ndarray:
    """``|x - y|^(-d-2s)`` for all cell pairs, with 0 on the diagonal."""
    d2 = lattice_dist2(grid).astype(float)
    with np.errstate(divide="ignore"):
        prof = (np.sqrt(d2) * grid.spacing) ** (-(grid.dim + 2.0 * s))
    np.fill_diagonal(prof, 0.0)
    return prof


def _half_space_weight(o_axis, n, periodic):
    # 1 on the open positive side, 1/2 on the tie set (zero or the antipodal
    # torus offset), 0 otherwise; K(x,y) + K(y,x) then equals the full kernel.
    w = np.where(o_axis > 0, 1.0, np.where(o_axis == 0, 0.5, 0.0))
    if periodic and n % 2 == 0:
        w = np.where(o_axis == n // 2, 0.5, w)
    return w


def _angle_weight(spec: KernelSpec, grid: Grid, off) -> np.ndarray:
    p = spec.params
    if grid.dim == 1:
        b = np.asarray(p.get("b", [1.0, 1.0]), dtype=float)
        if b.shape != (2,) or np.any(b < 0):
            raise KernelError("1-d directional kernel needs b = [b_minus, b_plus] >= 0")
        o = off[..., 0]
        w = np.where(o > 0, b[1], b[0])
        if grid.periodic and grid.cells_per_axis % 2 == 0:
            w = np.where(o == grid.cells_per_axis // 2, 0.5 * (b[0] + b[1]), w)
        return w
    if grid.dim != 2:
        raise KernelError("directional kernels are implemented for d <= 2")
    theta = np.arctan2(off[..., 1], off[..., 0]) % (2 * math.pi)
    if "b" in p:
        b = np.asarray(p["b"], dtype=float)
        if b.ndim != 1 or b.size == 0 or np.any(b < 0):
            raise KernelError("directional density b must be a non-empty nonnegative vector")
        bins = np.floor(theta / (2 * math.pi) * b.size).astype(np.int64) % b.size
        return b[bins]
    axis = float(p.get("axis_angle", 0.0))
    half = float(p.get("half_angle", math.pi / 4))
    floor = float(p.get("floor", 0.0))
    two_sided = bool(p.get("two_sided", True))

    def gap(t):
        g = np.abs((theta - t + math.pi) % (2 * math.pi) - math.pi)
        return g

    ang = gap(axis)
    if two_sided:
        ang = np.minimum(ang, gap(axis + math.pi))
    return np.where(ang <= half + 1e-12, 1.0, floor)


def tabulate(spec: KernelSpec, grid: Grid) -> TabulatedKernel:
    """Evaluate the closed-form kernel on every ordered pair of cells."""
    prof = singular_profile(grid, spec.s)
    off = pair_offsets(grid)
    p = spec.params
    v = spec.variant
    if v == "fractional_laplacian":
        weight = 1.0
    elif v == "one_sided":
        axis = int(p.get("axis", 0))
        weight = _half_space_weight(off[..., axis], grid.cells_per_axis, grid.periodic)
    elif v == "directional":
        weight = _angle_weight(spec, grid, off)
    elif v == "stripes":
        width = float(p.get("width", 2 * grid.spacing))
        if not width > 0:
            raise KernelError("stripe width must be positive")
        axis = int(p.get("axis", 0))
        # integer arithmetic in lattice units keeps the stripe boundaries exact
        wu = width / grid.spacing
        band = np.floor(np.abs(off[..., axis]) / wu + 1e-12).astype(np.int64)
        weight = (band % 2 == 0).astype(float)
    else:  # tabulated: random symmetric mask
        density = float(p.get("density", 0.5))
        rng = np.random.default_rng(int(p.get("seed", 0)))
        upper = np.triu(rng.random((grid.size, grid.size)) < density, 1)
        weight = (upper | upper.T).astype(float)
    entries = spec.lam * weight * prof
    if not np.all(np.isfinite(entries)):
        i, j = np.argwhere(~np.isfinite(entries))[0]
        raise KernelError(f"kernel evaluation is not finite at pair ({i}, {j})")
    return TabulatedKernel(grid, entries, spec.s, spec.kernel_id)


def symmetrize(K: TabulatedKernel) -> TabulatedKernel:
    """Two-sided kernel ``K(x,y) + K(y,x)``."""
    return TabulatedKernel(K.grid, K.entries + K.entries.T, K.s, f"sym({K.kernel_id})")


def nondegeneracy_matrix(K: TabulatedKernel, lam: float) -> np.ndarray:
    """Row x holds ``{z : K(x,z) >= lam |x-z|^(-d-2s)}``; the diagonal is false."""
    prof = singular_profile(K.grid, K.s)
    m = K.entries >= lam * prof
    np.fill_diagonal(m, False)
    return m


# ---------------------------------------------------------------------------
# density assumption checks


@dataclass
class SamplingPlan:
    """Finite family of (ball, base point) pairs for the density checks.

    Balls are centered on grid cells with radii ``radii_h * h``.  Grids with
    at most ``exhaustive_limit`` cells use every cell as center and base point;
    larger grids draw ``max_centers`` centers and ``max_base_points`` base
    points with ``seed``.
    """

    radii_h: tuple = (1.5, 2.5, 3.5, 4.5, 6.5, 8.5, 12.5)
    c_offset: float = 0.5
    seed: int = 0
    exhaustive_limit: int = 4096
    max_centers: int = 256
    max_base_points: int = 256

    def radii(self, grid: Grid) -> list:
        out = []
        for r in self.radii_h:
            if grid.periodic and 2 * r >= grid.cells_per_axis:
                continue
            if not grid.periodic and 2 * r + 1 >= grid.cells_per_axis:
                continue
            out.append(float(r) * grid.spacing)
        return out


@dataclass
class AssumptionReport:
    lam: float
    mu_hat: float
    witness: Optional[dict]
    variant: str
    c_offset: Optional[float] = None
    snap_distance: float = 0.0
    samples: int = 0

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mu_hat": self.mu_hat,
            "witness": self.witness,
            "variant": self.variant,
            "c_offset": self.c_offset,
            "snap_distance": self.snap_distance,
            "samples": self.samples,
        }


def _choose(rng, n, k):
    if n <= k:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def check_assumption(K: TabulatedKernel, lam: float, variant: str = "A1",
                     plan: Optional[SamplingPlan] = None) -> AssumptionReport:
    """Worst observed density of the nondegeneracy set over a family of balls.

    ``A1`` uses base points inside the ball, ``A2`` base points on the grid
    shell nearest to the sphere, ``A3`` base points at distance
    ``(1 + c_offset) R`` from the center (also snapped to the nearest shell).
    The base point itself never counts, in numerator or denominator.
    """
    if not lam > 0:
        raise KernelError("lambda must be positive")
    if variant not in ("A1", "A2", "A3"):
        raise KernelError(f"unknown assumption variant {variant!r}")
    plan = plan or SamplingPlan()
    grid = K.grid
    h = grid.spacing
    radii = plan.radii(grid)
    if not radii:
        raise KernelError("empty sampling plan: no admissible radius on this grid")
    rng = np.random.default_rng(plan.seed)
    n = grid.size
    if n <= plan.exhaustive_limit:
        centers = np.arange(n)
        bases = np.arange(n)
    else:
        centers = _choose(rng, n, plan.max_centers)
        bases = _choose(rng, n, plan.max_base_points)
    nondeg = nondegeneracy_matrix(K, lam)[bases]
    full = np.ones(n, dtype=bool)
    dist = np.sqrt(lattice_dist2(grid).astype(float))  # lattice units
    best = (math.inf, None)
    snap = 0.0
    total = 0
    for r in radii:
        ru = r / h
        counts = ball_counts_at_cells(grid, nondeg, r)[:, centers]
        sizes = ball_counts_at_cells(grid, full, r)[centers]
        dxc = dist[np.ix_(bases, centers)]
        inside = dxc < ru - 1e-9
        if not grid.periodic:
            # only balls lying inside the box are meaningful samples
            lat = grid.lattice[centers]
            room = np.all((lat >= ru) & (lat <= grid.cells_per_axis - 1 - ru), axis=1)
            inside = inside & room[None, :]
        if variant == "A1":
            sel = inside
        else:
            target = ru if variant == "A2" else (1.0 + plan.c_offset) * ru
            sel = np.abs(dxc - target) <= 0.5 + 1e-9
            if not grid.periodic:
                sel = sel & room[None, :]
        if not np.any(sel):
            continue
        den = sizes[None, :] - inside.astype(np.int64)
        with np.errstate(invalid="ignore", divide="ignore"):
            dens = np.where(sel & (den > 0), counts / np.where(den > 0, den, 1), np.inf)
        total += int(np.count_nonzero(sel & (den > 0)))
        if variant != "A1" and np.any(sel):
            snap = max(snap, float(np.max(np.abs(dxc[sel] - (ru if variant == "A2" else (1 + plan.c_offset) * ru)))) * h)
        k = np.unravel_index(np.argmin(dens), dens.shape)
        if dens[k] < best[0]:
            bi, ci = int(bases[k[0]]), int(centers[k[1]])
            best = (float(dens[k]), {
                "ball": Ball.at_cell(grid, ci, r).to_dict(),
                "center_index": ci,
                "base_point": bi,
                "count": int(counts[k]),
                "denominator": int(den[k]),
            })
    if best[1] is None:
        raise KernelError("empty sampling plan: no (ball, base point) pair selected")
    return AssumptionReport(lam=lam, mu_hat=best[0], witness=best[1], variant=variant,
                            c_offset=plan.c_offset if variant == "A3" else None,
                            snap_distance=snap, samples=total)


def conjecture_ratio(K: TabulatedKernel, x, r: float, e) -> float:
    """Discrete ``int_{B_r(x)} ((y-x).e)_+^2 K(x,y) dy / r^(2-2s)``."""
    grid = K.grid
    h = grid.spacing
    if r < 2 * h:
        raise KernelError(f"radius {r} below 2h = {2 * h}: insufficient resolution")
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.shape != (grid.dim,) or abs(np.linalg.norm(e) - 1) > 1e-12:
        raise KernelError("direction e must be a unit vector of the grid dimension")
    x = grid.check_index(x)
    off = grid.offsets_from(x).astype(float) * h
    d2 = np.einsum("ij,ij->i", off, off)
    inside = d2 < r * r - 1e-9 * h * h
    proj = np.clip(off @ e, 0.0, None)
    total = np.sum(np.where(inside, proj ** 2 * K.entries[x], 0.0)) * grid.cell_measure
    return float(total / r ** (2 - 2 * K.s))
