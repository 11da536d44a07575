"""Covering primitives: Vitali selection, unit-ball covers and connecting chains.

Geometry here is Euclidean (no torus wrap) and limited to d <= 2 for the
overlap formulas.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .grid import Ball, Grid, GridError, ball_mask, unit_ball_volume

__all__ = [
    "BallFamily",
    "ChainResult",
    "vitali_select",
    "vitali_check",
    "cover_unit_ball",
    "cover_radius",
    "cover_count_bound",
    "ball_chain",
    "overlap_measure",
    "overlap_offset",
    "cell_overlap",
]


@dataclass
class BallFamily:
    balls: list
    provenance: str = ""

    def __post_init__(self):
        for b in self.balls:
            if not b.radius > 0:
                raise GridError("all radii must be positive")

    def __len__(self):
        return len(self.balls)

    def to_json(self) -> list:
        return [b.to_dict() for b in self.balls]


def _dist(b1: Ball, b2: Ball) -> float:
    return float(np.linalg.norm(np.subtract(b1.center, b2.center)))


def vitali_select(family: BallFamily) -> BallFamily:
    """Greedy disjoint subfamily, largest radii first (ties: input order).

    Every discarded ball meets a kept ball of at least its radius, so the
    3-dilates of the kept balls cover the union of the family.
    """
    order = sorted(range(len(family.balls)), key=lambda i: -family.balls[i].radius)
    kept = []
    for i in order:
        b = family.balls[i]
        # open balls are disjoint iff the centers are at least r + r' apart
        if all(_dist(b, k) >= b.radius + k.radius for k in kept):
            kept.append(b)
    return BallFamily(kept, f"vitali({family.provenance})")


def vitali_check(grid: Grid, family: BallFamily, selected: BallFamily):
    """Cell-level check: selected balls pairwise disjoint and 3-dilates cover the union.

    Returns ``(disjoint, covered)``.
    """
    masks = [ball_mask(grid, b) for b in selected.balls]
    disjoint = all(not np.any(a & b) for a, b in itertools.combinations(masks, 2))
    union = np.zeros(grid.size, dtype=bool)
    for b in family.balls:
        union |= ball_mask(grid, b)
    cover = np.zeros(grid.size, dtype=bool)
    for b in selected.balls:
        cover |= ball_mask(grid, b.scaled(3.0))
    return disjoint, bool(np.all(cover[union]))


def cover_radius(n: int) -> float:
    return 1.0 / (3.0 * 5 ** n)


def cover_count_bound(n: int, d: int) -> int:
    return (2 + 6 * 5 ** n) ** d


_INSET = 1e-9


def cover_unit_ball(n: int, d: int) -> BallFamily:
    """Balls of radius ``1/(3*5^n)`` centered in B_1 and covering B_1.

    Centers come from the cubic lattice of pitch equal to the radius (each
    lattice cube lies in its ball for d <= 3); cubes meeting B_1 are kept and
    their centers projected into ``B_(1 - 1e-9)``.  The projection is
    nonexpansive, so coverage of B_1 is preserved.
    """
    if n < 0:
        raise GridError("scale index n must be >= 0")
    if not 1 <= d <= 3:
        raise GridError("cover_unit_ball supports d <= 3")
    r = cover_radius(n)
    p = r
    m = int(math.ceil(1.0 / p + 0.5))
    ax = np.arange(-m, m + 1) * p
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    # distance from the origin to the cube [c - p/2, c + p/2]^d
    gap = np.maximum(np.abs(pts) - p / 2, 0.0)
    pts = pts[np.einsum("ij,ij->i", gap, gap) < 1.0]
    norm = np.linalg.norm(pts, axis=1)
    lim = 1.0 - _INSET
    scale = np.where(norm > lim, lim / np.where(norm > 0, norm, 1.0), 1.0)
    pts = pts * scale[:, None]
    return BallFamily([Ball(tuple(c), r) for c in pts], f"cover(n={n},d={d})")


def overlap_measure(t: float, r: float, d: int) -> float:
    """Continuum measure of ``B_r(0) ∩ B_r(t e)``."""
    t = abs(t)
    if t >= 2 * r:
        return 0.0
    if d == 1:
        return 2 * r - t
    if d == 2:
        return 2 * r * r * math.acos(t / (2 * r)) - 0.5 * t * math.sqrt(4 * r * r - t * t)
    raise GridError("overlap formulas are implemented for d <= 2")


def overlap_offset(r: float, d: int, fraction: float = 0.1) -> float:
    """Center offset t with ``|B ∩ B'| = fraction |B|``."""
    vol = unit_ball_volume(d) * r ** d
    if d == 1:
        return 2 * r * (1.0 - fraction)
    f = lambda t: overlap_measure(t, r, d) - fraction * vol
    return brentq(f, 0.0, 2 * r, xtol=1e-15 * r, rtol=4 * np.finfo(float).eps, maxiter=200)


def cell_overlap(grid: Grid, b1: Ball, b2: Ball) -> float:
    """Measure of the intersection counted in cells."""
    return float(np.count_nonzero(ball_mask(grid, b1) & ball_mask(grid, b2))) * grid.cell_measure


@dataclass
class ChainResult:
    case: str  # "identical" | "enlarged" | "chain"
    balls: list
    offset: float = 0.0
    final_overlap: float = 0.0  # |B^l ∩ last| / |B^l|
    shortened: bool = False
    notes: list = field(default_factory=list)

    def __len__(self):
        return len(self.balls)

    def to_json(self) -> dict:
        return {"case": self.case, "balls": [b.to_dict() for b in self.balls], "offset": self.offset,
                "final_overlap": self.final_overlap, "shortened": self.shortened}


def ball_chain(Bk: Ball, Bl: Ball, n: int) -> ChainResult:
    """Connecting balls between two cover balls of radius ``1/(3*5^n)``."""
    r = cover_radius(n)
    for b in (Bk, Bl):
        if abs(b.radius - r) > 1e-12 * r:
            raise GridError(f"ball radius {b.radius} does not match 1/(3*5^{n}) = {r}")
    d = len(Bk.center)
    ck, cl = np.asarray(Bk.center), np.asarray(Bl.center)
    D = float(np.linalg.norm(cl - ck))
    if D == 0.0:
        return ChainResult("identical", [])
    if D - 2 * r <= r:
        mid = tuple((ck + cl) / 2)
        return ChainResult("enlarged", [Ball(mid, 3 * r)])
    t = overlap_offset(r, d)
    e = (cl - ck) / D
    N = int(math.ceil(D / t)) - 1  # smallest N with D - N t <= t
    while D - N * t > t:
        N += 1
    balls = [Ball(tuple(ck + i * t * e), r) for i in range(1, N + 1)]
    last = D - N * t
    vol = unit_ball_volume(d) * r ** d
    return ChainResult("chain", balls, offset=t, final_overlap=overlap_measure(last, r, d) / vol)
