"""Nondegeneracy sets, threshold calibration, nesting and ink-spot growth.

Two grid effects shape the reporting:

* rho^j(x, z) > 0 needs ``|x - z| > 5h``, and up to ``|x - z| = 10h`` the
  only ladder radius is ``h``, whose ball is the single cell z; such cells
  can enter N^{j+1}(x) only if they already lie in N^j(x).  Saturation and
  growth are therefore measured on the *resolvable* set
  ``{v : |x - v| > near_field_h * h}`` (default 10); near-field cells are
  reported separately as unresolved.
* "Up to a set of measure zero" becomes a per-base-point allowance of at
  most ``tolerance_cells`` exceptional cells, always listed in the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffusion import DiffusionState, diffuse_step, initial_state
from .grid import (
    Ball,
    Grid,
    ball_counts_at_cells,
    ball_mask,
    lattice_dist2,
    mask_ball_count,
    stencil_size,
)
from .kernels import KernelError, TabulatedKernel, nondegeneracy_matrix, singular_profile

__all__ = [
    "NondegMask",
    "GrowthReport",
    "Calibration",
    "SaturationSpec",
    "SaturationResult",
    "SaturationError",
    "DegenerateIteration",
    "nondeg_mask",
    "resolvable_set",
    "calibrate_a_next",
    "nesting_check",
    "growth_ratio",
    "growth_balls",
    "saturation_iterations",
    "subball_density",
    "chain_parameters",
    "chain_trace",
    "ChainLink",
]

NEAR_FIELD_H = 10.0  # below this distance (in h) the rho ladder is {h} only


class DegenerateIteration(KernelError):
    """No pair carries positive rho, so the next threshold is undefined."""


class SaturationError(KernelError):
    """Iteration cap reached before saturation; ``partial`` holds the trace so far."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass
class NondegMask:
    base_point: int
    threshold: float
    mask: np.ndarray
    j: int

    def density(self) -> float:
        return float(np.count_nonzero(self.mask)) / max(self.mask.size - 1, 1)


def nondeg_mask(K: TabulatedKernel, x, a: float, j: int = 0) -> NondegMask:
    """``{v : K(x, v) >= a |x - v|^(-d-2s)}`` as a boolean mask; ``x`` itself is excluded."""
    if not a > 0:
        raise KernelError(f"threshold must be positive, got {a!r}")
    x = K.grid.check_index(x)
    prof = singular_profile(K.grid, K.s)[x]
    m = K.entries[x] >= a * prof
    m[x] = False
    return NondegMask(x, float(a), m, j)


def resolvable_set(grid: Grid, near_field_h: float = NEAR_FIELD_H) -> np.ndarray:
    """``[x, v]`` true iff ``|x - v| > near_field_h * h``."""
    return lattice_dist2(grid) > near_field_h ** 2


@dataclass
class Calibration:
    a: float
    ratio: float  # a_{j+1} / a_j, the empirical decay constant
    guaranteed_pairs: int
    exceptions: list  # (x, v) pairs with rho > 0 but K^{j+1}(x, v) = 0

    def to_dict(self) -> dict:
        return {"a": self.a, "ratio": self.ratio, "guaranteed_pairs": self.guaranteed_pairs,
                "exceptions": [list(map(int, p)) for p in self.exceptions]}


def calibrate_a_next(state: DiffusionState, a_prev: float, tolerance_cells: int = 1) -> Calibration:
    """Largest threshold that puts every guaranteed pair into N^{j+1}.

    ``state`` carries K^{j+1} and ``rho_prev`` = rho^j.  Pairs where K^{j+1}
    vanishes are treated as the null-set exception (at most
    ``tolerance_cells`` per base point, otherwise the iteration is degenerate).
    """
    rho = state.rho_prev
    if rho is None:
        raise KernelError("state has no previous rho; run diffuse_step first")
    guar = rho > 0
    if not np.any(guar):
        raise DegenerateIteration("iteration degenerate: no pair (x, v) has rho > 0")
    prof = singular_profile(state.grid, state.K.s)
    Kn = state.K.entries
    zero = guar & (Kn <= 0)
    per_x = zero.sum(axis=1)
    if np.any(per_x > tolerance_cells):
        x = int(np.argmax(per_x))
        raise DegenerateIteration(
            f"iteration degenerate: K^{state.j} vanishes on {int(per_x[x])} guaranteed cells of x={x}")
    use = guar & ~zero
    if not np.any(use):
        raise DegenerateIteration("iteration degenerate: every guaranteed pair has K = 0")
    ratio = Kn[use] / prof[use]
    a = float(ratio.min())
    # make ``K >= a * prof`` hold in floating point on every used pair
    while np.any(Kn[use] < a * prof[use]):
        a = float(np.nextafter(a, 0.0))
    if not a > 0:
        raise DegenerateIteration("iteration degenerate: calibrated threshold is 0")
    exc = [tuple(int(t) for t in p) for p in np.argwhere(zero)]
    return Calibration(a=a, ratio=a / a_prev, guaranteed_pairs=int(use.sum()), exceptions=exc)


def nesting_check(masks_j, masks_j1, on=None) -> int:
    """Number of (x, v) true in N^j(x) and false in N^{j+1}(x), optionally restricted to ``on``."""
    a = np.asarray(masks_j, dtype=bool)
    b = np.asarray(masks_j1, dtype=bool)
    if a.shape != b.shape:
        raise KernelError("mask families have different shapes")
    bad = a & ~b
    if on is not None:
        bad &= np.asarray(on, dtype=bool)
    return int(np.count_nonzero(bad))


@dataclass
class GrowthReport:
    ball: Ball
    base_point: int
    j: int
    outcome: str  # "Contained" | "Ratio" | "Empty"
    counts: tuple
    ratio: Optional[float] = None
    ball_id: int = 0
    saturated_before: bool = False  # B was already inside N^j(x)
    cells: int = 0  # cells in B

    def to_row(self) -> list:
        r = "" if self.ratio is None else repr(self.ratio)
        return [self.j, self.base_point, self.ball_id, self.outcome, self.counts[0], self.counts[1],
                self.cells, r]


def growth_ratio(grid: Grid, mask_j, mask_j1, ball: Ball, x, j: int = 0, ball_id: int = 0) -> GrowthReport:
    """Compare |B ∩ N^j(x)| with |B ∩ N^{j+1}(x)|."""
    inb = ball_mask(grid, ball)
    mj = np.asarray(mask_j, dtype=bool).reshape(-1)
    mj1 = np.asarray(mask_j1, dtype=bool).reshape(-1)
    c0 = int(np.count_nonzero(inb & mj))
    c1 = int(np.count_nonzero(inb & mj1))
    total = int(np.count_nonzero(inb))
    x = int(x)
    if c1 == total:
        outcome = "Contained"
    elif c0 == 0:
        outcome = "Empty"
    else:
        outcome = "Ratio"
    ratio = c1 / c0 if c0 > 0 else None
    return GrowthReport(ball, x, j, outcome, (c0, c1), ratio, ball_id, saturated_before=(c0 == total),
                        cells=total)


def growth_balls(grid: Grid, x, c1: float, radii_h: Sequence[float], near_field_h: float = NEAR_FIELD_H):
    """Balls ``B_R(z0)`` centered on cells with ``| |x - z0| - (1 + c1) R | <= h/2``.

    Only balls lying in the resolvable set of x (and, on a free box, inside
    the box) are kept.  Yields ``(ball, cells)`` pairs.
    """
    x = grid.check_index(x)
    h = grid.spacing
    d2 = lattice_dist2(grid)
    dist = np.sqrt(d2[x].astype(float))
    resolv = d2[x] > near_field_h ** 2
    out = []
    for R in radii_h:
        target = (1.0 + c1) * R
        for z0 in np.flatnonzero(np.abs(dist - target) <= 0.5 + 1e-9):
            ball = Ball.at_cell(grid, int(z0), R * h)
            cells = ball_mask(grid, ball)
            if not np.all(resolv[cells]):
                continue
            if not grid.periodic and cells.sum() < stencil_size(R, grid.dim):
                continue
            out.append((ball, cells))
    return out


@dataclass
class SaturationSpec:
    max_iterations: int = 8
    delta: Optional[float] = None
    c1_ladder: tuple = (1.0, 1.5, 2.0, 3.0, 5.0, 7.0)
    radii_h: tuple = (1.5, 2.5, 4.5, 6.5, 8.5, 10.5)
    tolerance_cells: int = 1
    near_field_h: float = NEAR_FIELD_H
    base_points: Optional[Sequence[int]] = None
    workers: int = 1


@dataclass
class SaturationResult:
    n: int
    thresholds: list
    calibrations: list
    reports: list  # GrowthReports for the best c1
    c1_best: Optional[float]
    c2_measured: Optional[float]
    n0: Optional[int]
    mu_hat: float
    nesting_violations: list
    missing_per_step: list  # max resolvable cells missing from N^j(x) over x
    unresolved_cells: int  # near-field cells per x excluded from saturation
    c1_summary: dict = field(default_factory=dict)
    states: list = field(default_factory=list, repr=False)

    @property
    def final_state(self) -> DiffusionState:
        return self.states[-1]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "thresholds": list(self.thresholds),
            "calibrations": [c.to_dict() for c in self.calibrations],
            "c1_best": self.c1_best,
            "c2_measured": self.c2_measured,
            "n0": self.n0,
            "mu_hat": self.mu_hat,
            "nesting_violations": list(self.nesting_violations),
            "missing_per_step": list(self.missing_per_step),
            "unresolved_cells": self.unresolved_cells,
            "c1_summary": self.c1_summary,
            "domination_constants": [s.domination_constant for s in self.states],
        }


def _missing(masks, resolv, rows) -> int:
    return int(np.max((resolv[rows] & ~masks[rows]).sum(axis=1))) if len(rows) else 0


def saturation_bound(mu_hat: float, c2: Optional[float]) -> Optional[int]:
    """``ceil(log(1/mu) / log(1 + c2))``; None when no growth factor was measured."""
    if mu_hat >= 1.0:
        return 0
    if c2 is None or not c2 > 0:
        return None
    return int(math.ceil(math.log(1.0 / mu_hat) / math.log1p(c2)))


def saturation_iterations(K: TabulatedKernel, lam: float, mu_hat: float,
                          spec: Optional[SaturationSpec] = None) -> SaturationResult:
    """Iterate the diffusion until N^n(x) covers the resolvable set of every sampled x."""
    spec = spec or SaturationSpec()
    if not mu_hat > 0:
        raise KernelError("precondition failed: kernel does not satisfy (A1) (mu_hat = 0)")
    g = K.grid
    rows = np.arange(g.size) if spec.base_points is None else np.asarray(spec.base_points)
    resolv = resolvable_set(g, spec.near_field_h)
    near = int(np.max((~resolv[rows]).sum(axis=1))) - 1  # minus x itself
    state = initial_state(K, lam, mu_hat, spec.delta, workers=spec.workers)
    states = [state]
    thresholds = [state.a]
    cals, nest = [], []
    missing = [_missing(state.masks(), resolv, rows)]
    per_c1 = {c1: [] for c1 in spec.c1_ladder}
    ball_sets = {c1: {int(x): growth_balls(g, x, c1, spec.radii_h, spec.near_field_h) for x in rows} for c1 in spec.c1_ladder}
    while missing[-1] > spec.tolerance_cells:
        if state.j >= spec.max_iterations:
            partial = SaturationResult(state.j, thresholds, cals, [], None, None, None, mu_hat, nest,
                                       missing, near, states=states)
            raise SaturationError(
                f"no saturation after {state.j} iterations (cap {spec.max_iterations}); "
                f"{missing[-1]} resolvable cells still missing", partial)
        nxt = diffuse_step(state, K, workers=spec.workers)
        cal = calibrate_a_next(nxt, state.a, spec.tolerance_cells)
        nxt = nxt.with_threshold(cal.a)
        mj, mj1 = state.masks(), nxt.masks()
        guar = nxt.rho_prev > 0
        exc = np.zeros_like(guar)
        for (x, v) in cal.exceptions:
            exc[x, v] = True
        nest.append(nesting_check(mj, mj1, on=guar & ~exc))
        for c1 in spec.c1_ladder:
            bid = 0
            for x in rows:
                for ball, cells in ball_sets[c1][int(x)]:
                    per_c1[c1].append(growth_ratio(g, mj[x], mj1[x], ball, x, state.j, bid))
                    bid += 1
        cals.append(cal)
        thresholds.append(cal.a)
        state = nxt
        states.append(state)
        missing.append(_missing(state.masks(), resolv, rows))

    summary = {}
    best, best_c2 = None, None
    for c1 in spec.c1_ladder:
        live = [r for r in per_c1[c1] if not r.saturated_before]
        ratios = [r.ratio for r in live if r.ratio is not None]
        empties = sum(r.outcome == "Empty" for r in live)
        c2 = (min(ratios) - 1.0) if ratios and not empties else None
        summary[str(c1)] = {"balls": len(per_c1[c1]), "non_saturated": len(live),
                            "empty": empties, "min_ratio": min(ratios) if ratios else None}
        if c2 is not None and (best_c2 is None or c2 > best_c2):
            best, best_c2 = c1, c2
    if best is None and spec.c1_ladder:
        best = spec.c1_ladder[0]
    reports = per_c1.get(best, [])
    return SaturationResult(
        n=state.j, thresholds=thresholds, calibrations=cals, reports=reports,
        c1_best=best, c2_measured=best_c2, n0=saturation_bound(mu_hat, best_c2),
        mu_hat=mu_hat, nesting_violations=nest, missing_per_step=missing,
        unresolved_cells=near, c1_summary=summary, states=states)


def subball_density(grid: Grid, A, B: Ball, c0: float, delta: float) -> Optional[Ball]:
    """A ball of radius ``c0 R`` inside B on which A has density ``>= 1 - 3^d delta``.

    Returns None when A fails the ``(1 - delta)`` density hypothesis on B.
    Candidate centers are grid cells, searched in index order.
    """
    if not 0 < c0 < 1:
        raise KernelError("c0 must lie in (0, 1)")
    d = grid.dim
    if not 0 <= delta < 3.0 ** (-d):
        raise KernelError("delta must lie in [0, 3^-d)")
    A = np.asarray(A, dtype=bool).reshape(-1)
    inB = ball_mask(grid, B)
    if np.count_nonzero(A & inB) < (1.0 - delta) * np.count_nonzero(inB):
        return None
    r = c0 * B.radius
    for v in np.flatnonzero(inB):
        sub = Ball.at_cell(grid, int(v), r)
        cells = ball_mask(grid, sub)
        if np.any(cells & ~inB) or not np.any(cells):
            continue
        if np.count_nonzero(A & cells) >= (1.0 - 3 ** d * delta) * np.count_nonzero(cells):
            return sub
    return None


def chain_parameters(mu_hat: float, delta: float, d: int):
    """``(eps0, xi)`` for the chain construction.

    ``eps0`` sits just below ``min(1, ((1 - delta) / (1 - mu/2))^(1/d) - 1)``
    and ``xi = (eps0 + 2) / eps0``.
    """
    bound = ((1.0 - delta) / (1.0 - mu_hat / 2.0)) ** (1.0 / d) - 1.0
    if not bound > 0:
        raise KernelError(f"no admissible eps0: need delta < mu/2 (delta={delta}, mu={mu_hat})")
    eps0 = 0.99 * min(1.0, bound)
    return eps0, (eps0 + 2.0) / eps0


@dataclass(frozen=True)
class ChainLink:
    z: int
    v: int
    rho: float

    def to_dict(self) -> dict:
        return {"z": self.z, "v": self.v, "rho": self.rho}


def _certify(grid: Grid, mask, z, k, delta) -> int:
    # smallest-index center v with |z - v| < k h carrying a (1 - delta)-dense ball
    h = grid.spacing
    quota = (1.0 - delta) * (np.count_nonzero(ball_mask(grid, Ball.at_cell(grid, 0, k * h)))
                             if grid.periodic else stencil_size(k, grid.dim))
    for v in np.flatnonzero(lattice_dist2(grid)[z] < k * k):
        if mask_ball_count(grid, mask, Ball.at_cell(grid, int(v), k * h)) >= quota:
            return int(v)
    raise KernelError(f"no certifying center for rho at z={z}")


def chain_trace(state: DiffusionState, x, y):
    """Chain ``(z_i, v_i, rho_i)`` with ``rho_{i+1} > xi rho_i`` started at ``z_0 = y``.

    Each successor is the cell of ``B_{rho_i}(v_i)`` with the largest rho
    exceeding ``xi rho_i`` (ties: smallest index).  Returns the links,
    ``eps0`` and ``xi``.
    """
    g = state.grid
    x = g.check_index(x)
    y = g.check_index(y)
    rho = state.rho()
    mask = state.masks()[x]
    if rho[x, y] == 0:
        raise KernelError(f"precondition failed: rho(x={x}, y={y}) = 0")
    eps0, xi = chain_parameters(state.mu_hat, state.eta.delta, g.dim)
    h = g.spacing
    d2 = lattice_dist2(g)
    z, k = y, int(rho[x, y])
    links = [ChainLink(z, _certify(g, mask, z, k, state.eta.delta), k * h)]
    while True:
        v = links[-1].v
        cand = np.flatnonzero((d2[v] < k * k) & (rho[x] > xi * k))
        if cand.size == 0:
            break
        best = cand[np.argmax(rho[x, cand])]  # argmax returns the smallest index on ties
        z, k = int(best), int(rho[x, best])
        links.append(ChainLink(z, _certify(g, mask, z, k, state.eta.delta), k * h))
    return links, eps0, xi
