"""Kernel diffusion: the weights eta_1^j / eta_2, the radii rho_delta and the
min-combination that produces the auxiliary kernels K^j.

Radii are handled in lattice units: ``rho = k * h`` with an integer ``k``.
The admissible ladder for a pair (x, z) is ``1 <= k`` with ``k h < |x - z| / 5``
(strict), i.e. ``25 k^2 < |x - z|^2 / h^2`` in exact integer arithmetic.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate

from .grid import (
    Ball,
    Grid,
    ball_counts_at_cells,
    ball_mask,
    distance_matrix,
    lattice_dist2,
    mask_ball_count,
    stencil_size,
    unit_ball_volume,
)
from .kernels import KernelError, TabulatedKernel, nondegeneracy_matrix

__all__ = [
    "EtaParams",
    "DiffusionState",
    "NormalizationError",
    "normalization_constants",
    "radial_quadrature_constants",
    "ladder_max",
    "rho_delta",
    "rho_field",
    "rho_matrix",
    "Eta1",
    "Eta2",
    "DenseEta",
    "combine_kernels",
    "initial_state",
    "diffuse_step",
    "row_chunks",
    "energy_domination_ratio",
    "eta1_safety_factor",
    "eta2_safety_factor",
]

NORMALIZATION_SLACK = 1e-9


class NormalizationError(ValueError):
    """An eta weight violates its unit-mass bound."""


def normalization_constants(d: int, s: float):
    """``(c_a, c_b)`` giving unit continuum mass to eta_1 and eta_2.

    ``c_b`` depends on ``s`` as well as ``d``: the mass of eta_2 splits into
    ``omega_d`` (inner part) plus ``d omega_d / (2s)`` (outer part).
    """
    if d < 1 or not 0 < s < 1:
        raise ValueError("need d >= 1 and s in (0, 1)")
    w = unit_ball_volume(d)
    return 1.0 / (4 ** d * w), 1.0 / (w * (1.0 + d / (2.0 * s)))


def _sphere_area(d):
    return d * unit_ball_volume(d)


def radial_quadrature_constants(d: int, s: float):
    """Independent route to ``(c_a, c_b)`` by radial quadrature of the eta masses.

    eta_1 with unit constant and rho = 1 integrates the indicator of ``B_4``;
    eta_2 with unit constant and ``|y - z| = t = 1`` integrates
    ``max(r, 1)^(-d-2s)`` against the sphere area element.
    """
    area = _sphere_area(d)
    m1, _ = integrate.quad(lambda r: area * r ** (d - 1), 0.0, 4.0, epsabs=0, epsrel=1e-13)
    inner, _ = integrate.quad(lambda r: area * r ** (d - 1), 0.0, 1.0, epsabs=0, epsrel=1e-13)
    outer, _ = integrate.quad(lambda r: area * r ** (d - 1) * r ** (-d - 2 * s), 1.0, np.inf,
                              epsabs=0, epsrel=1e-12, limit=200)
    return 1.0 / m1, 1.0 / (inner + outer)


@dataclass(frozen=True)
class EtaParams:
    c_a: float
    c_b: float
    s: float
    delta: float
    # lattice safety factors (<= 1) that keep the discrete masses below 1
    kappa1: float = 1.0
    kappa2: float = 1.0

    def to_dict(self) -> dict:
        return {"c_a": self.c_a, "c_b": self.c_b, "s": self.s, "delta": self.delta,
                "kappa1": self.kappa1, "kappa2": self.kappa2}


def ladder_max(d2) -> np.ndarray:
    """Largest integer k with ``25 k^2 < d2`` (0 when none); exact for integer input."""
    d2 = np.asarray(d2, dtype=np.int64)
    k = np.floor(np.sqrt(np.maximum(d2 - 1, 0)) / 5.0).astype(np.int64)
    k = np.where(25 * (k + 1) ** 2 < d2, k + 1, k)
    k = np.where(25 * k ** 2 >= d2, k - 1, k)
    return np.maximum(k, 0)


def _ball_size(grid: Grid, k: int) -> int:
    # free boxes: full lattice ball, cells outside the box count as absent
    if grid.periodic:
        return int(np.count_nonzero(ball_mask(grid, Ball(tuple(grid.centers[0]), k * grid.spacing))))
    return stencil_size(float(k), grid.dim)


def rho_delta(grid: Grid, x, z, mask, delta: float) -> float:
    """Largest ladder radius carrying a (1 - delta)-dense ball of ``mask`` around z.

    Direct search over the ladder and over grid centers v with ``|z - v| < r``;
    returns 0 when no radius qualifies.
    """
    x = grid.check_index(x)
    z = grid.check_index(z)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    d2 = int(lattice_dist2(grid)[x, z])
    kmax = int(ladder_max(d2))
    h = grid.spacing
    zc = tuple(grid.centers[z])
    for k in range(kmax, 0, -1):
        r = k * h
        need = (1.0 - delta) * _ball_size(grid, k)
        for v in np.flatnonzero(ball_mask(grid, Ball(zc, r))):
            if mask_ball_count(grid, mask, Ball.at_cell(grid, v, r)) >= need:
                return r
    return 0.0


def row_chunks(n, workers):
    workers = max(1, int(workers))
    bounds = np.linspace(0, n, min(n, workers) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _map_rows(fn, n, workers):
    chunks = row_chunks(n, workers)
    if len(chunks) == 1:
        fn(*chunks[0])
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for f in [pool.submit(fn, a, b) for a, b in chunks]:
            f.result()


def rho_field(grid: Grid, masks, delta: float, base_points=None) -> np.ndarray:
    """Vectorized rho in lattice units for the rows ``base_points`` (default: all).

    ``masks`` holds one row per base point; entry ``[i, z]`` of the result is
    the integer ``k`` with ``rho(x_i, z) = k h``.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    if base_points is None:
        base_points = np.arange(grid.size)
    base_points = np.asarray(base_points)
    d2 = lattice_dist2(grid)[base_points]
    kmax = ladder_max(d2)
    out = np.zeros(kmax.shape, dtype=np.int64)
    top = int(kmax.max()) if kmax.size else 0
    h = grid.spacing
    for k in range(top, 0, -1):
        todo = (out == 0) & (kmax >= k)
        if not np.any(todo):
            continue
        rows = np.flatnonzero(np.any(todo, axis=1))
        counts = ball_counts_at_cells(grid, masks[rows], k * h)
        qual = counts >= (1.0 - delta) * _ball_size(grid, k)
        reach = ball_counts_at_cells(grid, qual, k * h) > 0
        sub = todo[rows] & reach
        out[rows] = np.where(sub, k, out[rows])
    return out


def rho_matrix(grid: Grid, masks, delta: float, workers: int = 1) -> np.ndarray:
    """rho (lattice units) for every ordered pair; rows are independent."""
    masks = np.asarray(masks, dtype=bool)
    out = np.zeros(masks.shape, dtype=np.int64)

    def work(a, b):
        out[a:b] = rho_field(grid, masks[a:b], delta, np.arange(a, b))

    _map_rows(work, grid.size, workers)
    return out


class Eta1:
    """``eta_1^j(x, y, z) = kappa1 c_a rho^-d 1{|y - z| < 4 rho}`` with ``rho = rho^j(x, z)``."""

    def __init__(self, grid: Grid, rho_k, c_a: float, kappa1: float = 1.0):
        self.grid = grid
        self.rho_k = np.asarray(rho_k, dtype=np.int64)
        self.c_a = c_a
        self.kappa1 = kappa1

    def slab(self, x) -> np.ndarray:
        """``eta_1(x, y, z)`` as an array indexed ``[y, z]``."""
        g = self.grid
        k = self.rho_k[x]
        d2 = lattice_dist2(g)
        inside = d2 < 16 * (k[None, :] ** 2)
        with np.errstate(divide="ignore"):
            amp = np.where(k > 0, self.kappa1 * self.c_a / (np.maximum(k, 1) * g.spacing) ** g.dim, 0.0)
        return np.where(inside & (k[None, :] > 0), amp[None, :], 0.0)

    def max_mass(self) -> float:
        """Largest ``sum_y eta_1(x, y, z) h^d`` over all (x, z)."""
        g = self.grid
        ks = np.unique(self.rho_k[self.rho_k > 0])
        if ks.size == 0:
            return 0.0
        return max(self.kappa1 * self.c_a * _ball_cells_4k(g, int(k)) / k ** g.dim for k in ks)


def _ball_cells_4k(grid: Grid, k: int) -> int:
    # cells with |y - z| < 4 k h around a cell z; worst case over z on a free box
    if grid.periodic:
        return int(np.count_nonzero(lattice_dist2(grid)[0] < 16 * k * k))
    return stencil_size(4.0 * k, grid.dim)


def eta1_safety_factor(grid: Grid, c_a: float) -> float:
    top = int(ladder_max(int(lattice_dist2(grid).max())))
    worst = max([c_a * _ball_cells_4k(grid, k) / k ** grid.dim for k in range(1, top + 1)] or [0.0])
    return 1.0 if worst <= 1.0 else 1.0 / worst


class Eta2:
    """``eta_2(x, y, z) = kappa2 c_b |y - z|^(2s) max(|x - z|, |y - z|)^(-d-2s)``."""

    def __init__(self, grid: Grid, s: float, c_b: float, kappa2: float = 1.0):
        self.grid = grid
        self.s = s
        self.c_b = c_b
        self.kappa2 = kappa2
        self._D = distance_matrix(grid)

    def slab(self, x) -> np.ndarray:
        D = self._D
        g = self.grid
        dyz = D
        dxz = D[x][None, :]
        m = np.maximum(dxz, dyz)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = self.kappa2 * self.c_b * dyz ** (2 * self.s) * m ** (-(g.dim + 2 * self.s))
        return np.where(dyz > 0, val, 0.0)

    def raw_max_mass(self) -> float:
        """Largest ``sum_x eta_2(x, y, z) h^d`` over all (y, z) with unit kappa."""
        return _eta2_raw_max_mass(self.grid, self.s, self.c_b)

    def max_mass(self) -> float:
        return self.kappa2 * self.raw_max_mass()


def _eta2_raw_max_mass(grid: Grid, s: float, c_b: float) -> float:
    D = distance_matrix(grid)
    p = -(grid.dim + 2 * s)
    hd = grid.cell_measure
    zs = [0] if grid.periodic else range(grid.size)
    worst = 0.0
    for z in zs:
        t = D[:, z]  # |y - z| for every y
        # mass(y) = c_b t_y^(2s) sum_x max(|x - z|, t_y)^p
        m = np.maximum(D[:, z][None, :], t[:, None])
        with np.errstate(divide="ignore"):
            tot = np.sum(np.where(m > 0, m ** p, 0.0), axis=1)
        mass = c_b * t ** (2 * s) * tot * hd
        worst = max(worst, float(np.max(np.where(t > 0, mass, 0.0))))
    return worst


def eta2_safety_factor(grid: Grid, s: float, c_b: float) -> float:
    worst = _eta2_raw_max_mass(grid, s, c_b)
    return 1.0 if worst <= 1.0 else 1.0 / worst


class DenseEta:
    """Explicit weight tensor ``w[x, y, z]``; ``mass_axis`` is 1 for eta_1, 0 for eta_2."""

    def __init__(self, weights, mass_axis: int, cell_measure: float):
        self.w = np.asarray(weights, dtype=float)
        self.mass_axis = mass_axis
        self.cell_measure = cell_measure

    def slab(self, x):
        return self.w[x]

    def max_mass(self) -> float:
        return float(np.max(self.w.sum(axis=self.mass_axis))) * self.cell_measure


def combine_kernels(K1: TabulatedKernel, K2: TabulatedKernel, eta1, eta2, workers: int = 1,
                    localization_check: bool = False) -> TabulatedKernel:
    """``K3(x, y) = sum_z min(K1(x,z) eta1(x,y,z), K2(y,z) eta2(x,y,z)) h^d``.

    Faults when either weight family exceeds unit mass by more than 1e-9.
    With ``localization_check`` every nonzero summand is asserted to satisfy
    ``|x - z| < 5 |x - y|`` and ``|y - z| < 4 |x - y|``.
    """
    if K1.grid != K2.grid:
        raise KernelError("kernels to combine must share a grid")
    g = K1.grid
    for name, eta in (("eta_1", eta1), ("eta_2", eta2)):
        mass = eta.max_mass()
        if mass > 1.0 + NORMALIZATION_SLACK:
            raise NormalizationError(f"{name} mass {mass!r} exceeds 1 + {NORMALIZATION_SLACK}")
    n = g.size
    out = np.zeros((n, n))
    hd = g.cell_measure
    K2e = K2.entries
    d2 = lattice_dist2(g) if localization_check else None

    def work(a, b):
        for x in range(a, b):
            A = eta1.slab(x) * K1.entries[x][None, :]
            B = eta2.slab(x) * K2e
            M = np.minimum(A, B)
            if localization_check:
                dxy = d2[x][:, None]
                ok = (d2[x][None, :] < 25 * dxy) & (d2 < 16 * dxy)
                if np.any((M > 0) & ~ok):
                    y, z = np.argwhere((M > 0) & ~ok)[0]
                    raise AssertionError(f"summand outside the localization set at x={x}, y={y}, z={z}")
            out[x] = M.sum(axis=1) * hd
    _map_rows(work, n, workers)
    np.fill_diagonal(out, 0.0)
    return TabulatedKernel(g, out, K1.s, f"combine({K1.kernel_id},{K2.kernel_id})")


@dataclass
class DiffusionState:
    """Iteration state: K^j, its threshold a_j and the tracked domination constant C_j."""

    j: int
    a: float
    K: TabulatedKernel
    eta: EtaParams
    domination_constant: float
    mu_hat: float
    lam: float
    rho_prev: Optional[np.ndarray] = None
    workers: int = 1
    _masks: Optional[np.ndarray] = field(default=None, repr=False)
    _rho: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        return self.K.grid

    def masks(self) -> np.ndarray:
        """Nondegeneracy sets N^j(x) for every x, one row per base point."""
        if math.isnan(self.a):
            raise KernelError(f"threshold a_{self.j} not calibrated yet")
        if self._masks is None:
            self._masks = nondegeneracy_matrix(self.K, self.a)
        return self._masks

    def rho(self) -> np.ndarray:
        """rho_delta^j in lattice units, memoized for this j."""
        if self._rho is None:
            self._rho = rho_matrix(self.grid, self.masks(), self.eta.delta, self.workers)
        return self._rho

    def with_threshold(self, a: float) -> "DiffusionState":
        return replace(self, a=float(a), _masks=None, _rho=None)


def initial_state(K: TabulatedKernel, lam: float, mu_hat: float, delta: Optional[float] = None,
                  workers: int = 1) -> DiffusionState:
    """State j = 0 with ``a_0 = lam`` and ``delta = mu_hat / 3^(d+1)`` unless given."""
    g = K.grid
    if delta is None:
        delta = mu_hat / 3 ** (g.dim + 1)
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")
    c_a, c_b = normalization_constants(g.dim, K.s)
    eta = EtaParams(c_a, c_b, K.s, delta,
                    kappa1=eta1_safety_factor(g, c_a),
                    kappa2=eta2_safety_factor(g, K.s, c_b))
    return DiffusionState(j=0, a=float(lam), K=K, eta=eta, domination_constant=1.0,
                          mu_hat=float(mu_hat), lam=float(lam), workers=workers)


def diffuse_step(state: DiffusionState, base: TabulatedKernel, workers: Optional[int] = None,
                 localization_check: bool = True) -> DiffusionState:
    """Build K^{j+1} from K^j and the base kernel; the new threshold is left uncalibrated."""
    g = state.grid
    workers = state.workers if workers is None else workers
    rho = state.rho()
    e = state.eta
    eta1 = Eta1(g, rho, e.c_a, e.kappa1)
    eta2 = Eta2(g, e.s, e.c_b, e.kappa2)
    K_next = combine_kernels(state.K, base, eta1, eta2, workers=workers,
                             localization_check=localization_check)
    K_next.kernel_id = f"K^{state.j + 1}[{base.kernel_id}]"
    return DiffusionState(j=state.j + 1, a=math.nan, K=K_next, eta=e,
                          domination_constant=2.0 * (state.domination_constant + 1.0),
                          mu_hat=state.mu_hat, lam=state.lam, rho_prev=rho, workers=workers)


def energy_domination_ratio(Kj: TabulatedKernel, K: TabulatedKernel, C: float, u, j: int = 0,
                            ball: Optional[Ball] = None, dilation: float = 9.0) -> float:
    """``E_{K^j}(u) / (C E_K(u))``, optionally with ``B x B`` against ``dilation^j B x dilation^j B``.

    Values ``<= 1`` confirm the (local) energy domination.  Returns 0 when
    both sides vanish.
    """
    from .forms import restricted_energy, energy
    from .grid import GridFunction

    u = u if isinstance(u, GridFunction) else GridFunction(Kj.grid, u)
    if ball is None:
        top, bottom = energy(Kj, u).value, energy(K, u).value
    else:
        inner = np.flatnonzero(ball_mask(Kj.grid, ball))
        outer = np.flatnonzero(ball_mask(Kj.grid, ball.scaled(dilation ** j)))
        top = restricted_energy(Kj, u, inner).value
        bottom = restricted_energy(K, u, outer).value
    if top == 0.0:
        return 0.0
    return top / (C * bottom) if bottom > 0 else math.inf
