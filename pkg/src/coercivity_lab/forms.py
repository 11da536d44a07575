"""Quadratic energy forms, Gagliardo seminorms and the Fourier-side cross-check.

The Gagliardo normalization constant is fixed to 1 throughout: every
seminorm here is the bare double sum over ordered cell pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Ball, GridError, GridFunction, ball_mask
from .kernels import KernelError, KernelSpec, TabulatedKernel, tabulate

__all__ = [
    "FormValue",
    "energy",
    "hs_seminorm_sq",
    "hs_seminorm_local_sq",
    "fourier_energy",
    "fourier_symbol",
    "form_matrix",
    "fractional_kernel",
    "restricted_energy",
]


@dataclass(frozen=True)
class FormValue:
    value: float
    pair_count: int
    kernel_id: str

    def to_dict(self) -> dict:
        return {"value": self.value, "pair_count": self.pair_count, "kernel_id": self.kernel_id}


def _check_shared(K: TabulatedKernel, u: GridFunction):
    if K.grid != u.grid:
        raise GridError("kernel and grid function live on different grids")


def _pair_sum(K_entries, values, rows=None, cols=None) -> float:
    # row-wise sums first, then one pairwise reduction over the row totals:
    # the result does not depend on how rows are distributed over workers
    u = values
    if rows is not None:
        Ksub = K_entries[np.ix_(rows, cols)]
        diff = u[rows][:, None] - u[cols][None, :]
    else:
        Ksub = K_entries
        diff = u[:, None] - u[None, :]
    row_totals = np.sum(diff * diff * Ksub, axis=1)
    return float(np.sum(row_totals))


def energy(K: TabulatedKernel, u: GridFunction) -> FormValue:
    """``sum_{i != j} (u_i - u_j)^2 K_ij h^(2d)``."""
    _check_shared(K, u)
    g = K.grid
    val = _pair_sum(K.entries, u.values) * g.cell_measure ** 2
    return FormValue(val, g.size * (g.size - 1), K.kernel_id)


def restricted_energy(K: TabulatedKernel, u: GridFunction, cells) -> FormValue:
    """Energy with both cells of every pair restricted to ``cells``."""
    _check_shared(K, u)
    cells = np.asarray(cells)
    val = _pair_sum(K.entries, u.values, cells, cells) * K.grid.cell_measure ** 2
    return FormValue(val, cells.size * (cells.size - 1), K.kernel_id)


def fractional_kernel(grid, s: float, lam: float = 1.0) -> TabulatedKernel:
    return tabulate(KernelSpec("fractional_laplacian", s, lam), grid)


def hs_seminorm_sq(u: GridFunction, s: float) -> FormValue:
    """Squared Gagliardo seminorm over the whole grid."""
    if not 0 < s < 1:
        raise KernelError(f"order s must lie in (0, 1), got {s!r}")
    return energy(fractional_kernel(u.grid, s), u)


def hs_seminorm_local_sq(u: GridFunction, s: float, B: Ball) -> FormValue:
    """Squared Gagliardo seminorm restricted to cell pairs inside ``B``."""
    cells = np.flatnonzero(ball_mask(u.grid, B))
    if cells.size < 2:
        raise GridError(f"ball {B} contains {cells.size} cell(s); the local seminorm needs at least 2")
    return restricted_energy(fractional_kernel(u.grid, s), u, cells)


def form_matrix(K: TabulatedKernel, cells=None) -> np.ndarray:
    """Symmetric matrix A with ``u^T A u = energy(K, u)`` (optionally on a cell subset)."""
    E = K.entries if cells is None else K.entries[np.ix_(cells, cells)]
    S = E + E.T
    A = np.diag(S.sum(axis=1)) - S
    return A * K.grid.cell_measure ** 2


def _difference_profile(K: TabulatedKernel) -> np.ndarray:
    """Kernel as a function of the periodic index difference; faults if not invariant."""
    g = K.grid
    if not g.periodic:
        raise GridError("Fourier cross-check needs a periodic grid")
    N, d = g.cells_per_axis, g.dim
    prof = K.entries[0].reshape(g.shape)
    lat = g.lattice
    # K[i, j] must equal prof[(j - i) mod N] for every pair
    for i in range(g.size):
        shift = tuple(int(c) for c in lat[i])
        expect = np.roll(prof, shift, axis=tuple(range(d))).reshape(-1)
        row = K.entries[i]
        bad = np.abs(row - expect) > 1e-12 * np.maximum(np.abs(expect), np.abs(row))
        bad[i] = False
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise KernelError(f"kernel is not translation invariant: pair ({i}, {j})")
    return prof


def fourier_symbol(K: TabulatedKernel) -> np.ndarray:
    """``sigma(xi) = sum_t k(t) (2 - 2 cos(2 pi xi.t / N))`` on the frequency lattice."""
    prof = _difference_profile(K)
    khat = np.fft.fftn(prof)
    sigma = 2.0 * (np.real(khat.flat[0]) - np.real(khat))
    return sigma


def fourier_energy(K: TabulatedKernel, u: GridFunction) -> FormValue:
    """Energy of a translation-invariant kernel evaluated on the Fourier side."""
    _check_shared(K, u)
    g = K.grid
    sigma = fourier_symbol(K)
    uhat = np.fft.fftn(u.values.reshape(g.shape))
    val = float(np.sum(np.abs(uhat) ** 2 * sigma)) / g.size * g.cell_measure ** 2
    return FormValue(val, g.size * (g.size - 1), K.kernel_id)
