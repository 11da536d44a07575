import numpy as np
import pytest
from hypothesis import given, strategies as st

from coercivity_lab.forms import (
    energy, form_matrix, fourier_energy, fourier_symbol, fractional_kernel,
    hs_seminorm_local_sq, hs_seminorm_sq, restricted_energy,
)
from coercivity_lab.grid import Ball, Grid, GridError, GridFunction, distance
from coercivity_lab.kernels import KernelError, KernelSpec, TabulatedKernel, symmetrize, tabulate


def brute_energy(K, u, cells=None):
    g = K.grid
    cells = range(g.size) if cells is None else cells
    tot = 0.0
    for i in cells:
        for j in cells:
            if i != j:
                tot += (u[i] - u[j]) ** 2 * K.entries[i, j]
    return tot * g.cell_measure ** 2


def test_energy_hand_example():
    g = Grid(1, 2)
    K = TabulatedKernel(g, np.array([[0.0, 4.0], [4.0, 0.0]]), 0.5)
    assert energy(K, GridFunction(g, [0.0, 1.0])).value == pytest.approx(2.0, rel=1e-15)


def test_energy_constant_zero():
    g = Grid(2, 6)
    K = tabulate(KernelSpec("stripes", 0.5), g)
    assert energy(K, GridFunction(g, np.full(36, 3.0))).value == 0.0


def test_one_sided_half_energy(rng):
    g = Grid(1, 32)
    K = tabulate(KernelSpec("one_sided", 0.6), g)
    u = GridFunction(g, rng.standard_normal(32))
    assert energy(K, u).value == pytest.approx(0.5 * energy(symmetrize(K), u).value, rel=1e-13)


def test_seminorm_single_cell_indicator():
    g = Grid(1, 4)
    u = GridFunction(g, [1.0, 0.0, 0.0, 0.0])
    # 12 ordered pairs; only those touching cell 0 contribute
    expect = 0.0
    for j in range(1, 4):
        expect += 2 * distance(g, 0, j) ** (-2.0)
    expect *= g.cell_measure ** 2
    assert hs_seminorm_sq(u, 0.5).value == pytest.approx(expect, rel=1e-14)


def test_seminorm_homogeneity(rng):
    g = Grid(1, 16)
    u = GridFunction(g, rng.standard_normal(16))
    assert hs_seminorm_sq(2 * u, 0.3).value == pytest.approx(4 * hs_seminorm_sq(u, 0.3).value, rel=1e-13)


def test_local_seminorm_brute_force(rng):
    g = Grid(1, 32)
    u = GridFunction(g, rng.standard_normal(32))
    B = Ball((0.5,), 0.25)
    cells = [i for i in range(32) if abs(g.centers[i, 0] - 0.5) < 0.25]
    expect = brute_energy(fractional_kernel(g, 0.5), u.values, cells)
    assert hs_seminorm_local_sq(u, 0.5, B).value == pytest.approx(expect, rel=1e-13)


def test_local_seminorm_faults_and_zero():
    g = Grid(1, 32)
    with pytest.raises(GridError):
        hs_seminorm_local_sq(GridFunction(g, np.arange(32.0)), 0.5, Ball((0.5,), 0.01))
    u = GridFunction(g, np.where(np.abs(g.centers[:, 0] - 0.5) < 0.2, 1.0, np.arange(32.0)))
    assert hs_seminorm_local_sq(u, 0.5, Ball((0.5,), 0.2)).value == 0.0


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.3), st.floats(0.0, 0.2))
def test_local_seminorm_monotone(seed, r, extra):
    g = Grid(1, 32)
    u = GridFunction(g, np.random.default_rng(seed).standard_normal(32))
    B, B2 = Ball((0.5,), r), Ball((0.5,), r + extra)
    try:
        small = hs_seminorm_local_sq(u, 0.5, B).value
    except GridError:
        return
    assert small <= hs_seminorm_local_sq(u, 0.5, B2).value * (1 + 1e-13)
    assert small <= hs_seminorm_sq(u, 0.5).value * (1 + 1e-13)


@given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5), st.floats(-3, 3))
def test_energy_shift_and_scale(seed, c, alpha):
    g = Grid(1, 16)
    rng = np.random.default_rng(seed)
    K = TabulatedKernel(g, rng.random((16, 16)), 0.5)
    u = GridFunction(g, rng.standard_normal(16))
    e = energy(K, u).value
    assert energy(K, u + c).value == pytest.approx(e, rel=1e-11, abs=1e-14)
    assert energy(K, alpha * u).value == pytest.approx(alpha ** 2 * e, rel=1e-12, abs=1e-14)


@given(st.integers(0, 2 ** 32 - 1))
def test_energy_additive_and_brute(seed):
    g = Grid(1, 12)
    rng = np.random.default_rng(seed)
    K1 = TabulatedKernel(g, rng.random((12, 12)), 0.5)
    K2 = TabulatedKernel(g, rng.random((12, 12)), 0.5)
    u = GridFunction(g, rng.standard_normal(12))
    assert energy(K1 + K2, u).value == pytest.approx(energy(K1, u).value + energy(K2, u).value, rel=1e-13)
    assert energy(K1, u).value == pytest.approx(brute_energy(K1, u.values), rel=1e-13)


def test_form_matrix_quadratic(rng):
    g = Grid(1, 20)
    K = TabulatedKernel(g, rng.random((20, 20)), 0.5)
    u = rng.standard_normal(20)
    assert u @ form_matrix(K) @ u == pytest.approx(energy(K, GridFunction(g, u)).value, rel=1e-12)
    cells = np.arange(3, 12)
    assert u[cells] @ form_matrix(K, cells) @ u[cells] == pytest.approx(
        restricted_energy(K, GridFunction(g, u), cells).value, rel=1e-12)


@pytest.mark.parametrize("dim,n", [(1, 64), (2, 16)])
def test_fourier_matches_direct(dim, n, rng):
    g = Grid(dim, n)
    K = tabulate(KernelSpec("stripes", 0.5), g)
    for _ in range(5):
        u = GridFunction(g, rng.standard_normal(g.size))
        assert fourier_energy(K, u).value == pytest.approx(energy(K, u).value, rel=1e-12)


def test_fourier_constant_zero():
    g = Grid(1, 64)
    K = fractional_kernel(g, 0.5)
    assert abs(fourier_energy(K, GridFunction(g, np.ones(64))).value) < 1e-12


def test_single_mode():
    g = Grid(1, 64)
    K = fractional_kernel(g, 0.5)
    u = GridFunction(g, np.cos(2 * np.pi * g.centers[:, 0]))
    sigma = fourier_symbol(K)
    # |u_hat|^2 is N^2/4 at frequencies +1 and -1
    expect = sigma[1] * 2 * (64 ** 2 / 4) / 64 * g.cell_measure ** 2
    assert fourier_energy(K, u).value == pytest.approx(expect, rel=1e-12)
    assert energy(K, u).value == pytest.approx(expect, rel=1e-12)


def test_fourier_rejects_non_invariant(rng):
    g = Grid(1, 8)
    K = TabulatedKernel(g, rng.random((8, 8)), 0.5)
    with pytest.raises(KernelError, match="pair"):
        fourier_energy(K, GridFunction(g, np.zeros(8)))


def test_fourier_rejects_free_box():
    g = Grid(1, 8, periodic=False)
    with pytest.raises(GridError):
        fourier_energy(fractional_kernel(g, 0.5), GridFunction(g, np.zeros(8)))


def test_grid_mismatch():
    with pytest.raises(GridError):
        energy(fractional_kernel(Grid(1, 8), 0.5), GridFunction(Grid(1, 4), np.zeros(4)))
