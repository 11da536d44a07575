import numpy as np
import pytest
from hypothesis import given, strategies as st

import coercivity_lab.coercivity as co
from coercivity_lab.coercivity import (
    ConvergenceError, PipelineSpec, SoundnessError, dense_local_oracle, dense_rayleigh_oracle,
    global_pipeline, local_pipeline, local_quotient, min_generalized, rayleigh_min,
)
from coercivity_lab.forms import energy, hs_seminorm_local_sq, hs_seminorm_sq, restricted_energy
from coercivity_lab.grid import Ball, Grid, GridError, GridFunction, ball_mask
from coercivity_lab.kernels import KernelSpec, TabulatedKernel, tabulate


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_fractional_quotient_is_lambda(lam):
    g = Grid(1, 48)
    K = tabulate(KernelSpec("fractional_laplacian", 0.5, lam), g)
    val, u, diag = rayleigh_min(K)
    assert val == pytest.approx(lam, rel=1e-10)
    assert abs(u.values.mean()) < 1e-10


@pytest.mark.parametrize("variant,params", [("stripes", {}), ("one_sided", {}),
                                            ("tabulated", {"density": 0.8, "seed": 3})])
def test_matches_dense_oracle(variant, params):
    g = Grid(1, 32)
    K = tabulate(KernelSpec(variant, 0.5, 1.0, params), g)
    val, u, diag = rayleigh_min(K)
    assert val == pytest.approx(dense_rayleigh_oracle(K), rel=1e-8)
    # the returned vector attains the value
    q = energy(K, u).value / hs_seminorm_sq(u, 0.5).value
    assert q == pytest.approx(val, rel=1e-8)
    assert diag["residual"] <= 1e-5


def test_matches_dense_oracle_2d():
    g = Grid(2, 10)
    K = tabulate(KernelSpec("directional", 0.5, 1.0, {"half_angle": 0.785398, "two_sided": True}), g)
    assert rayleigh_min(K)[0] == pytest.approx(dense_rayleigh_oracle(K), rel=1e-8)


@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_scale_covariance(c, seed):
    g = Grid(1, 24)
    K = tabulate(KernelSpec("tabulated", 0.5, 1.0, {"density": 0.7, "seed": seed}), g)
    cK = TabulatedKernel(g, c * K.entries, K.s)
    assert rayleigh_min(cK)[0] == pytest.approx(c * rayleigh_min(K)[0], rel=1e-8)


@given(st.integers(0, 1000))
def test_monotone_under_addition(seed):
    g = Grid(1, 24)
    K1 = tabulate(KernelSpec("stripes", 0.5), g)
    extra = np.random.default_rng(seed).random((24, 24))
    np.fill_diagonal(extra, 0)
    K2 = TabulatedKernel(g, K1.entries + extra, 0.5)
    assert rayleigh_min(K2)[0] >= rayleigh_min(K1)[0] * (1 - 1e-10)


def test_min_generalized_rejects_bad_input():
    with pytest.raises(GridError):
        rayleigh_min(tabulate(KernelSpec("stripes", 0.5), Grid(1, 3)))
    A = np.eye(6) - 1 / 6
    with pytest.raises(ConvergenceError):
        min_generalized(A, A, max_sweeps=0)
    with pytest.raises(ConvergenceError) as ei:
        min_generalized(np.diag(np.arange(1.0, 7.0)) - 0, A + np.eye(6) / 6, max_sweeps=1)
    assert ei.value.last is not None


@pytest.fixture(scope="module")
def free_box():
    g = Grid(1, 32, box_length=4.0, periodic=False)
    K = tabulate(KernelSpec("stripes", 0.5, 1.0, {"width": 0.25}), g)
    return g, K


def test_local_quotient_matches_oracle(free_box):
    g, K = free_box
    c = co.box_center(g)
    B1, B2 = Ball(tuple(c), 1.0), Ball(tuple(c), 2.0)
    val = local_quotient(K, B2, B1)[0]
    assert val == pytest.approx(dense_local_oracle(K, B2, B1), rel=1e-8)


def test_local_quotient_is_a_lower_bound(free_box, rng):
    g, K = free_box
    c = co.box_center(g)
    B1, B2 = Ball(tuple(c), 1.0), Ball(tuple(c), 2.0)
    val = local_quotient(K, B2, B1)[0]
    c2 = np.flatnonzero(ball_mask(g, B2))
    c1 = np.flatnonzero(ball_mask(g, B1))
    for _ in range(20):
        u = GridFunction(g, rng.standard_normal(g.size))
        den = hs_seminorm_local_sq(u, 0.5, B1).value
        q2 = restricted_energy(K, u, c2).value / den
        q1 = restricted_energy(K, u, c1).value / den
        assert q2 >= q1 * (1 - 1e-12)
        assert q2 >= val * (1 - 1e-10)


def test_local_pipeline_stripes(free_box):
    g, K = free_box
    rep = local_pipeline(K, 1.0)
    assert rep.rayleigh_min == pytest.approx(dense_local_oracle(K, Ball(tuple(co.box_center(g)), 2.0),
                                                                Ball(tuple(co.box_center(g)), 1.0)), rel=1e-8)
    geo = rep.extras["geometry"]
    if "cover_count" in geo:
        assert geo["cover_count"] <= geo["cover_bound"]
        assert geo["max_chain_length"] <= geo["chain_length_bound"]


def test_local_box_too_small():
    g = Grid(1, 24, box_length=3.0, periodic=False)
    K = tabulate(KernelSpec("fractional_laplacian", 0.5), g)
    with pytest.raises(GridError, match="exceeds the box"):
        local_pipeline(K, 1.0)


def test_global_pipeline_stripes():
    g = Grid(1, 64)
    K = tabulate(KernelSpec("stripes", 0.5), g)
    rep = global_pipeline(K, 1.0)
    assert rep.extras["sound"]
    assert 0 < rep.constructive_bound <= rep.rayleigh_min
    assert rep.constructive_bound == pytest.approx(rep.extras["a_n"] / rep.extras["domination_constant"])


def test_soundness_fault(monkeypatch):
    g = Grid(1, 32)
    K = tabulate(KernelSpec("fractional_laplacian", 0.5), g)
    real = co.rayleigh_min

    def low(*a, **k):
        v, u, d = real(*a, **k)
        return v * 1e-3, u, d

    monkeypatch.setattr(co, "rayleigh_min", low)
    with pytest.raises(SoundnessError):
        global_pipeline(K, 1.0)
    rep = global_pipeline(K, 1.0, PipelineSpec(check_soundness=False))
    assert not rep.extras["sound"]


def test_global_scale_covariance():
    g = Grid(1, 64)
    K = tabulate(KernelSpec("stripes", 0.5), g)
    t = 3.0
    tK = TabulatedKernel(g, t * K.entries, K.s)
    r1 = global_pipeline(K, 1.0)
    r2 = global_pipeline(tK, t)
    assert r2.rayleigh_min == pytest.approx(t * r1.rayleigh_min, rel=1e-10)
    assert r2.constructive_bound == pytest.approx(t * r1.constructive_bound, rel=1e-10)
    u1 = r1.minimizer.values / np.linalg.norm(r1.minimizer.values)
    u2 = r2.minimizer.values / np.linalg.norm(r2.minimizer.values)
    assert min(np.abs(u1 - u2).max(), np.abs(u1 + u2).max()) < 1e-8
