"""Rayleigh-quotient estimator and the global / local coercivity pipelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .forms import form_matrix, fractional_kernel
from .geometry import ball_chain, cover_count_bound, cover_radius, cover_unit_ball
from .grid import Ball, Grid, GridError, GridFunction, ball_mask
from .inkspots import SaturationSpec, saturation_iterations
from .kernels import KernelError, SamplingPlan, TabulatedKernel, check_assumption

__all__ = [
    "ConvergenceError",
    "SoundnessError",
    "RayleighResult",
    "CoercivityReport",
    "PipelineSpec",
    "rayleigh_min",
    "min_generalized",
    "dense_rayleigh_oracle",
    "global_pipeline",
    "local_pipeline",
    "local_quotient",
    "dense_local_oracle",
    "box_center",
]


class ConvergenceError(RuntimeError):
    """The eigen-iteration hit its cap; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


class SoundnessError(AssertionError):
    """The constructive bound exceeded the Rayleigh minimum beyond tolerance."""


@dataclass
class RayleighResult:
    value: float
    vector: np.ndarray  # minimizer in the original coordinates
    sweeps: int
    trace: list  # smallest Ritz value after each sweep
    residual: float

    def diagnostics(self) -> dict:
        return {"sweeps": self.sweeps, "trace": list(self.trace), "residual": self.residual}


def _mean_free_basis(n: int) -> np.ndarray:
    return linalg.null_space(np.ones((1, n)))


def min_generalized(A, B, tol: float = 1e-12, block: int = 8, max_sweeps: int = 5000,
                    seed: int = 0, certify: float = 1e-5):
    """Smallest eigenpair of ``A x = theta B x`` on the mean-zero subspace.

    ``A`` is symmetric positive semidefinite, ``B`` symmetric positive definite
    on mean-zero vectors.  Block shift-invert subspace iteration with
    Rayleigh-Ritz; the best Ritz vector is carried into every new block, so
    the reported quotient never increases between sweeps.  The residual
    check bounds the eigenvalue error by roughly ``certify**2`` times the
    spectral scale.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    if max_sweeps < 1:
        raise ConvergenceError(f"max_sweeps must be >= 1, got {max_sweeps}")
    if n < 2:
        raise GridError("need at least two cells for a Rayleigh quotient")
    Q = _mean_free_basis(n)
    Ah = Q.T @ A @ Q
    Bh = Q.T @ B @ Q
    Ah = (Ah + Ah.T) / 2
    Bh = (Bh + Bh.T) / 2
    m = Ah.shape[0]
    p = min(block, m)
    # shift below zero, proportional to the pencil scale
    scale = np.trace(Ah) / np.trace(Bh)
    sigma = -0.01 * scale if scale > 0 else -1.0
    fac = linalg.cho_factor(Ah - sigma * Bh)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, p))
    trace = []
    best = None
    theta_prev = math.inf
    calm = 0
    for sweep in range(1, max_sweeps + 1):
        W = linalg.cho_solve(fac, Bh @ X)
        if best is not None:
            W = np.column_stack([W, best])
        V, _ = np.linalg.qr(W)
        a = V.T @ Ah @ V
        b = V.T @ Bh @ V
        vals, vecs = linalg.eigh((a + a.T) / 2, (b + b.T) / 2)
        X = V @ vecs[:, :p]
        best = X[:, 0]
        theta = float(vals[0])
        trace.append(theta)
        # converged after two consecutive sweeps with a relative change below tol
        calm = calm + 1 if abs(theta_prev - theta) <= tol * max(abs(theta), np.finfo(float).tiny) else 0
        if calm >= 2:
            break
        theta_prev = theta
    else:
        raise ConvergenceError(f"no convergence after {max_sweeps} sweeps", last=(theta, Q @ best))
    x = best
    r = Ah @ x - theta * (Bh @ x)
    denom = np.linalg.norm(Ah @ x) + abs(theta) * np.linalg.norm(Bh @ x)
    res = float(np.linalg.norm(r) / denom) if denom > 0 else 0.0
    if res > certify:
        raise ConvergenceError(f"residual certification failed: {res:.3e} > {certify:.1e}",
                               last=(theta, Q @ x))
    u = Q @ x
    u = u / np.linalg.norm(u)
    k = int(np.argmax(np.abs(u)))
    if u[k] < 0:
        u = -u
    return RayleighResult(max(theta, 0.0) if theta > -1e-14 * scale else theta, u, sweep, trace, res)


def rayleigh_min(K: TabulatedKernel, s: Optional[float] = None, tol: float = 1e-12, seed: int = 0):
    """``inf E_K(u) / |u|^2_{H^s}`` over nonconstant grid functions.

    Returns ``(value, minimizer GridFunction, diagnostics)``.
    """
    g = K.grid
    if g.size < 4:
        raise GridError("rayleigh_min needs a grid with at least 4 cells")
    s = K.s if s is None else s
    A = form_matrix(K)
    B = form_matrix(fractional_kernel(g, s))
    res = min_generalized(A, B, tol=tol, seed=seed)
    return res.value, GridFunction(g, res.vector), res.diagnostics()


def dense_rayleigh_oracle(K: TabulatedKernel, s: Optional[float] = None) -> float:
    """Full-spectrum generalized eigensolve on the mean-zero subspace."""
    s = K.s if s is None else s
    Q = _mean_free_basis(K.grid.size)
    A = Q.T @ form_matrix(K) @ Q
    B = Q.T @ form_matrix(fractional_kernel(K.grid, s)) @ Q
    return float(linalg.eigh((A + A.T) / 2, (B + B.T) / 2, eigvals_only=True)[0])


@dataclass
class PipelineSpec:
    saturation: SaturationSpec = field(default_factory=SaturationSpec)
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    solver_tol: float = 1e-12
    soundness_tol: float = 0.05
    check_soundness: bool = True
    seed: int = 0
    max_cover_n: int = 2
    chain_pairs: int = 40


@dataclass
class CoercivityReport:
    constructive_bound: Optional[float]
    rayleigh_min: float
    n: Optional[int]
    minimizer: GridFunction
    iterations: dict
    mode: str
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "constructive_bound": self.constructive_bound,
            "rayleigh_min": self.rayleigh_min,
            "n": self.n,
            "iterations": self.iterations,
            **self.extras,
        }


def global_pipeline(K: TabulatedKernel, lam: float, spec: Optional[PipelineSpec] = None) -> CoercivityReport:
    """Saturate the diffusion, bound the constant by ``a_n / C_n`` and compare with the Rayleigh minimum."""
    spec = spec or PipelineSpec()
    a1 = check_assumption(K, lam, "A1", spec.sampling)
    if not a1.mu_hat > 0:
        raise KernelError("precondition failed: kernel does not satisfy (A1) (mu_hat = 0)")
    sat = saturation_iterations(K, lam, a1.mu_hat, spec.saturation)
    C_n = sat.final_state.domination_constant
    a_n = sat.thresholds[-1]
    bound = a_n / C_n
    value, u, diag = rayleigh_min(K, tol=spec.solver_tol, seed=spec.seed)
    sound = bound <= value * (1.0 + spec.soundness_tol)
    extras = {"a_n": a_n, "domination_constant": C_n, "sound": bool(sound),
              "assumption": a1.to_dict(), "saturation": sat.to_dict()}
    rep = CoercivityReport(bound, value, sat.n, u, diag, "global", extras)
    rep.saturation = sat
    if spec.check_soundness and not sound:
        raise SoundnessError(f"constructive bound {bound!r} exceeds rayleigh_min {value!r} "
                             f"by more than {spec.soundness_tol:.0%}")
    return rep


def box_center(grid: Grid) -> np.ndarray:
    """Midpoint of the cell centers."""
    return np.full(grid.dim, (grid.cells_per_axis - 1) * grid.spacing / 2.0)


def _schur(A, inner, outer):
    A11 = A[np.ix_(inner, inner)]
    if outer.size == 0:
        return A11
    A12 = A[np.ix_(inner, outer)]
    A22 = A[np.ix_(outer, outer)]
    try:
        X = linalg.solve(A22, A12.T, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        X = np.linalg.lstsq(A22, A12.T, rcond=None)[0]
    S = A11 - A12 @ X
    return (S + S.T) / 2


def local_quotient(K: TabulatedKernel, outer: Ball, inner: Ball, s: Optional[float] = None,
                   tol: float = 1e-12, seed: int = 0):
    """``inf [energy on outer x outer] / [seminorm^2 on inner]`` over u not constant on the inner ball.

    Cells of ``outer`` outside ``inner`` are eliminated exactly (Schur
    complement), then the pencil is solved on mean-zero functions of the
    inner ball.  Returns ``(value, minimizer on the outer cells, cells, diag)``.
    """
    g = K.grid
    s = K.s if s is None else s
    c2 = np.flatnonzero(ball_mask(g, outer))
    m1 = ball_mask(g, inner)
    if np.any(m1 & ~ball_mask(g, outer)):
        raise GridError("inner ball must lie inside the outer ball")
    in_pos = np.flatnonzero(m1[c2])
    out_pos = np.flatnonzero(~m1[c2])
    if in_pos.size < 2:
        raise GridError(f"inner ball holds {in_pos.size} cell(s); need at least 2")
    A = form_matrix(K, c2)
    F = form_matrix(fractional_kernel(g, s), c2[in_pos])
    S = _schur(A, in_pos, out_pos)
    res = min_generalized(S, F, tol=tol, seed=seed)
    # extend the minimizer harmonically to the annulus
    u = np.zeros(c2.size)
    u[in_pos] = res.vector
    if out_pos.size:
        A12 = A[np.ix_(in_pos, out_pos)]
        A22 = A[np.ix_(out_pos, out_pos)]
        u[out_pos] = -np.linalg.lstsq(A22, A12.T @ res.vector, rcond=None)[0]
    return res.value, u, c2, res.diagnostics()


def dense_local_oracle(K: TabulatedKernel, outer: Ball, inner: Ball, s: Optional[float] = None) -> float:
    """Brute force: 1 / largest eigenvalue of (F padded, A) on mean-zero functions of the outer ball."""
    g = K.grid
    s = K.s if s is None else s
    c2 = np.flatnonzero(ball_mask(g, outer))
    m1 = ball_mask(g, inner)[c2]
    A = form_matrix(K, c2)
    F = np.zeros_like(A)
    idx = np.flatnonzero(m1)
    F[np.ix_(idx, idx)] = form_matrix(fractional_kernel(g, s), c2[idx])
    Q = _mean_free_basis(c2.size)
    Ah = Q.T @ A @ Q
    Fh = Q.T @ F @ Q
    top = linalg.eigh((Fh + Fh.T) / 2, (Ah + Ah.T) / 2, eigvals_only=True)[-1]
    return float(1.0 / top)


def _pair_sample(m, k, rng):
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    if len(pairs) <= k:
        return pairs
    pick = rng.choice(len(pairs), size=k, replace=False)
    return [pairs[int(t)] for t in np.sort(pick)]


def local_pipeline(K: TabulatedKernel, lam: float, spec: Optional[PipelineSpec] = None) -> CoercivityReport:
    """Local estimate: energy on ``B_2 x B_2`` against the seminorm on ``B_1``, plus covering diagnostics."""
    spec = spec or PipelineSpec()
    g = K.grid
    c = box_center(g)
    lo, hi = c - 2.0, c + 2.0
    h = g.spacing
    if np.any(lo < -h / 2 - 1e-12) or np.any(hi > g.box_length - h / 2 + 1e-12):
        raise GridError(f"B_2 around {c.tolist()} exceeds the box [0, {g.box_length})^{g.dim}")
    B1 = Ball(tuple(c), 1.0)
    B2 = Ball(tuple(c), 2.0)
    value, u2, cells2, diag = local_quotient(K, B2, B1, tol=spec.solver_tol, seed=spec.seed)
    u = np.zeros(g.size)
    u[cells2] = u2
    extras = {"skipped": "functions constant on B_1 (zero denominator) are outside the search space",
              "cells_B1": int(np.count_nonzero(ball_mask(g, B1))), "cells_B2": int(cells2.size)}

    # saturation count from the diffusion machinery (diagnostic only)
    n = None
    try:
        a1 = check_assumption(K, lam, "A1", spec.sampling)
        sat = saturation_iterations(K, lam, a1.mu_hat, spec.saturation)
        n = sat.n
        extras["saturation"] = sat.to_dict()
        extras["a_n"] = sat.thresholds[-1]
        extras["domination_constant"] = sat.final_state.domination_constant
    except (KernelError, GridError) as exc:
        extras["saturation_error"] = str(exc)

    geo = {}
    n_cov = n if n is not None else 0
    if n_cov > spec.max_cover_n:
        geo["skipped"] = f"cover at n={n_cov} exceeds max_cover_n={spec.max_cover_n}"
    elif g.dim <= 2:
        cover = cover_unit_ball(n_cov, g.dim)
        geo["n"] = n_cov
        geo["cover_count"] = len(cover)
        geo["cover_bound"] = cover_count_bound(n_cov, g.dim)
        rng = np.random.default_rng(spec.seed)
        lengths, overlaps, cases = [], [], {}
        for i, j in _pair_sample(len(cover), spec.chain_pairs, rng):
            ch = ball_chain(cover.balls[i], cover.balls[j], n_cov)
            cases[ch.case] = cases.get(ch.case, 0) + 1
            lengths.append(len(ch))
            if ch.case == "chain":
                overlaps.append(ch.final_overlap)
        geo["chain_cases"] = cases
        geo["max_chain_length"] = max(lengths) if lengths else 0
        geo["chain_length_bound"] = 2 + 6 * 5 ** n_cov
        geo["min_final_overlap"] = min(overlaps) if overlaps else None
        # small-ball constants on cover balls (shifted to the box center)
        dil = 5.0 ** n_cov
        consts, skipped = [], 0
        for b in cover.balls:
            cb = Ball(tuple(np.asarray(b.center) + c), b.radius)
            big = cb.scaled(dil)
            inside = np.all(np.asarray(big.center) - big.radius >= -h / 2) and \
                np.all(np.asarray(big.center) + big.radius <= g.box_length - h / 2)
            if not inside or np.count_nonzero(ball_mask(g, cb)) < 2:
                skipped += 1
                continue
            consts.append(local_quotient(K, big, cb, tol=spec.solver_tol, seed=spec.seed)[0])
        geo["small_ball_min_constant"] = min(consts) if consts else None
        geo["small_ball_tested"] = len(consts)
        geo["small_ball_skipped"] = skipped
    extras["geometry"] = geo
    bound = None
    if "a_n" in extras:
        bound = extras["a_n"] / extras["domination_constant"]
    return CoercivityReport(bound, value, n, GridFunction(g, u), diag, "local", extras)
