"""Unit-time action kernel W(y, x) and its finite-beta Feynman-Kac counterpart.

W(y, x) = -min over m-slice grid paths y -> x of the sum of one-step costs
(sign=+1 on the form, trapezoid V, slice duration 1/m), computed as the m-th
min-plus power of the one-step cost matrix.

The Monte Carlo estimator samples Brownian bridges of variance 1/beta from y
to the lifted x and averages exp(beta int V - beta <P, x - y>).  The Gaussian
bridge density is left out, so its log-limit differs from W by the kinetic
term d(y, x)^2 / (2t); ``mc_vs_dp`` adds that correction back.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError
from .schroedinger import EigenPair, TwistedGenerator, semigroup_apply
from .torus import ClosedForm, Potential, TorusGrid, lifted_displacement
from .weak_kam import lax_oleinik_step, one_step_cost

log = logging.getLogger(__name__)

MC_BATCH = 1024


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray   # values[y, x] = W(y, x)
    horizon: float
    slices: int
    lip: float           # reported bound on |W(y, x) - W(y, x')| / d(x, x') for neighbours
    grid: TorusGrid
    v_max: float

    def __call__(self, y: int, x: int) -> float:
        return float(self.values[y, x])


@dataclass(frozen=True)
class McEstimate:
    y: tuple
    x: tuple
    t: float
    beta: float
    estimate: float       # (1/beta) log E[exp(...)]
    stderr: float
    samples: int
    steps: int
    seed: int
    displacement: tuple   # the lift x + k - y used for the form term
    degenerate: bool = False
    lift_ambiguous: bool = False


def minplus_product(A: np.ndarray, B: np.ndarray, chunk: int = 64) -> np.ndarray:
    """C[i, j] = min_k A[i, k] + B[k, j], row blocks at a time."""
    n = A.shape[0]
    C = np.empty((n, B.shape[1]))
    for s in range(0, n, chunk):
        blk = A[s:s + chunk]
        C[s:s + chunk] = np.min(blk[:, :, None] + B[None, :, :], axis=1)
    return C


def minplus_power(C: np.ndarray, m: int) -> np.ndarray:
    """m-fold min-plus power by binary exponentiation."""
    if m < 1:
        raise ValueError("power must be >= 1")
    result = None
    base = C
    while m:
        if m & 1:
            result = base if result is None else minplus_product(result, base)
        m >>= 1
        if m:
            base = minplus_product(base, base)
    return result


def _check_slices(grid: TorusGrid, m: int, v_max: float):
    if int(m) != m or m < 4:
        raise ConfigurationError(f"slice count m={m} must be an integer >= 4")
    if v_max / m < grid.spacing * (1 - 1e-12):
        raise ConfigurationError(
            f"v_max/m = {v_max / m:g} is below the grid spacing {grid.spacing:g}")


def compute_w_kernel(grid: TorusGrid, V: Potential, form: ClosedForm, m: int = 20,
                     v_max: float = 4.0) -> KernelMatrix:
    _check_slices(grid, m, v_max)
    cost = one_step_cost(grid, V, form, +1, 1.0 / m, v_max)
    Cm = minplus_power(cost.matrix(), int(m))
    if not np.all(np.isfinite(Cm)):
        raise ConfigurationError(
            f"some pairs are unreachable in {m} slices with v_max={v_max}; increase v_max")
    lip = v_max + 0.5 * m * grid.spacing + float(np.linalg.norm(form.P)) + V.lipschitz_bound() / m
    return KernelMatrix(-Cm, 1.0, int(m), float(lip), grid, float(v_max))


def dp_kernel_pair(grid: TorusGrid, V: Potential, form: ClosedForm, m: int, v_max: float,
                   y: int, x: int) -> float:
    """W(y, x) by m forward sweeps from a point mass at y (oracle for the squaring)."""
    _check_slices(grid, m, v_max)
    cost = one_step_cost(grid, V, form, +1, 1.0 / m, v_max)
    u = np.full(grid.n_nodes, np.inf)
    u[y] = 0.0
    for _ in range(int(m)):
        u = lax_oleinik_step(u, cost)
    return float(-u[x])


def kernel_lipschitz_observed(W: KernelMatrix) -> float:
    """max |W(y, x) - W(y, x')| / dx over grid neighbours x, x'."""
    g = W.grid
    worst = 0.0
    for j in range(g.dim):
        off = np.zeros(g.dim, dtype=int)
        off[j] = 1
        nb = g.shifted(off)
        worst = max(worst, float(np.max(np.abs(W.values[:, nb] - W.values))))
    return worst / g.spacing


def _levy_bridge(rng, n_paths: int, steps: int, t: float, var: float) -> np.ndarray:
    """Zero-endpoint Brownian bridges at times k t / steps, k = 0..steps, by midpoint refinement."""
    B = np.zeros((n_paths, steps + 1))
    span = steps
    while span > 1:
        half = span // 2
        left = np.arange(0, steps, span)
        mid = left + half
        # conditional law of the midpoint given both ends: mean of ends, variance dt/4 scaled
        sd = np.sqrt(var * (span * t / steps) / 4.0)
        B[:, mid] = 0.5 * (B[:, left] + B[:, left + span]) + sd * rng.standard_normal((n_paths, mid.size))
        span = half
    return B


def feynman_kac_mc(y, x, t: float, beta: float, V: Potential, form: ClosedForm,
                   samples: int = 5000, steps: int = 64, seed: int = 0) -> McEstimate:
    """(1/beta) log E[exp(beta int_0^t V(alpha) ds - beta <P, x - y>)] over bridges y -> x.

    ``steps`` must be a power of two (dyadic midpoint construction).  Samples are
    drawn in fixed batches, batch b seeded by SeedSequence([seed, b]), so the
    estimate does not depend on how the batches are scheduled.
    """
    if samples < 100:
        raise ConfigurationError("samples must be >= 100")
    if steps < 16 or steps & (steps - 1):
        raise ConfigurationError("steps must be a power of two >= 16")
    if t <= 0 or beta <= 0:
        raise ConfigurationError("t and beta must be positive")
    y = np.atleast_1d(np.asarray(y, float))
    x = np.atleast_1d(np.asarray(x, float))
    if y.size != form.dim or x.size != form.dim:
        raise ConfigurationError("points do not match the dimension of the form")
    lifts = lifted_displacement(TorusGrid(form.dim, 8), y, x, k_max=1)
    disp, d2 = lifts[0]
    ambiguous = abs(lifts[1][1] - d2) <= 1e-12
    if ambiguous:
        log.warning("minimal lift from %s to %s is not unique; using %s", y, x, disp)
    form_term = float(form.P @ disp)
    s = np.linspace(0.0, 1.0, steps + 1)
    drift = y[None, :] + s[:, None] * disp[None, :]       # straight line on the cover
    wts = np.full(steps + 1, t / steps)
    wts[[0, -1]] *= 0.5
    logw = np.empty(samples)
    for b, start in enumerate(range(0, samples, MC_BATCH)):
        n = min(MC_BATCH, samples - start)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        paths = drift[None, :, :] + np.stack(
            [_levy_bridge(rng, n, steps, t, 1.0 / beta) for _ in range(form.dim)], axis=2)
        Vp = V(paths.reshape(-1, form.dim)).reshape(n, steps + 1)
        logw[start:start + n] = beta * (Vp @ wts) - beta * form_term
    est = (logsumexp(logw) - np.log(samples)) / beta
    degenerate = bool(np.ptp(logw) <= 1e-12 * max(1.0, float(np.max(np.abs(logw)))))
    if degenerate:
        stderr = 0.0
    else:
        # jackknife on leave-one-out log-means
        M = logw.max()
        w = np.exp(logw - M)
        S = w.sum()
        loo = M + np.log(np.maximum(S - w, np.finfo(float).tiny) / (samples - 1))
        stderr = float(np.sqrt((samples - 1) / samples * np.sum((loo - loo.mean()) ** 2)) / beta)
    return McEstimate(tuple(y), tuple(x), float(t), float(beta), float(est), stderr, int(samples),
                      int(steps), int(seed), tuple(disp), degenerate, bool(ambiguous))


def kinetic_correction(mc: McEstimate) -> float:
    return float(np.dot(mc.displacement, mc.displacement)) / (2.0 * mc.t)


def mc_vs_dp(mc: McEstimate, W: KernelMatrix, slack: float = 0.05, n_sigma: float = 3.0) -> dict:
    """Compare mc.estimate - d^2/(2t) with W(y, x) at the nearest grid nodes.

    Meaningful when the minimizer of W uses the same lift as the bridge; with a
    large twist P, or when the best path runs the other way round the circle,
    W is carried by another lift and the two numbers measure different things.
    """
    if abs(mc.t - W.horizon) > 1e-12:
        raise ValueError(f"MC horizon {mc.t} differs from the kernel horizon {W.horizon}")
    yi = W.grid.node(mc.y)
    xi = W.grid.node(mc.x)
    corrected = mc.estimate - kinetic_correction(mc)
    dp = W(yi, xi)
    err = abs(corrected - dp)
    bound = n_sigma * mc.stderr + slack
    return {"y": list(mc.y), "x": list(mc.x), "beta": mc.beta, "mc": mc.estimate,
            "mc_corrected": corrected, "dp": dp, "error": err, "stderr": mc.stderr,
            "bound": bound, "passed": bool(err <= bound)}


def schilder_limit_check(dp: float, mc_runs) -> dict:
    """|mc(beta) - d^2/(2t) - W(y, x)| along runs of increasing beta on one (y, x) pair."""
    if not mc_runs:
        raise ValueError("no Monte Carlo runs")
    first = mc_runs[0]
    for r in mc_runs[1:]:
        if r.y != first.y or r.x != first.x or r.t != first.t:
            raise ValueError("Monte Carlo runs are for different (y, x, t)")
    betas = [r.beta for r in mc_runs]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("betas must be strictly increasing")
    if isinstance(dp, KernelMatrix):
        dpv = dp(dp.grid.node(first.y), dp.grid.node(first.x))
    else:
        dpv = float(dp)
    errs = [abs(r.estimate - kinetic_correction(r) - dpv) for r in mc_runs]
    return {"betas": betas, "errors": errs, "dp": dpv,
            "decreasing": bool(all(e2 < e1 for e1, e2 in zip(errs, errs[1:])))}


def cosine_defect(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return max(0.0, 1.0 - c)


def eigen_kernel_collinearity(pair: EigenPair, G: TwistedGenerator, t: float | None = None,
                              psi_star=None) -> float:
    """1 - cos(psi, exp(t G^T) psi*).  Default horizon t = 1/beta.

    Pass ``psi_star`` to propagate a different field (negative controls).
    """
    t = 1.0 / pair.beta if t is None else float(t)
    src = pair.psi_star if psi_star is None else np.asarray(psi_star, float)
    out = semigroup_apply(G, src, t, transpose=True)
    return cosine_defect(pair.psi, out)
