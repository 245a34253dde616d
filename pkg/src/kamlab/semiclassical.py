"""The large-beta program: u_beta = -log(psi_beta)/beta against the weak KAM pair.

Checks are pure functions of already computed fields.  Everything that is
compared up to an additive constant goes through ``gauge_align``, which picks
the constant minimizing the sup distance (the midrange of the difference).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .torus import ClosedForm, Potential, TorusGrid, box_mask, eval_potential
from .schroedinger import EigenPair, quantum_measure, solve_eigenpair
from .weak_kam import one_step_cost, weak_kam_pair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepRecord:
    beta: float
    N: int
    E_beta: float
    E: float
    sup_dist_u: float
    sup_dist_ustar: float
    hj_residual: float
    hj_residual_backward: float
    ldp_errors: tuple
    varadhan_error: float


@dataclass(frozen=True)
class LdpTable:
    betas: np.ndarray
    errors: np.ndarray          # shape (n_sets, n_betas)
    log_mass: np.ndarray        # (1/beta) log nu_beta(A)
    inf_I: np.ndarray           # min_A I, per set and beta
    monotone: np.ndarray        # err(A, beta_max) < err(A, beta_min)
    decreasing: np.ndarray      # strictly decreasing along the whole sweep
    labels: list = field(default_factory=list)


def normalized_log(pair: EigenPair):
    """(u_beta, u*_beta) = -log(psi)/beta, -log(psi*)/beta, each shifted to min 0."""
    if np.any(pair.psi <= 0) or np.any(pair.psi_star <= 0):
        raise ValueError("eigenvectors must be strictly positive")
    u = -np.log(pair.psi) / pair.beta
    us = -np.log(pair.psi_star) / pair.beta
    return u - u.min(), us - us.min()


def gauge_align(a, b):
    """Shift b by one constant to minimize sup |a - b|; returns (shifted b, sup error)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = a - b
    c = 0.5 * (d.max() + d.min())
    return b + c, float(0.5 * (d.max() - d.min()))


def _axis_diffs(u, grid: TorusGrid):
    arr = u.reshape(grid.shape)
    dx = grid.spacing
    grads, lap = [], np.zeros_like(arr)
    for j in range(grid.dim):
        up = np.roll(arr, -1, axis=j)
        dn = np.roll(arr, 1, axis=j)
        grads.append(((up - dn) / (2 * dx)).ravel())
        lap += (up + dn - 2 * arr) / dx ** 2
    return np.stack(grads, axis=1), lap.ravel()


def viscous_hj_residual(u_beta, beta: float, V: Potential, form: ClosedForm, E_beta: float,
                        grid: TorusGrid, backward: bool = False) -> float:
    """sup_x | -lap u / (2 beta) + |grad u + P|^2 / 2 + V + E_beta |  (central differences).

    The backward variant evaluates the same Hamiltonian at -grad u*, i.e.
    |-grad u* + P|^2.  E_beta enters with a plus sign because E_beta is minus
    the principal eigenvalue over beta.
    """
    u = np.asarray(u_beta, float)
    grad, lap = _axis_diffs(u, grid)
    p = -grad + form.P[None, :] if backward else grad + form.P[None, :]
    res = -lap / (2 * beta) + 0.5 * np.sum(p ** 2, axis=1) + eval_potential(V, grid) + E_beta
    return float(np.max(np.abs(res)))


def _as_mask(s, n):
    s = np.asarray(s)
    if s.dtype == bool:
        if s.shape != (n,):
            raise ValueError("mask length does not match the measure")
        return s
    mask = np.zeros(n, dtype=bool)
    mask[s.astype(int)] = True
    return mask


def _per_beta(obj, k):
    """obj is either shared by all betas or a list with one entry per beta."""
    return obj if k is None else obj[k]


def ldp_check(measures, I, test_sets, labels=None) -> LdpTable:
    """err(A, beta) = |(1/beta) log nu_beta(A) + min_A I| for every set and beta.

    ``measures`` is a list of (beta, nu).  ``I`` is one field shared by all
    betas or a list of fields (one per beta, for beta-dependent grids); the
    same holds for each entry of ``test_sets`` (node indices or boolean masks).
    """
    betas = np.array([float(b) for b, _ in measures])
    if np.any(np.diff(betas) <= 0):
        raise ValueError("betas must be strictly increasing")
    per_I = isinstance(I, (list, tuple))
    n_sets = len(test_sets)
    errs = np.empty((n_sets, betas.size))
    lm = np.empty_like(errs)
    infI = np.empty_like(errs)
    for k, (beta, nu) in enumerate(measures):
        nu = np.asarray(nu, float)
        Ik = np.asarray(I[k] if per_I else I, float)
        for a, s in enumerate(test_sets):
            sk = s[k] if isinstance(s, (list, tuple)) else s
            mask = _as_mask(sk, nu.size)
            if not mask.any():
                raise ValueError(f"test set {labels[a] if labels else a} is empty")
            mass = float(nu[mask].sum())
            lm[a, k] = np.log(mass) / beta if mass > 0 else -np.inf
            infI[a, k] = float(Ik[mask].min())
            errs[a, k] = abs(lm[a, k] + infI[a, k])
    monotone = errs[:, -1] < errs[:, 0]
    decreasing = np.all(np.diff(errs, axis=1) < 0, axis=1)
    return LdpTable(betas, errs, lm, infI, monotone, decreasing,
                    list(labels) if labels else [str(a) for a in range(n_sets)])


def default_test_sets(I, grid: TorusGrid, levels=(0.25, 0.5)):
    """Sub-level sets {I <= l max I} and super-level sets {I >= l max I}."""
    I = np.asarray(I, float)
    top = float(I.max())
    sets, labels = [], []
    for lv in levels:
        sets.append(np.flatnonzero(I <= lv * top))
        labels.append(f"I<={lv:g}max")
        sets.append(np.flatnonzero(I >= lv * top))
        labels.append(f"I>={lv:g}max")
    return sets, labels


def varadhan_check(measures, F, I) -> np.ndarray:
    """err(beta) = |(1/beta) log sum e^{beta F} nu_beta - max(F - I)|, by log-sum-exp."""
    out = []
    per_F = isinstance(F, (list, tuple))
    per_I = isinstance(I, (list, tuple))
    for k, (beta, nu) in enumerate(measures):
        nu = np.asarray(nu, float)
        Fk = np.asarray(F[k] if per_F else F, float)
        Ik = np.asarray(I[k] if per_I else I, float)
        pos = nu > 0
        lhs = logsumexp(beta * Fk[pos], b=nu[pos]) / beta
        out.append(abs(lhs - float(np.max(Fk - Ik))))
    return np.array(out)


def kernel_representation_check(u, u_star, W) -> float:
    """sup_x |u(x) - min_z (-W(z, x) + u*(z))| after one-constant gauge alignment."""
    Wv = np.asarray(getattr(W, "values", W), float)
    rhs = np.min(-Wv + np.asarray(u_star, float)[:, None], axis=0)
    return gauge_align(u, rhs)[1]


def run_sweep(betas, V: Potential, form: ClosedForm, dim: int = 1, nodes_per_beta: int = 4,
              N: int | None = None, h: float = 0.05, v_max: float = 4.0,
              test_boxes=((0.4, 0.6),), F: Potential | None = None, tol: float = 1e-12):
    """One eigenpair and one weak KAM pair per beta on grids N = nodes_per_beta * beta
    (or a fixed N if given).  Returns the records and the LDP table."""
    from .torus import build_grid

    betas = [float(b) for b in betas]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("betas must be strictly increasing")
    F = F if F is not None else Potential({1: 0.3} if dim == 1 else {(1, 0): 0.3})
    rows = []
    measures, Is, sets, Fs = [], [], [[] for _ in test_boxes], []
    for beta in betas:
        n = int(N) if N is not None else max(8, int(round(nodes_per_beta * beta)))
        grid = build_grid(dim, n)
        pair = solve_eigenpair(grid, V, form, beta, tol)
        wk = weak_kam_pair(one_step_cost(grid, V, form, -1, h, v_max))
        ub, usb = normalized_log(pair)
        nu = quantum_measure(pair, grid)
        masks = [box_mask(grid, lo, hi) for lo, hi in test_boxes]
        for s, m in zip(sets, masks):
            s.append(m)
        Fk = eval_potential(F, grid)
        ldp = ldp_check([(beta, nu)], wk.I, [[m] for m in masks])
        var = varadhan_check([(beta, nu)], Fk, wk.I)
        us_aligned = wk.u_star - wk.u_star.min()
        rows.append(SweepRecord(
            beta, n, pair.E_beta, wk.E,
            float(np.max(np.abs(ub - wk.u))), float(np.max(np.abs(usb - us_aligned))),
            viscous_hj_residual(ub, beta, V, form, pair.E_beta, grid),
            viscous_hj_residual(usb, beta, V, form, pair.E_beta, grid, backward=True),
            tuple(float(e) for e in ldp.errors[:, 0]), float(var[0])))
        measures.append((beta, nu))
        Is.append(wk.I)
        Fs.append(Fk)
        log.info("sweep beta=%g N=%d E_beta=%.6g |u_b-u|=%.3g", beta, n, pair.E_beta, rows[-1].sup_dist_u)
    table = ldp_check(measures, Is, sets, [f"[{lo:g},{hi:g}]" for lo, hi in test_boxes])
    return rows, table, varadhan_check(measures, Fs, Is)
