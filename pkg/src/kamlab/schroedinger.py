"""Twisted Feynman-Kac generators and their Perron eigenpairs.

The generator acting on periodic grid functions is

    (G f)(x) = 1/(2 beta dx^2) sum_{j, +-} [exp(-+ sign beta P_j dx) f(x +- e_j dx) - f(x)]
               + beta V(x) f(x),

the nearest-neighbour discretization of exp(-sign beta <P,x>) (Delta/(2 beta) + beta V)
exp(sign beta <P,x>) with the twist carried by the hopping weights, so G stays
periodic.  Its semigroup has kernel weight exp(+beta int V), which makes the
principal eigenfunction concentrate where V is maximal, like the Mather
measure of |v|^2/2 - V.  E_beta := -lambda_max(G) / beta.

sign=+1 gives the forward operator; its transpose is the sign=-1 (backward) one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigs, expm_multiply, splu

from .errors import ConfigurationError, NumericalError
from .torus import ClosedForm, Potential, TorusGrid, eval_potential

log = logging.getLogger(__name__)

TWIST_LIMIT = 30.0


@dataclass(frozen=True)
class TwistedGenerator:
    grid: TorusGrid
    beta: float
    sign: int
    P: np.ndarray
    matrix: sp.csr_matrix

    def __matmul__(self, f):
        return self.matrix @ f

    @property
    def T(self) -> "TwistedGenerator":
        return TwistedGenerator(self.grid, self.beta, -self.sign, self.P, self.matrix.T.tocsr())


@dataclass(frozen=True)
class PerronResult:
    lam: float
    vector: np.ndarray
    iterations: int
    lower: float
    upper: float
    residual: float


@dataclass(frozen=True)
class EigenPair:
    beta: float
    E_beta: float
    psi: np.ndarray
    psi_star: np.ndarray
    residual_right: float
    residual_left: float
    iterations: int
    lam: float
    spectral_gap: float | None = None


def assemble_twisted_generator(grid: TorusGrid, V: Potential, form: ClosedForm,
                               beta: float, sign: int = 1) -> TwistedGenerator:
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    if sign not in (-1, 1):
        raise ConfigurationError("sign must be -1 or +1")
    if form.dim != grid.dim:
        raise ConfigurationError("form.P dimension does not match the grid")
    dx = grid.spacing
    twist = beta * form.P * dx
    if np.any(np.abs(twist) > TWIST_LIMIT):
        raise ConfigurationError(
            f"|beta P dx| = {np.abs(twist).max():.3g} exceeds {TWIST_LIMIT}; hopping weights overflow")
    n = grid.n_nodes
    hop = 1.0 / (2.0 * beta * dx * dx)
    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for j in range(grid.dim):
        for s in (1, -1):
            off = np.zeros(grid.dim, dtype=int)
            off[j] = s
            rows.append(idx)
            cols.append(grid.shifted(off))
            vals.append(np.full(n, hop * np.exp(-s * sign * twist[j])))
    diag = -2.0 * grid.dim * hop + beta * eval_potential(V, grid)
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return TwistedGenerator(grid, float(beta), int(sign), form.P.copy(), M)


def _collatz_wielandt(A, v):
    r = (A @ v) / v
    return float(r.min()), float(r.max())


def perron_eigenpair(G, tol: float = 1e-12, max_iters: int = 10_000,
                     warmup: int = 200) -> PerronResult:
    """Principal eigenpair of an irreducible Metzler matrix.

    Power iteration on M = I + delta G (delta below 1/max|diag| keeps M
    entrywise positive on the stencil), then inverse iteration with the
    adaptive shift sigma = upper Collatz-Wielandt bound + margin.  Since
    sigma > lambda_max, sigma - G is a nonsingular M-matrix with a positive
    inverse, so every iterate stays positive.  Stops when the Collatz-Wielandt
    bracket  min (Gv/v) <= lambda <= max (Gv/v)  is narrower than tol * max(1, |lambda|),
    or than the rounding floor 64 eps ||G||_inf when that is larger.
    """
    A = G.matrix if isinstance(G, TwistedGenerator) else sp.csr_matrix(G)
    n = A.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lo, hi = _collatz_wielandt(A, v)
    # Gv/v carries rounding of order eps * (row norm of G); no bracket can beat that
    floor = 64 * np.finfo(float).eps * float(abs(A).sum(axis=1).max())
    scale = lambda: max(1.0, abs(0.5 * (lo + hi)), floor / tol)
    it = 0
    if hi - lo > tol * scale():
        delta = 0.9 / max(1e-300, float(np.abs(A.diagonal()).max()))
        M = sp.identity(n, format="csr") + delta * A
        for _ in range(warmup):
            v = M @ v
            v /= np.linalg.norm(v)
            it += 1
        lo, hi = _collatz_wielandt(A, v)
    ident = sp.identity(n, format="csc")
    Acsc = A.tocsc()
    sigma = None
    lu = None
    while hi - lo > tol * scale():
        if it >= max_iters:
            raise NumericalError(
                f"Perron iteration did not converge in {max_iters} iterations; "
                f"eigenvalue bracket [{lo:.15g}, {hi:.15g}] (spectral gap may be degenerate)")
        target = hi + max(1e-9 * (hi - lo), 1e-13 * scale())
        if sigma is None or abs(target - sigma) > 0.5 * (sigma - lo):
            sigma = target
            lu = splu((sigma * ident - Acsc).tocsc())
        w = lu.solve(v)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise NumericalError("inverse iteration lost positivity")
        v = w / np.linalg.norm(w)
        lo_new, hi_new = _collatz_wielandt(A, v)
        lo, hi = max(lo, lo_new), min(hi, hi_new)
        it += 1
    lam = float(v @ (A @ v) / (v @ v))
    lam = min(max(lam, lo), hi)
    if np.any(v <= 0):
        raise NumericalError("Perron vector is not strictly positive")
    res = float(np.linalg.norm(A @ v - lam * v) / np.linalg.norm(v))
    return PerronResult(lam, v, it, lo, hi, res)


def left_eigenpair(G: TwistedGenerator, tol: float = 1e-12, max_iters: int = 10_000) -> PerronResult:
    return perron_eigenpair(G.T, tol, max_iters)


def normalize_pair(psi, psi_star, grid: TorusGrid):
    """Rescale so that sum psi* dV = 1 and sum psi psi* dV = 1."""
    psi = np.asarray(psi, float)
    psi_star = np.asarray(psi_star, float)
    if np.any(psi <= 0) or np.any(psi_star <= 0):
        raise ValueError("eigenvectors must be strictly positive")
    dv = grid.volume
    psi_star = psi_star / (psi_star.sum() * dv)
    psi = psi / (np.sum(psi * psi_star) * dv)
    return psi, psi_star


def spectral_gap_estimate(G: TwistedGenerator, lam: float, psi=None, psi_star=None, k: int = 4) -> float:
    """Distance from lambda_max to the nearest other eigenvalue (complex plane).

    Shift-invert Arnoldi around lambda; subdominant eigenvalues of twisted
    operators come in complex pairs, which plain inverse iteration cannot
    resolve.  ``psi``/``psi_star`` are accepted for call compatibility.
    """
    A = G.matrix.tocsc()
    n = A.shape[0]
    k = max(2, min(k, n - 2))
    sigma = lam + 1e-8 * max(1.0, abs(lam))
    vals = eigs(A, k=k, sigma=sigma, which="LM", return_eigenvectors=False)
    vals = np.asarray(vals)
    own = int(np.argmin(np.abs(vals - lam)))
    return float(np.min(np.abs(np.delete(vals, own) - lam)))


def solve_eigenpair(grid: TorusGrid, V: Potential, form: ClosedForm, beta: float,
                    tol: float = 1e-12, max_iters: int = 10_000, with_gap: bool = False) -> EigenPair:
    G = assemble_twisted_generator(grid, V, form, beta, 1)
    right = perron_eigenpair(G, tol, max_iters)
    left = left_eigenpair(G, tol, max_iters)
    if abs(left.lam - right.lam) > 10 * tol * max(1.0, abs(right.lam)):
        raise NumericalError(
            f"left and right Perron eigenvalues differ: {left.lam!r} vs {right.lam!r}")
    psi, psi_star = normalize_pair(right.vector, left.vector, grid)
    gap = None
    if with_gap:
        gap = spectral_gap_estimate(G, right.lam, psi, psi_star)
        if gap < 1e-10 * max(1.0, abs(right.lam)):
            raise NumericalError(f"spectral gap {gap:.3e} is numerically degenerate")
    return EigenPair(float(beta), -right.lam / beta, psi, psi_star, right.residual, left.residual,
                     right.iterations + left.iterations, right.lam, gap)


def quantum_measure(pair: EigenPair, grid: TorusGrid) -> np.ndarray:
    return pair.psi * pair.psi_star * grid.volume


def markov_stationarity_check(pair: EigenPair, G: TwistedGenerator, grid: TorusGrid | None = None):
    """Residuals of the Doob transform L f = psi^-1 [G(psi f) - lambda psi f].

    Returns (row, stationarity): sup |L 1| and || nu L ||_1, both divided by
    max(1, |lambda|) so they compare directly with the eigensolver tolerance.
    """
    grid = grid or G.grid
    A = G.matrix
    lam = -pair.E_beta * pair.beta
    psi, psi_star = pair.psi, pair.psi_star
    scale = max(1.0, abs(lam))
    row = np.max(np.abs((A @ psi) / psi - lam)) / scale
    # nu L = dV * psi*^T (G - lambda) diag(psi)
    nuL = grid.volume * (A.T @ psi_star - lam * psi_star) * psi
    return float(row), float(np.sum(np.abs(nuL)) / scale)


def semigroup_apply(G: TwistedGenerator, f, t: float, transpose: bool = False) -> np.ndarray:
    A = G.matrix.T if transpose else G.matrix
    return expm_multiply(t * A.tocsr(), np.asarray(f, float))


def dense_perron(G: TwistedGenerator):
    """Dense eigen-decomposition oracle for small grids (test use)."""
    A = G.matrix.toarray()
    w, vecs = np.linalg.eig(A)
    k = int(np.argmax(w.real))
    v = np.abs(vecs[:, k].real)
    return float(w[k].real), v / np.linalg.norm(v)
