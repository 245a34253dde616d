"""Discrete Lax-Oleinik semigroup and weak KAM solutions.

The one-step action of a move y -> x with lifted displacement D over a time
step h is

    c_h(y, x) = |D|^2 / (2h) - h (V(y) + V(x)) / 2 + sign * <P, D>,

sign = -1 for L^- = |v|^2/2 - V - <P,v> and +1 for L^+.  Moves faster than
v_max are absent edges (stored as +inf, never as a large float).

Conventions: the forward operator is (T u)(x) = min_y [u(y) + c_h(y, x)], the
backward one is (T* u)(y) = min_x [c_h(y, x) + u(x)], and the fixed points
satisfy T u = u + h E, T* u* = u* + h E.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError
from .torus import ClosedForm, Potential, TorusGrid, eval_potential

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OneStepCost:
    """Banded storage of c_h: ``values[x, j]`` is the cost of the move
    ``pred[x, j] -> x`` along the lattice displacement ``offsets[j] * dx``."""
    grid: TorusGrid
    h: float
    v_max: float
    sign: int
    offsets: np.ndarray
    pred: np.ndarray
    values: np.ndarray

    @property
    def succ(self) -> np.ndarray:
        """``succ[y, j]``: the target of the move from y along ``offsets[j]``."""
        return self._succ()[0]

    @property
    def succ_values(self) -> np.ndarray:
        """``succ_values[y, j]``: cost of the move ``y -> succ[y, j]``."""
        return self._succ()[1]

    def _succ(self):
        cached = self.__dict__.get("_succ_pair")
        if cached is None:
            succ = np.stack([self.grid.shifted(o) for o in self.offsets], axis=1)
            vals = self.values[succ, np.arange(self.offsets.shape[0])[None, :]]
            cached = (succ, vals)
            object.__setattr__(self, "_succ_pair", cached)
        return cached

    def matrix(self) -> np.ndarray:
        """Dense c_h(y, x), minimized over lifts; +inf marks absent edges."""
        n = self.grid.n_nodes
        C = np.full((n, n), np.inf)
        tgt = np.broadcast_to(np.arange(n)[:, None], self.pred.shape)
        np.minimum.at(C, (self.pred.ravel(), tgt.ravel()), self.values.ravel())
        return C


def lattice_offsets(grid: TorusGrid, radius: float) -> np.ndarray:
    """Integer displacement vectors o with |o| dx <= radius."""
    r = int(np.floor(radius / grid.spacing * (1 + 1e-12) + 1e-12))
    rng = range(-r, r + 1)
    offs = [o for o in itertools.product(rng, repeat=grid.dim)
            if np.sqrt(sum(v * v for v in o)) * grid.spacing <= radius * (1 + 1e-12) + 1e-15]
    return np.array(offs, dtype=int).reshape(-1, grid.dim)


def default_time_step(grid: TorusGrid, V: Potential) -> float:
    scale = V.scale()
    if scale <= 0:
        return 0.2
    return float(np.clip(5.0 * np.sqrt(grid.spacing) / np.sqrt(scale), 0.02, 0.2))


def one_step_cost(grid: TorusGrid, V: Potential, form: ClosedForm, sign: int,
                  h: float, v_max: float) -> OneStepCost:
    if sign not in (-1, 1):
        raise ConfigurationError("sign must be -1 or +1")
    if not 0 < h <= 1:
        raise ConfigurationError(f"time step h={h} outside (0, 1]")
    if v_max * h < grid.spacing * (1 - 1e-12):
        raise ConfigurationError(
            f"v_max*h = {v_max * h:g} is below the grid spacing {grid.spacing:g}; "
            "nearest-neighbour moves would be inadmissible")
    if form.dim != grid.dim:
        raise ConfigurationError("form.P dimension does not match the grid")
    offsets = lattice_offsets(grid, v_max * h)
    Vn = eval_potential(V, grid)
    pred = np.stack([grid.shifted(-o) for o in offsets], axis=1)
    disp = offsets * grid.spacing
    kinetic = np.sum(disp ** 2, axis=1) / (2.0 * h)
    drift = sign * (disp @ form.P)
    values = kinetic[None, :] + drift[None, :] - 0.5 * h * (Vn[pred] + Vn[:, None])
    return OneStepCost(grid, float(h), float(v_max), int(sign), offsets, pred, values)


def lax_oleinik_step(u: np.ndarray, cost: OneStepCost, backward: bool = False) -> np.ndarray:
    """One min-plus product with the one-step cost (forward or transposed)."""
    if backward:
        return np.min(u[cost.succ] + cost.succ_values, axis=1)
    return np.min(u[cost.pred] + cost.values, axis=1)


@dataclass(frozen=True)
class HalfSolution:
    u: np.ndarray
    E: float
    residual: float
    iterations: int


@dataclass(frozen=True)
class WeakKamSolution:
    u: np.ndarray
    u_star: np.ndarray
    E: float
    E_backward: float
    residual: float
    I: np.ndarray
    aubry: np.ndarray
    iterations: int
    cost: OneStepCost


def solve_weak_kam(cost: OneStepCost, tol: float = 1e-10, max_iters: int = 200_000,
                   relax: float = 0.5, backward: bool = False,
                   u0: np.ndarray | None = None) -> HalfSolution:
    """Normalized value iteration for T u = u + h E.

    The iterate is averaged with its image (``relax`` in (0, 1]); relax=1 is
    plain value iteration, which oscillates when the critical cycles of the
    action graph have a common period > 1 (rotation regimes).  Stops when
    sup |T u - u - h E| <= tol, with h E the midrange of T u - u.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    if not 0 < relax <= 1:
        raise ConfigurationError("relax must lie in (0, 1]")
    u = np.zeros(cost.grid.n_nodes) if u0 is None else np.asarray(u0, float).copy()
    u -= u.min()
    residual = np.inf
    for it in range(1, max_iters + 1):
        Tu = lax_oleinik_step(u, cost, backward)
        diff = Tu - u
        lo, hi = diff.min(), diff.max()
        residual = 0.5 * (hi - lo)
        shift = 0.5 * (hi + lo)
        if residual <= tol:
            return HalfSolution(u - u.min(), shift / cost.h, float(residual), it)
        u = (1.0 - relax) * u + relax * Tu
        u -= u.min()
    raise NumericalError(
        f"value iteration did not converge in {max_iters} iterations "
        f"(last residual {residual:.3e}); check h against dx and v_max")


def solve_backward(cost: OneStepCost, tol: float = 1e-10, max_iters: int = 200_000,
                   relax: float = 0.5) -> HalfSolution:
    return solve_weak_kam(cost, tol, max_iters, relax, backward=True)


def fixed_point_residual(u: np.ndarray, E: float, cost: OneStepCost, backward: bool = False) -> float:
    return float(np.max(np.abs(lax_oleinik_step(u, cost, backward) - u - cost.h * E)))


def rate_function(u: np.ndarray, u_star: np.ndarray, aubry_tol: float | None = None):
    """I = u + u* shifted to min 0, and the discrete Aubry set {I <= aubry_tol}.

    The default tolerance is 1e-3 of the range of I (all nodes when I is flat).
    """
    s = np.asarray(u) + np.asarray(u_star)
    I = s - s.min()
    if aubry_tol is None:
        aubry_tol = 1e-3 * float(I.max())
    aubry = np.flatnonzero(I <= aubry_tol)
    return I, aubry


def weak_kam_pair(cost: OneStepCost, tol: float = 1e-10, max_iters: int = 200_000,
                  relax: float = 0.5, aubry_tol: float | None = None) -> WeakKamSolution:
    """Forward and backward solutions on one cost, gauged so min u = 0 and min (u + u*) = 0."""
    fwd = solve_weak_kam(cost, tol, max_iters, relax)
    bwd = solve_backward(cost, tol, max_iters, relax)
    u = fwd.u
    u_star = bwd.u - np.min(u + bwd.u)
    I, aubry = rate_function(u, u_star, aubry_tol)
    log.debug("weak KAM: E=%.12g (backward %.12g), %d/%d iterations",
              fwd.E, bwd.E, fwd.iterations, bwd.iterations)
    return WeakKamSolution(u, u_star, fwd.E, bwd.E, max(fwd.residual, bwd.residual),
                           I, aubry, max(fwd.iterations, bwd.iterations), cost)
