"""Discrete Kantorovich problem for the cost c(x, y) = -W(y, x) and its duality certificates.

The primal is solved exactly with a transportation (network) simplex:
northwest-corner start, Dantzig pricing, and Bland's smallest-index rule for
both entering and leaving cells whenever the previous pivot was degenerate.
Every cycle of the simplex consists of degenerate pivots only, so under this
switch all of them are Bland pivots and the method terminates.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .torus import check_measure

MASS_TOL = 1e-10


@dataclass(frozen=True)
class TransportProblem:
    src: np.ndarray       # node indices of supp(mu_plus)
    dst: np.ndarray       # node indices of supp(mu_minus)
    a: np.ndarray         # mu_plus weights on src
    b: np.ndarray         # mu_minus weights on dst
    cost: np.ndarray      # cost[i, j] = c(src[i], dst[j])
    full_cost: np.ndarray  # c(x, y) on all grid pairs
    variant: str


@dataclass(frozen=True)
class TransportPlan:
    weights: np.ndarray   # shape (len(src), len(dst))
    primal: float
    iterations: int
    row_potential: np.ndarray
    col_potential: np.ndarray


@dataclass(frozen=True)
class DualPair:
    f: np.ndarray
    g: np.ndarray
    value: float
    max_violation: float
    max_violation_grid: float


def kantorovich_cost(W: np.ndarray, I: np.ndarray | None = None, variant: str = "plain") -> np.ndarray:
    """c(x, y) = -W(y, x), plus I(y) for the tilde variant."""
    c = -np.asarray(W).T
    if variant == "tilde":
        if I is None:
            raise ValueError("the tilde cost needs the rate function I")
        c = c + np.asarray(I)[None, :]
    elif variant != "plain":
        raise ValueError(f"unknown variant {variant!r}")
    return c


def build_problem(mu_plus, mu_minus, W, I=None, variant: str = "plain") -> TransportProblem:
    a_full = np.asarray(mu_plus, float)
    b_full = np.asarray(mu_minus, float)
    for name, m in (("mu_plus", a_full), ("mu_minus", b_full)):
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"{name} has mass {m.sum()!r}, expected 1")
    check_measure(a_full, MASS_TOL)
    check_measure(b_full, MASS_TOL)
    src = np.flatnonzero(a_full > 0)
    dst = np.flatnonzero(b_full > 0)
    if src.size == 0 or dst.size == 0:
        raise ValueError("empty support")
    full = kantorovich_cost(W, I, variant)
    cost = full[np.ix_(src, dst)]
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost is not finite on the supports")
    return TransportProblem(src, dst, a_full[src], b_full[dst], cost, full, variant)


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    m, n = a.size, b.size
    a, b = a.copy(), b.copy()
    x = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        q = min(a[i], b[j])
        x[i, j] = q
        basis.append((i, j))
        a[i] -= q
        b[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return x, basis


def _potentials(cost, basis, m, n):
    adj = [[] for _ in range(m + n)]
    for (i, j) in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if np.isnan(pot[nb]):
                if node < m:
                    pot[nb] = cost[node, nb - m] - pot[node]
                else:
                    pot[nb] = cost[nb, node - m] - pot[node]
                queue.append(nb)
    if np.any(np.isnan(pot)):
        raise NumericalError("simplex basis is not a spanning tree")
    return pot[:m], pot[m:], adj


def _tree_path(adj, start, goal):
    prev = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in prev:
                prev[nb] = node
                queue.append(nb)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def solve_transport_lp(a, b, cost, tol: float = 1e-12, max_pivots: int | None = None) -> TransportPlan:
    """Exact optimum of min <cost, x> over couplings of a and b."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    cost = np.asarray(cost, float)
    m, n = cost.shape
    x, basis = _northwest_corner(a, b)
    basis_set = set(basis)
    scale = max(1.0, float(np.max(np.abs(cost))))
    eps = tol * scale
    if max_pivots is None:
        max_pivots = 50 * (m + n) * max(m, n) + 1000
    degenerate = False
    pivots = 0
    while True:
        u, v, adj = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for (i, j) in basis:
            reduced[i, j] = 0.0
        neg = reduced < -eps
        if not neg.any():
            break
        if pivots >= max_pivots:
            raise NumericalError(f"transport simplex exceeded {max_pivots} pivots")
        if degenerate:
            flat = int(np.flatnonzero(neg.ravel())[0])
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(flat, n)
        # cycle: entering (+), then alternate along the tree path column ej -> row ei
        path = _tree_path(adj, m + ej, ei)
        cells = []
        for p, q in zip(path[:-1], path[1:]):
            cells.append((q, p - m) if p >= m else (p, q - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(x[c] for c in minus)
        blocking = [c for c in minus if x[c] <= theta]
        leave = min(blocking, key=lambda c: c[0] * n + c[1])
        x[ei, ej] += theta
        for c in plus:
            x[c] += theta
        for c in minus:
            x[c] -= theta
        x[leave] = 0.0
        basis_set.discard(leave)
        basis_set.add((ei, ej))
        basis = sorted(basis_set)
        degenerate = theta <= 1e-15
        pivots += 1
    x = np.maximum(x, 0.0)
    return TransportPlan(x, float(np.sum(x * cost)), pivots, u, v)


def solve_kantorovich(p: TransportProblem, tol: float = 1e-12) -> TransportPlan:
    if p.cost.size > 10_000:
        raise ValueError(f"support has {p.cost.size} pairs, above the 1e4 desk-scale limit")
    return solve_transport_lp(p.a, p.b, p.cost, tol)


def brute_force_transport(a, b, cost) -> float:
    """Minimum over all basic feasible solutions (vertex enumeration); tiny problems only."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    m, n = cost.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    rhs = np.concatenate([a, b])
    best = np.inf
    for cols in itertools.combinations(range(m * n), m + n - 1):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < m + n - 1:
            continue
        sol, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.max(np.abs(sub @ sol - rhs)) > 1e-9 or sol.min() < -1e-12:
            continue
        best = min(best, float(sol @ cost.ravel()[list(cols)]))
    return best


def admissibility(f, g, p: TransportProblem, scope: str = "support") -> float:
    """max f(x) - g(y) - c(x, y) over support pairs ("support") or all grid pairs ("grid")."""
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    if scope == "support":
        return float(np.max(f[p.src][:, None] - g[p.dst][None, :] - p.cost))
    if scope == "grid":
        return float(np.max(f[:, None] - g[None, :] - p.full_cost))
    raise ValueError(f"unknown scope {scope!r}")


def dual_pair(f, g, p: TransportProblem) -> DualPair:
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    value = float(f[p.src] @ p.a - g[p.dst] @ p.b)
    return DualPair(f, g, value, admissibility(f, g, p, "support"), admissibility(f, g, p, "grid"))


def weak_kam_dual_pair(u, u_star, E: float, p: TransportProblem, horizon: float = 1.0,
                       second=None) -> DualPair:
    """The pair (u, u* - E t) (or (u, second - E t)).

    The cost -W is the unit-time action without the critical drift; shifting
    the second potential by -E t restores it, which is the gauge in which the
    weak KAM inequalities hold with equality on calibrated pairs.
    """
    g = np.asarray(u_star if second is None else second, float) - E * horizon
    return dual_pair(u, g, p)


def duality_gap(plan: TransportPlan, pair: DualPair) -> float:
    return plan.primal - pair.value


def slackness_check(plan: TransportPlan, pair: DualPair, p: TransportProblem, tol: float,
                    mass_floor: float = 1e-14) -> list[tuple[int, int, float]]:
    """Support pairs of the plan where |f(x) - g(y) - c(x, y)| > tol, as (x, y, slack)."""
    out = []
    for i, j in zip(*np.nonzero(plan.weights > mass_floor)):
        x, y = int(p.src[i]), int(p.dst[j])
        slack = float(pair.f[x] - pair.g[y] - p.cost[i, j])
        if abs(slack) > tol:
            out.append((x, y, slack))
    return out
