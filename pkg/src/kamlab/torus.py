"""Periodic grids on the flat torus, trigonometric potentials and the form w = <P, v>.

Fields and measures are plain 1-D numpy arrays indexed by flat node number
(C order over the ``dim`` axes).  Coordinates of node ``i`` are ``i_j / N``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

MEASURE_TOL = 1e-12


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.N) != self.N or self.N < 8:
            raise ConfigurationError(f"N must be an integer >= 8, got {self.N}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.N

    @property
    def n_nodes(self) -> int:
        return self.N ** self.dim

    @property
    def volume(self) -> float:
        """Quadrature weight of one node, dx**dim."""
        return self.spacing ** self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    def multi_index(self) -> np.ndarray:
        """Integer node coordinates, shape (n_nodes, dim)."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return np.ascontiguousarray(idx)

    def coords(self) -> np.ndarray:
        """Node coordinates in [0, 1)^dim, shape (n_nodes, dim)."""
        return self.multi_index() / self.N

    def flat(self, multi: np.ndarray) -> np.ndarray:
        """Flat index of (possibly out-of-range) integer coordinates, wrapped cyclically."""
        multi = np.mod(np.asarray(multi, dtype=int), self.N).reshape(-1, self.dim)
        return np.ravel_multi_index(tuple(multi.T), self.shape)

    def shifted(self, offset) -> np.ndarray:
        """For every node x, the flat index of x + offset (cyclic)."""
        offset = np.asarray(offset, dtype=int).reshape(self.dim)
        return self.flat(self.multi_index() + offset)

    def node(self, point) -> int:
        """Flat index of the grid node nearest to ``point`` on the torus."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.size != self.dim:
            raise ConfigurationError(f"point {point!r} does not have dimension {self.dim}")
        k = np.rint(p * self.N).astype(int)
        return int(self.flat(k.reshape(1, self.dim))[0])

    def distance_matrix(self) -> np.ndarray:
        """Pairwise torus distances d(y, x), shape (n_nodes, n_nodes)."""
        c = self.coords()
        diff = c[None, :, :] - c[:, None, :]
        diff -= np.rint(diff)
        return np.sqrt(np.sum(diff ** 2, axis=-1))


def build_grid(dim: int, N: int) -> TorusGrid:
    return TorusGrid(dim, N)


def torus_distance(y, x) -> float:
    d = np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))
    d -= np.rint(d)
    return float(np.sqrt(np.sum(d ** 2)))


def lifted_displacement(grid: TorusGrid, y, x, k_max: int = 2) -> list[tuple[np.ndarray, float]]:
    """All lifts x + k - y with |k_j| <= k_max, shortest first.

    Equal lengths are ordered by decreasing displacement (lexicographically),
    so that in 1-D the positive lift of an antipodal pair comes first.
    """
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(grid.dim)
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(grid.dim)
    out = []
    for k in itertools.product(range(-k_max, k_max + 1), repeat=grid.dim):
        delta = x + np.asarray(k, dtype=float) - y
        out.append((delta, float(delta @ delta)))
    out.sort(key=lambda item: (item[1], tuple(-item[0])))
    return out


@dataclass(frozen=True)
class Potential:
    """V(x) = sum_k a_k cos(2 pi <k, x>) + b_k sin(2 pi <k, x>).

    ``cos`` and ``sin`` map integer frequency tuples to coefficients.
    """
    cos: dict = field(default_factory=dict)
    sin: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "cos", {_freq(k): float(v) for k, v in self.cos.items()})
        object.__setattr__(self, "sin", {_freq(k): float(v) for k, v in self.sin.items()})

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        val = np.zeros(pts.shape[0])
        for table, fn in ((self.cos, np.cos), (self.sin, np.sin)):
            for k, a in table.items():
                kk = np.zeros(pts.shape[1])
                kk[: len(k)] = k
                val += a * fn(2.0 * np.pi * (pts @ kk))
        return val

    def scale(self) -> float:
        """Upper bound on sup |V|."""
        return sum(abs(a) for a in self.cos.values()) + sum(abs(b) for b in self.sin.values())

    def lipschitz_bound(self) -> float:
        tot = 0.0
        for table in (self.cos, self.sin):
            for k, a in table.items():
                tot += 2.0 * np.pi * float(np.linalg.norm(k)) * abs(a)
        return tot


def _freq(k) -> tuple[int, ...]:
    if isinstance(k, str):
        k = [int(s) for s in k.replace(" ", "").split(",") if s]
    return tuple(int(v) for v in np.atleast_1d(k))


def eval_potential(V: Potential, grid: TorusGrid) -> np.ndarray:
    return V(grid.coords())


@dataclass(frozen=True)
class ClosedForm:
    """The closed 1-form w(v) = <P, v>, with base point x0 on the universal cover."""
    P: np.ndarray
    x0: np.ndarray | None = None

    def __post_init__(self):
        P = np.atleast_1d(np.asarray(self.P, dtype=float))
        x0 = np.zeros_like(P) if self.x0 is None else np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != P.shape:
            raise ConfigurationError("form.P and form.x0 must have the same length")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "x0", x0)

    @property
    def dim(self) -> int:
        return self.P.size

    def __call__(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.P

    def lift_integral(self, x) -> float:
        """Integral of w from x0 to the lifted point x."""
        return float(self.P @ (np.atleast_1d(np.asarray(x, float)) - self.x0))

    def path_integral(self, path) -> float:
        """Integral of w along a polygonal path on the cover, summed segment by segment."""
        path = np.asarray(path, dtype=float).reshape(-1, self.dim)
        return float(np.sum(np.diff(path, axis=0) @ self.P))


def check_measure(weights, tol: float = MEASURE_TOL) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("measure has negative weights")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"measure mass {w.sum()!r} differs from 1")
    return w


def box_mask(grid: TorusGrid, lo, hi) -> np.ndarray:
    """Nodes whose coordinates lie in the (cyclic) box [lo, hi] per axis.

    An interval with lo > hi wraps through 0, and negative bounds are read
    modulo 1, so [-0.1, 0.1] is the neighbourhood of the origin.
    """
    lo = np.atleast_1d(np.asarray(lo, float)) * np.ones(grid.dim)
    hi = np.atleast_1d(np.asarray(hi, float)) * np.ones(grid.dim)
    c = grid.coords()
    eps = 1e-12
    mask = np.ones(grid.n_nodes, dtype=bool)
    for j in range(grid.dim):
        if hi[j] - lo[j] >= 1.0:
            continue
        a, b = lo[j] % 1.0, hi[j] % 1.0
        cj = c[:, j]
        if a <= b:
            mask &= (cj >= a - eps) & (cj <= b + eps)
        else:
            mask &= (cj >= a - eps) | (cj <= b + eps)
    return mask
