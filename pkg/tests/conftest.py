import numpy as np
import pytest

from kamlab.torus import ClosedForm, Potential, build_grid
from kamlab.weak_kam import one_step_cost, weak_kam_pair
from kamlab.action_kernel import compute_w_kernel

COS = Potential({1: 1.0})
ZERO = Potential({})
NO_FORM = ClosedForm([0.0])


@pytest.fixture(scope="session")
def cos256():
    """V = cos 2 pi x, P = 0 on N = 256: weak KAM pair (h = 0.05) and W (20 slices)."""
    g = build_grid(1, 256)
    sol = weak_kam_pair(one_step_cost(g, COS, NO_FORM, -1, 0.05, 4.0))
    W = compute_w_kernel(g, COS, NO_FORM, 20, 4.0)
    return g, sol, W


@pytest.fixture(scope="session")
def rotation256():
    """V = 0.1 cos 2 pi x, P = 2 on N = 256."""
    g = build_grid(1, 256)
    V, F = Potential({1: 0.1}), ClosedForm([2.0])
    sol = weak_kam_pair(one_step_cost(g, V, F, -1, 0.05, 4.0))
    W = compute_w_kernel(g, V, F, 20, 4.0)
    return g, V, F, sol, W


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
