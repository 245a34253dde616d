import numpy as np
import pytest

from kamlab.action_kernel import (compute_w_kernel, cosine_defect, dp_kernel_pair, eigen_kernel_collinearity,
                                  feynman_kac_mc, kernel_lipschitz_observed, mc_vs_dp, minplus_power,
                                  minplus_product, schilder_limit_check)
from kamlab.errors import ConfigurationError
from kamlab.schroedinger import assemble_twisted_generator, solve_eigenpair
from kamlab.torus import ClosedForm, Potential, build_grid
from kamlab.weak_kam import one_step_cost

from conftest import COS, NO_FORM, ZERO


def _flat_closed_form(g, P):
    x = g.coords()[:, 0]
    d = x[None, :] - x[:, None]
    return -np.min([(d + k) ** 2 / 2 + P * (d + k) for k in range(-4, 5)], axis=0)


@pytest.mark.parametrize("N,P", [(64, 0.0), (64, 0.7), (64, 2.0), (128, -1.3)])
def test_flat_kernel_closed_form(N, P):
    g = build_grid(1, N)
    m = 20
    W = compute_w_kernel(g, ZERO, ClosedForm([P]), m, 4.0)
    # equal-slice velocities are rounded to the grid: excess kinetic cost <= m^2 dx^2 / 8
    bound = m ** 2 * g.spacing ** 2 / 8 + 1e-12
    assert np.max(np.abs(W.values - _flat_closed_form(g, P))) <= bound
    if P == 0.0:
        assert np.all(np.diag(W.values) == 0.0)
        assert np.array_equal(W.values, W.values.T)


def test_minplus_against_pair_dp():
    g = build_grid(1, 16)
    V = Potential({1: 0.8}, {2: 0.3})
    F = ClosedForm([0.4])
    W = compute_w_kernel(g, V, F, 8, 4.0)
    for y in range(16):
        for x in range(16):
            assert W(y, x) == pytest.approx(dp_kernel_pair(g, V, F, 8, 4.0, y, x), abs=1e-12)


def test_squaring_identity(rng):
    C = rng.random((12, 12))
    C4 = minplus_power(C, 4)
    assert np.allclose(C4, minplus_product(minplus_product(C, C), minplus_product(C, C)))
    assert np.allclose(minplus_power(C, 8), minplus_product(C4, C4))
    assert np.allclose(minplus_power(C, 5), minplus_product(C4, C))
    with pytest.raises(ValueError):
        minplus_power(C, 0)


def test_semigroup_superadditivity(cos256):
    # W over two unit horizons is the min-plus square, never better than one concatenation
    g, _, W = cos256
    sub = np.arange(0, 256, 16)
    A = -W.values[np.ix_(sub, sub)]
    two = minplus_product(A, A)
    for i in range(sub.size):
        for j in range(sub.size):
            assert -two[i, j] >= -A[i, 0] - A[0, j] - 1e-12


def test_symmetric_for_zero_form(cos256):
    _, _, W = cos256
    assert np.allclose(W.values, W.values.T, atol=1e-12)


def test_lipschitz_bound(cos256, rotation256):
    for W in (cos256[2], rotation256[4]):
        assert kernel_lipschitz_observed(W) <= W.lip


def test_guards():
    g = build_grid(1, 64)
    with pytest.raises(ConfigurationError):
        compute_w_kernel(g, COS, NO_FORM, 3, 4.0)
    with pytest.raises(ConfigurationError):
        compute_w_kernel(g, COS, NO_FORM, 20, 0.5)      # v_max/m below dx
    with pytest.raises(ConfigurationError):
        compute_w_kernel(g, COS, NO_FORM, 4, 0.07)      # too slow to reach every node
    with pytest.raises(ConfigurationError):
        feynman_kac_mc(0.0, 0.5, 1.0, 10.0, COS, NO_FORM, steps=48)
    with pytest.raises(ConfigurationError):
        feynman_kac_mc(0.0, 0.5, 1.0, 10.0, COS, NO_FORM, samples=10)


def test_mc_flat_exact():
    est = feynman_kac_mc(0.1, 0.3, 1.0, 20.0, ZERO, NO_FORM, samples=500)
    assert est.estimate == 0.0 and est.degenerate and est.stderr == 0.0
    g = build_grid(1, 64)
    W = compute_w_kernel(g, ZERO, NO_FORM, 16, 4.0)
    r = mc_vs_dp(feynman_kac_mc(0.0, 0.25, 1.0, 20.0, ZERO, NO_FORM, samples=500), W, slack=0.0)
    assert r["error"] <= 1e-12 and r["passed"]


def test_mc_form_only_is_deterministic():
    est = feynman_kac_mc(0.1, 0.3, 1.0, 20.0, ZERO, ClosedForm([1.5]), samples=500)
    assert est.degenerate and est.stderr == 0.0
    assert est.estimate == pytest.approx(-1.5 * 0.2, abs=1e-12)


def test_mc_reproducible_and_batch_seeded():
    a = feynman_kac_mc(0.0, 0.25, 1.0, 20.0, COS, NO_FORM, samples=3000, seed=7)
    b = feynman_kac_mc(0.0, 0.25, 1.0, 20.0, COS, NO_FORM, samples=3000, seed=7)
    c = feynman_kac_mc(0.0, 0.25, 1.0, 20.0, COS, NO_FORM, samples=3000, seed=8)
    assert a.estimate == b.estimate and a.stderr == b.stderr
    assert a.estimate != c.estimate
    assert a.stderr > 0


def test_mc_lift_ambiguity():
    est = feynman_kac_mc(0.0, 0.5, 1.0, 10.0, ZERO, ClosedForm([1.0]), samples=200)
    assert est.lift_ambiguous and est.displacement == (0.5,)
    assert not feynman_kac_mc(0.0, 0.3, 1.0, 10.0, ZERO, NO_FORM, samples=200).lift_ambiguous


def test_mc_vs_dp_cos(cos256):
    g, _, W = cos256
    r = mc_vs_dp(feynman_kac_mc(0.28125, 0.375, 1.0, 20.0, COS, NO_FORM, samples=5000, seed=0), W)
    assert r["passed"], r
    bad = feynman_kac_mc(0.28125, 0.375, 0.5, 20.0, COS, NO_FORM, samples=200)
    with pytest.raises(ValueError):
        mc_vs_dp(bad, W)


def test_schilder_trend(cos256):
    _, _, W = cos256
    runs = [feynman_kac_mc(0.28125, 0.375, 1.0, b, COS, NO_FORM, samples=5000, seed=0) for b in (5.0, 10.0, 20.0)]
    res = schilder_limit_check(W, runs)
    assert res["decreasing"]
    other = feynman_kac_mc(0.0, 0.375, 1.0, 40.0, COS, NO_FORM, samples=200)
    with pytest.raises(ValueError):
        schilder_limit_check(W, runs + [other])
    with pytest.raises(ValueError):
        schilder_limit_check(W, runs[::-1])


def test_cosine_defect():
    v = np.array([1.0, 2.0, 3.0])
    assert cosine_defect(v, 4 * v) == pytest.approx(0.0, abs=1e-15)
    assert cosine_defect(v, np.array([3.0, 2.0, 1.0])) > 0.1


@pytest.mark.parametrize("V,beta,N", [(COS, 20.0, 80), (COS, 20.0, 256), (ZERO, 20.0, 64), (COS, 80.0, 256)])
def test_collinearity_and_control(V, beta, N):
    g = build_grid(1, N)
    pair = solve_eigenpair(g, V, NO_FORM, beta)
    G = assemble_twisted_generator(g, V, NO_FORM, beta)
    assert eigen_kernel_collinearity(pair, G) <= 1e-6
    x = g.coords()[:, 0]
    if V is COS:
        bent = pair.psi_star * np.exp(-0.01 * beta * np.sin(2 * np.pi * x))
        assert eigen_kernel_collinearity(pair, G, psi_star=bent) >= 1e-3


def test_collinearity_flat_twist():
    g = build_grid(1, 64)
    F = ClosedForm([1.0])
    pair = solve_eigenpair(g, ZERO, F, 20.0)
    assert eigen_kernel_collinearity(pair, assemble_twisted_generator(g, ZERO, F, 20.0)) <= 1e-6
