import numpy as np
import pytest
from scipy.optimize import linprog

from kamlab.errors import NumericalError
from kamlab.mather import build_action_graph, min_mean_cycle
from kamlab.schroedinger import quantum_measure, solve_eigenpair
from kamlab.transport import (admissibility, brute_force_transport, build_problem, dual_pair, duality_gap,
                              kantorovich_cost, slackness_check, solve_kantorovich, solve_transport_lp,
                              weak_kam_dual_pair)
from kamlab.weak_kam import one_step_cost

from conftest import COS, NO_FORM


def _linprog_value(a, b, cost):
    m, n = cost.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    r = linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return r.fun


def _simplex(m, n, rng):
    a = rng.random(m) + 0.05
    b = rng.random(n) + 0.05
    return a / a.sum(), b / b.sum()


def test_tiny_examples():
    plan = solve_transport_lp(np.array([1.0]), np.array([1.0]), np.array([[2.5]]))
    assert plan.primal == 2.5 and plan.weights[0, 0] == 1.0
    plan = solve_transport_lp(np.array([0.5, 0.5]), np.array([0.5, 0.5]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert plan.primal == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(plan.weights, np.diag([0.5, 0.5]))
    plan = solve_transport_lp(np.array([0.5, 0.5]), np.array([0.5, 0.5]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(plan.weights, [[0, 0.5], [0.5, 0]])


@pytest.mark.parametrize("m,n", [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4)])
def test_against_brute_force(m, n, rng):
    for _ in range(5):
        a, b = _simplex(m, n, rng)
        cost = rng.normal(size=(m, n))
        plan = solve_transport_lp(a, b, cost)
        assert plan.primal == pytest.approx(brute_force_transport(a, b, cost), abs=1e-10)
        assert np.allclose(plan.weights.sum(1), a, atol=1e-10)
        assert np.allclose(plan.weights.sum(0), b, atol=1e-10)
        assert plan.weights.min() >= 0


@pytest.mark.parametrize("m,n", [(10, 10), (25, 17), (40, 40)])
def test_against_linprog(m, n, rng):
    a, b = _simplex(m, n, rng)
    cost = rng.normal(size=(m, n))
    plan = solve_transport_lp(a, b, cost)
    assert plan.primal == pytest.approx(_linprog_value(a, b, cost), abs=1e-9)
    assert np.allclose(plan.weights.sum(1), a, atol=1e-10)
    assert np.allclose(plan.weights.sum(0), b, atol=1e-10)


def test_degenerate_integer_problem(rng):
    # uniform marginals and integer costs: heavy degeneracy
    n = 12
    a = np.full(n, 1.0 / n)
    cost = rng.integers(0, 3, size=(n, n)).astype(float)
    plan = solve_transport_lp(a, a, cost)
    assert plan.primal == pytest.approx(_linprog_value(a, a, cost), abs=1e-12)


def test_pivot_limit():
    with pytest.raises(NumericalError):
        solve_transport_lp(np.full(6, 1 / 6), np.full(6, 1 / 6), -np.eye(6), max_pivots=0)


def test_problem_validation():
    W = np.zeros((4, 4))
    with pytest.raises(ValueError):
        build_problem(np.array([0.5, 0.4, 0, 0]), np.full(4, 0.25), W)
    with pytest.raises(ValueError):
        kantorovich_cost(W, None, "tilde")
    with pytest.raises(ValueError):
        kantorovich_cost(W, None, "other")
    assert np.array_equal(kantorovich_cost(np.arange(16.0).reshape(4, 4)), -np.arange(16.0).reshape(4, 4).T)
    tilde = kantorovich_cost(W, np.array([0.0, 1.0, 2.0, 3.0]), "tilde")
    assert np.array_equal(tilde[2], [0.0, 1.0, 2.0, 3.0])


def test_weak_duality_random(rng):
    n = 8
    W = rng.normal(size=(n, n))
    a, b = _simplex(n, n, rng)
    p = build_problem(a, b, W)
    primal = solve_kantorovich(p).primal
    for _ in range(1000):
        f = rng.normal(size=n) * 3
        g = np.max(f[:, None] - p.full_cost, axis=0)
        pair = dual_pair(f, g, p)
        assert pair.max_violation <= 1e-12
        assert pair.value <= primal + 1e-12


def test_violation_shift_invariance(rng):
    n = 6
    W = rng.normal(size=(n, n))
    a, b = _simplex(n, n, rng)
    p = build_problem(a, b, W)
    f, g = rng.normal(size=n), rng.normal(size=n)
    base = dual_pair(f, g, p)
    moved = dual_pair(f + 1.7, g + 1.7, p)
    assert moved.max_violation == pytest.approx(base.max_violation, abs=1e-12)
    assert moved.value == pytest.approx(base.value, abs=1e-12)
    assert dual_pair(f + 1.0, g, p).max_violation == pytest.approx(base.max_violation + 1.0, abs=1e-12)
    assert admissibility(f, g, p, "grid") >= admissibility(f, g, p, "support")
    with pytest.raises(ValueError):
        admissibility(f, g, p, "everywhere")


def _mather(g):
    out = []
    for sign in (-1, +1):
        out.append(min_mean_cycle(build_action_graph(one_step_cost(g, COS, NO_FORM, sign, 0.05, 4.0))).measure)
    return out


def test_weak_kam_pair_is_optimal_dual(cos256):
    g, sol, W = cos256
    mu_minus, mu_plus = _mather(g)
    for variant, second in (("plain", sol.u_star), ("tilde", sol.u)):
        p = build_problem(mu_plus, mu_minus, W.values, sol.I, variant)
        plan = solve_kantorovich(p)
        pair = weak_kam_dual_pair(sol.u, sol.u_star, sol.E, p, W.horizon, second=second)
        assert pair.max_violation <= 5e-2
        assert abs(duality_gap(plan, pair)) <= 5e-2
        assert slackness_check(plan, pair, p, 5e-2) == []


def test_rotation_pair(rotation256):
    g, V, F, sol, W = rotation256
    mus = [min_mean_cycle(build_action_graph(one_step_cost(g, V, F, s, 0.05, 4.0))).measure for s in (+1, -1)]
    p = build_problem(mus[0], mus[1], W.values, sol.I, "plain")
    plan = solve_kantorovich(p)
    pair = weak_kam_dual_pair(sol.u, sol.u_star, sol.E, p, W.horizon)
    assert pair.max_violation <= 5e-2
    assert abs(duality_gap(plan, pair)) <= 5e-2
    assert slackness_check(plan, pair, p, 5e-2) == []


def test_wrong_pair_negative_control(cos256):
    # spread measures (the quantum measure, small tail cut); with P = 0, u = u*
    # so the bumped field u* + 0.2 sin is the wrong second potential
    g, sol, W = cos256
    nu = quantum_measure(solve_eigenpair(g, COS, NO_FORM, 20.0), g)
    nu = np.where(nu > 1e-3, nu, 0.0)
    nu /= nu.sum()
    p = build_problem(nu, nu, W.values, sol.I, "plain")
    plan = solve_kantorovich(p)
    right = weak_kam_dual_pair(sol.u, sol.u_star, sol.E, p, W.horizon)
    assert right.max_violation <= 1e-6
    assert duality_gap(plan, right) >= -1e-6
    bump = sol.u_star + 0.2 * np.sin(2 * np.pi * g.coords()[:, 0])
    wrong = weak_kam_dual_pair(sol.u, sol.u_star, sol.E, p, W.horizon, second=bump)
    assert wrong.max_violation > 5e-2
