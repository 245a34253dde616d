import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamlab.errors import ConfigurationError
from kamlab.torus import (ClosedForm, Potential, TorusGrid, box_mask, build_grid, check_measure,
                          eval_potential, lifted_displacement, torus_distance)


def test_grid_basics():
    g = build_grid(1, 16)
    assert g.n_nodes == 16 and g.spacing == 1 / 16 and g.volume == 1 / 16
    assert np.allclose(g.coords()[:, 0], np.arange(16) / 16)
    g2 = build_grid(2, 8)
    assert g2.n_nodes == 64 and g2.volume == 1 / 64
    assert g2.coords().shape == (64, 2)


@pytest.mark.parametrize("dim,N", [(1, 7), (3, 16), (0, 16), (1, 8.5)])
def test_grid_rejects(dim, N):
    with pytest.raises(ConfigurationError):
        TorusGrid(dim, N)


def test_shift_wraps():
    g = build_grid(2, 8)
    right = g.shifted([1, 0])
    left = g.shifted([-1, 0])
    assert np.array_equal(left[right], np.arange(64))
    assert g.node([0.999, 0.0]) == 0
    assert g.node([0.5, 0.25]) == 4 * 8 + 2


def test_torus_distance_examples():
    assert torus_distance(0.1, 0.9) == pytest.approx(0.2)
    assert torus_distance([0.0, 0.0], [0.5, 0.5]) == pytest.approx(np.sqrt(0.5))
    D = build_grid(1, 8).distance_matrix()
    assert D.max() == pytest.approx(0.5) and np.allclose(D, D.T)


def test_lifted_displacement_antipodal_tie():
    g = build_grid(1, 8)
    lifts = lifted_displacement(g, 0.25, 0.75)
    assert lifts[0][0][0] == pytest.approx(0.5)
    assert lifts[1][0][0] == pytest.approx(-0.5)
    assert lifts[0][1] == pytest.approx(lifts[1][1])


def test_potential_and_lipschitz():
    V = Potential({1: 1.0}, {"2": 0.5})
    x = np.array([0.0, 0.25])
    assert np.allclose(V(x), [1.0, 0.0 + 0.5 * np.sin(np.pi)])
    assert V.scale() == 1.5
    assert V.lipschitz_bound() == pytest.approx(2 * np.pi + 2 * np.pi * 2 * 0.5)
    V2 = Potential({"1,0": 1.0, (0, 1): 2.0})
    g = build_grid(2, 8)
    vals = eval_potential(V2, g)
    assert vals[0] == pytest.approx(3.0)


def test_closed_form_path_integral_is_exact():
    w = ClosedForm([2.0])
    path = np.array([0.1, 0.4, -0.3, 1.2])
    assert w.path_integral(path) == pytest.approx(2.0 * (1.2 - 0.1))
    assert w.lift_integral(0.75) == pytest.approx(1.5)
    with pytest.raises(ConfigurationError):
        ClosedForm([1.0, 2.0], x0=[0.0])


def test_check_measure():
    check_measure(np.full(4, 0.25))
    with pytest.raises(ValueError):
        check_measure([0.5, 0.6])
    with pytest.raises(ValueError):
        check_measure([1.5, -0.5])


def test_box_mask_wraps():
    g = build_grid(1, 20)
    m = box_mask(g, -0.1, 0.1)
    assert set(np.flatnonzero(m)) == {18, 19, 0, 1, 2}
    assert box_mask(g, 0.4, 0.6).sum() == 5
    assert box_mask(g, 0.0, 1.0).all()


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_distance_is_a_metric_on_the_circle(a, b):
    d = torus_distance(a, b)
    assert 0 <= d <= 0.5 + 1e-12
    assert d == pytest.approx(torus_distance(b, a), abs=1e-12)
    assert torus_distance(a, a + 7.0) == pytest.approx(0.0, abs=1e-9)
