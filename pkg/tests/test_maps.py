import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_transit.geometry import torus_dist
from robust_transit.maps import (BumpTerm, MapError, MapSpec, TrigTerm, Window, c1_distance, grid_points,
                                 linear_map, random_perturbation, sin_range)

unit = st.floats(0, 1, allow_nan=False, exclude_max=True)


def fd_jacobian(f, x, h=1e-6):
    n = f.dim
    J = np.empty((len(x), n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, :, j] = (f.eval_lift(x + e) - f.eval_lift(x - e)) / (2 * h)
    return J


def test_linear_map_degree_and_det():
    f = linear_map([[2, 1], [1, 3]])
    assert f.det_linear == 5
    assert f.degree == 5


def test_singular_linear_part_rejected():
    with pytest.raises(MapError):
        MapSpec(2, ((1, 2), (2, 4)), ())


@given(st.tuples(unit, unit))
def test_eval_is_projection_of_lift(x):
    f = MapSpec(2, ((2, 1), (1, 2)), (TrigTerm((1, 0), 0.05, 0.3, 1),))
    y = f.eval(np.array(x))
    assert torus_dist(y, f.eval_lift(np.array(x))) < 1e-12
    assert np.all((y >= 0) & (y < 1))


@given(st.tuples(unit, unit))
def test_eval_is_periodic(x):
    f = MapSpec(2, ((2, 1), (1, 2)), (TrigTerm((1, 2), 0.05, 0.3, 1), BumpTerm((0.5, 0.5), 0.2, (0.01, -0.02))))
    a = f.eval(np.array(x))
    b = f.eval(np.array(x) + np.array([3.0, -2.0]))
    assert torus_dist(a, b) < 1e-10


def test_jacobian_matches_finite_differences(nonlinear2d):
    f = nonlinear2d.with_terms([BumpTerm((0.3, 0.6), 0.2, (0.02, 0.01))])
    x = np.random.default_rng(0).random((500, 2))
    J = f.jacobian_matrix(x)
    Jfd = fd_jacobian(f, x)
    assert np.max(np.abs(J - Jfd)) / np.max(np.abs(J)) < 1e-5


def test_trig_term_window_plateau_and_outside():
    w = Window(1, 0.4, 0.5, 0.05)
    assert w.value(np.array([[0.0, 0.45]]))[0] == pytest.approx(1.0)
    assert w.value(np.array([[0.0, 0.2]]))[0] == pytest.approx(0.0)
    v = w.value(np.array([[0.0, 0.375]]))[0]
    assert 0 < v < 1


def test_constant_trig_term_is_translation():
    f = MapSpec(1, ((1,),), (TrigTerm((0,), 0.25, np.pi / 2, 0),))
    assert f.eval(np.array([0.1]))[0] == pytest.approx(0.35)


@given(st.floats(-3, 3), st.floats(0, 2))
def test_sin_range_encloses_samples(lo, width):
    hi = lo + width
    slo, shi = sin_range(np.array(lo), np.array(hi))
    s = np.sin(np.linspace(lo, hi, 200))
    assert slo <= s.min() + 1e-12 and s.max() <= shi + 1e-12


def test_enclosure_contains_image_samples(nonlinear2d):
    rng = np.random.default_rng(1)
    lo = rng.random((50, 2))
    hi = lo + 0.05
    elo, ehi = nonlinear2d.enclose(lo, hi)
    for a, b, l, h in zip(lo, hi, elo, ehi):
        s = a + (b - a) * rng.random((100, 2))
        img = nonlinear2d.eval_lift(s)
        assert np.all(img >= l - 1e-12) and np.all(img <= h + 1e-12)


@given(st.tuples(unit, unit))
def test_preimage_count_equals_degree_and_round_trips(y):
    f = MapSpec(2, ((2, 1), (1, 2)), (TrigTerm((1, 0), 0.05, 0.3, 1),))
    pre = f.preimage_array(np.array(y))
    assert len(pre) == 3
    assert np.max(torus_dist(f.eval(pre), np.array(y))) < 1e-10
    d = torus_dist(pre[:, None, :], pre[None, :, :]) + np.eye(3)
    assert d.min() > 1e-6


def test_preimages_of_doubling_known(doubling):
    pre = np.sort(doubling.preimage_array(np.array([0.3]))[:, 0])
    assert np.allclose(pre, [0.15, 0.65])


def test_local_preimage_follows_branch(doubling):
    x = doubling.local_preimage(np.array([0.3]), np.array([0.66]))
    assert x[0] == pytest.approx(0.65)


def test_json_round_trip(nonlinear2d):
    f = nonlinear2d.with_terms([TrigTerm((1, 1), 0.01, 0.0, 0, Window(1, 0.2, 0.3, 0.05)),
                                BumpTerm((0.5, 0.5), 0.1, (0.01, 0.0))])
    g = MapSpec.loads(f.dumps())
    x = np.random.default_rng(2).random((20, 2))
    assert np.allclose(f.eval_lift(x), g.eval_lift(x))
    assert json.loads(f.dumps()) == json.loads(g.dumps())


def test_malformed_json_rejected():
    with pytest.raises(MapError):
        MapSpec.from_json({"dim": 2, "linear": [[2, 0]]})


def test_random_perturbation_has_requested_c1_size(nonlinear2d):
    g = random_perturbation(nonlinear2d, 1e-3, np.random.default_rng(5))
    assert c1_distance(nonlinear2d, g, 1 / 64) == pytest.approx(1e-3, rel=1e-9)


def test_grid_points_shape():
    assert grid_points(2, 0.25).shape == (16, 2)
