import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_transit.geometry import (ArcPolyline, BoxRegion, GeometryError, LiftPoint, TorusPoint, diameter,
                                     internal_diameter, project, torus_dist, wrap_delta)

coords = st.floats(-5, 5, allow_nan=False)
pts2 = st.tuples(coords, coords)


@given(pts2)
def test_project_lands_in_unit_cube_and_is_idempotent(x):
    p = project(x)
    assert np.all((p >= 0) & (p < 1))
    assert np.array_equal(project(p), p)


@given(st.floats(-10, 10, allow_nan=False))
def test_wrap_delta_range(d):
    w = wrap_delta(d)
    assert -0.5 <= w < 0.5
    assert abs((w - d) - round(w - d)) < 1e-9


@given(pts2, pts2, pts2)
def test_torus_distance_is_a_metric(x, y, z):
    dxy, dyx = torus_dist(x, y), torus_dist(y, x)
    assert dxy == pytest.approx(dyx)
    assert 0 <= dxy <= 0.5
    assert torus_dist(x, z) <= dxy + torus_dist(y, z) + 1e-12


@given(pts2, st.integers(-3, 3), st.integers(-3, 3))
def test_torus_distance_ignores_integer_shifts(x, a, b):
    y = (x[0] + a, x[1] + b)
    assert torus_dist(x, y) < 1e-9


def test_torus_distance_known_values():
    assert torus_dist((0.05, 0.5), (0.95, 0.5)) == pytest.approx(0.1)
    assert torus_dist((0.0, 0.0), (0.5, 0.25)) == pytest.approx(0.5)


def test_lift_and_project_round_trip():
    p = TorusPoint((0.25, 0.75))
    lift = p.lift((2, -1))
    assert isinstance(lift, LiftPoint)
    assert np.allclose(lift.coords, (2.25, -0.25))
    assert np.allclose(lift.project().coords, p.coords)


def test_torus_point_rejects_unreduced():
    with pytest.raises(GeometryError):
        TorusPoint((1.2, 0.1))


def test_box_diameter_and_internal_diameter():
    box = BoxRegion((0.1, 0.2), (0.4, 0.3))
    assert diameter(box) == pytest.approx(0.3)
    # max over nonzero k of the gap to the translate: 1 - 0.1 along y
    assert internal_diameter([box]) == pytest.approx(0.7)


def test_box_contains_is_containment_in_the_lift():
    box = BoxRegion((0.9, 0.0), (1.1, 0.2), fundamental=False)
    assert box.contains((1.05, 0.1))
    assert not box.contains((0.05, 0.1))


def test_arc_refined_keeps_vertices_and_spacing():
    arc = ArcPolyline.from_array([[0.0, 0.0], [0.3, 0.0], [0.3, 0.5]])
    r = arc.refined(0.01)
    assert np.allclose(r.as_array()[0], (0, 0)) and np.allclose(r.as_array()[-1], (0.3, 0.5))
    steps = np.abs(np.diff(r.as_array(), axis=0)).max(axis=1)
    assert steps.max() <= 0.01 + 1e-12
