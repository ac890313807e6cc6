import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_transit.cones import (ConeError, ConeFamily, SkewProductSpec, central_good_set, central_min_norm,
                                  check_cone_invariance, check_domination, check_teo2_disc_hypothesis,
                                  cocycle_log_growth)
from robust_transit.maps import MapSpec, TrigTerm, Window

STRETCH = MapSpec(2, ((1, 0), (0, 3)), (), "stretch_y")
unit = st.floats(0, 1, allow_nan=False, exclude_max=True)


def test_cone_family_validation():
    with pytest.raises(ConeError):
        ConeFamily(np.array([[1.0], [0.0]]), np.array([[1.0], [0.0]]), 0.1)
    with pytest.raises(ConeError):
        ConeFamily.coordinate(2, [0], 0.0)


def test_cone_json_round_trip():
    c = ConeFamily.coordinate(3, [0, 2], 0.3)
    d = ConeFamily.from_json(c.to_json())
    assert np.array_equal(d.center, c.center) and d.kappa == c.kappa


def test_boundary_rays_lie_on_boundary():
    c = ConeFamily.coordinate(2, [0], 0.25)
    wc, wu = c.split(c.boundary_rays())
    assert np.allclose(np.linalg.norm(wc, axis=1), 0.25 * np.linalg.norm(wu, axis=1))


def test_invariance_margin_for_linear_stretch():
    c = check_cone_invariance(STRETCH, ConeFamily.coordinate(2, [0], 0.1), 1 / 16)
    assert c.passed
    assert c.margin == pytest.approx(2 / 3)


def test_invariance_fails_when_center_dominates():
    f = MapSpec(2, ((3, 0), (0, 1)), ())
    assert not check_cone_invariance(f, ConeFamily.coordinate(2, [0], 0.1), 1 / 16).passed


def test_domination_constant_for_linear_stretch():
    kappa = 0.1
    c = check_domination(STRETCH, ConeFamily.coordinate(2, [0], kappa), 0.9, 1 / 8)
    oracle = math.sqrt(kappa ** 2 + 1 / 9) / math.sqrt(1 + kappa ** 2)
    assert c.passed
    assert c.details["lambda_achieved"] == pytest.approx(oracle)


def test_domination_fails_for_conformal_map():
    f = MapSpec(2, ((2, 0), (0, 2)), ())
    assert not check_domination(f, ConeFamily.coordinate(2, [0], 0.1), 0.9, 1 / 8).passed


def test_domination_rejects_bad_lambda():
    with pytest.raises(ConeError):
        check_domination(STRETCH, ConeFamily.coordinate(2, [0], 0.1), 1.5, 1 / 8)


def test_cocycle_growth_for_diagonal_map():
    f = MapSpec(2, ((2, 0), (0, 3)), ())
    cones = ConeFamily.coordinate(2, [0], 0.1)
    orbit = [np.array([0.1, 0.2])]
    for _ in range(10):
        orbit.append(f.eval(orbit[-1]))
    orbit = np.array(orbit)
    logs = cocycle_log_growth(f, cones, orbit)
    assert np.allclose(logs, np.arange(1, 11) * math.log(2))


def test_central_min_norm_and_good_set():
    f = MapSpec(2, ((2, 0), (0, 3)), ())
    cones = ConeFamily.coordinate(2, [0], 0.1)
    assert np.allclose(central_min_norm(f, cones, np.array([[0.3, 0.3]])), 2.0)
    assert central_good_set(f, cones, 1.5, 8).count == 64
    assert central_good_set(f, cones, 2.5, 8).count == 0


def test_teo2_disc_hypothesis_for_uniform_expansion():
    f = MapSpec(2, ((2, 0), (0, 3)), ())
    c = check_teo2_disc_hypothesis(f, ConeFamily.coordinate(2, [0], 0.1), 0.5, 1.5, 0, 6, 4, 0, 32)
    assert c.passed


def skew():
    base = MapSpec(1, ((5,),), ())
    terms = (TrigTerm((1, 0), 0.05, 0.1, 0, Window(1, 0.1, 0.3, 0.05)),
             TrigTerm((0, 0), 0.2, math.pi / 2, 0, Window(1, 0.5, 0.7, 0.05)))
    return SkewProductSpec(1, ((1,),), terms, base, "skew")


@given(st.tuples(unit, unit))
def test_skew_product_compiles_to_same_map(p):
    s = skew()
    x = np.array([p])
    assert np.allclose(s.eval(x), s.compile().eval(x), atol=1e-12)


def test_skew_product_fiber_map_and_json():
    s = skew()
    assert s.fiber_map(0.2)(np.array([0.4])) == pytest.approx(0.4 + 0.05 * math.sin(2 * math.pi * 0.4 + 0.1))
    assert s.fiber_map(0.9)(np.array([0.4])) == pytest.approx(0.4)
    t = SkewProductSpec.from_json(s.to_json())
    assert t.compile().dumps() == s.compile().dumps()


def test_skew_product_base_is_fibre_independent():
    f = skew().compile()
    x = np.array([[0.1, 0.42], [0.8, 0.42]])
    y = f.eval(x)
    assert y[0, 1] == pytest.approx(y[1, 1])
