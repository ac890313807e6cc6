import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_transit.geometry import torus_dist
from robust_transit.maps import MapSpec, TrigTerm
from robust_transit.shadowing import (PseudoOrbit, ShadowingError, build_table, check_conjugacy,
                                      conjugacy_points, estimate_beta, random_pseudo_orbit, shadow,
                                      shadow_batch)

DOUBLING = MapSpec(1, ((2,),), (), "doubling")


@given(st.integers(0, 2 ** 31 - 1), st.floats(1e-6, 1e-2))
def test_shadowing_bound_holds(seed, delta):
    rng = np.random.default_rng(seed)
    po = random_pseudo_orbit(DOUBLING, rng.random(1), 60, delta, rng)
    r = shadow(DOUBLING, po, lam=2.0)
    assert r.eta <= r.bound + 1e-9
    assert r.bound == pytest.approx(2 * delta)


@given(st.integers(0, 2 ** 31 - 1))
def test_shadowing_orbit_is_a_true_orbit(seed):
    rng = np.random.default_rng(seed)
    f = MapSpec(2, ((2, 0), (0, 3)), (TrigTerm((1, 0), 0.03, 0.2, 1),))
    po = random_pseudo_orbit(f, rng.random(2), 30, 1e-3, rng)
    r = shadow(f, po)
    assert np.max(torus_dist(f.eval(r.orbit[:-1]), r.orbit[1:])) < 1e-9


def test_exact_orbit_shadows_itself():
    x = [0.1]
    for _ in range(20):
        x.append((2 * x[-1]) % 1)
    po = PseudoOrbit(np.array(x)[:, None], 0.0, DOUBLING)
    r = shadow(DOUBLING, po, lam=2.0)
    assert r.eta < 1e-12


def test_pseudo_orbit_validation():
    with pytest.raises(ShadowingError):
        PseudoOrbit(np.array([[0.1], [0.5]]), 1e-3, DOUBLING)
    with pytest.raises(ShadowingError):
        PseudoOrbit(np.zeros((0, 1)), 1e-3)


def test_contraction_failure_for_non_expanding():
    po = PseudoOrbit(np.array([[0.1], [0.2]]), 1e-3)
    with pytest.raises(ShadowingError, match="contraction"):
        shadow_batch(DOUBLING, po.points[None], 1e-3, 1.0)


def test_branch_tie_is_reported():
    # preimages of 0.3 are 0.15 and 0.65, both at distance 0.25 from 0.4
    with pytest.raises(ShadowingError, match="ambiguity"):
        shadow_batch(DOUBLING, np.array([[[0.4], [0.3]]]), 0.5, 2.0)


def test_json_round_trip_measures_delta():
    po = PseudoOrbit.from_json([[0.1], [0.2005]], DOUBLING)
    assert po.delta == pytest.approx(5e-4)
    assert PseudoOrbit.from_json(po.to_json()).delta == po.delta


def test_beta_for_doubling():
    assert estimate_beta(DOUBLING) == pytest.approx(0.25)


def test_conjugacy_identity_for_equal_maps():
    X = np.random.default_rng(0).random((50, 1))
    Y = conjugacy_points(DOUBLING, DOUBLING, X, 40)
    assert np.max(torus_dist(X, Y)) < 1e-12


def test_conjugacy_small_perturbation():
    g = DOUBLING.with_terms([TrigTerm((1,), 0.01, 0.0, 0)])
    X = np.random.default_rng(1).random((200, 1))
    table = build_table(DOUBLING, g, X, 60, beta=0.25)
    # sup |h - id| <= delta lambda / (lambda - 1) with delta = 0.01 and lambda = 2
    assert table.eta <= 0.02 + 1e-6
    c = check_conjugacy(DOUBLING, g, table, 1e-6)
    assert c.passed


def test_conjugacy_refuses_outside_uniqueness_regime():
    g = DOUBLING.with_terms([TrigTerm((1,), 0.01, 0.0, 0)])
    table = build_table(DOUBLING, g, np.array([[0.3]]), 30, beta=1e-6)
    with pytest.raises(ShadowingError):
        check_conjugacy(DOUBLING, g, table, 1e-6)


def test_conjugacy_rejects_large_c0_distance():
    g = DOUBLING.with_terms([TrigTerm((1,), 0.1, 0.0, 0)])
    with pytest.raises(ShadowingError):
        conjugacy_points(DOUBLING, g, np.array([[0.3]]), 10, eps=0.01)
