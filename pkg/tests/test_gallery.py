import math

import numpy as np
import pytest

from robust_transit.cones import ConeFamily, check_cone_invariance, check_teo2_disc_hypothesis
from robust_transit.gallery import (BuildError, backward_sequence, build_broken_example3, build_example1,
                                    build_example2, build_example3, build_example4, bump_pair,
                                    check_removed_cells, design_circle_diffeo, ifs_covering, ifs_density,
                                    pair_support, robustness_sweep)
from robust_transit.geometry import torus_dist
from robust_transit.maps import MapSpec


@pytest.fixture(scope="module")
def ex1():
    return build_example1()


@pytest.fixture(scope="module")
def ex3():
    return build_example3()


def test_bump_pair_slope_and_support():
    center = np.array([0.4, 0.6])
    f = MapSpec(2, ((2, 0), (0, 2)), tuple(bump_pair(center, 0.1, 0, 1, 0.7)))
    J = f.jacobian_matrix(center[None])[0]
    assert J[0, 1] == pytest.approx(0.7)
    assert torus_dist(f.eval(center), (2 * center) % 1) < 1e-12
    far = center + np.array([0.0, pair_support(0.1) + 1e-3])
    assert np.allclose(f.jacobian_matrix(far[None])[0], np.diag([2.0, 2.0]))


def test_example1_jacobians_at_special_points(ex1):
    f = ex1.mapspec
    Jp = f.jacobian_matrix(np.array([ex1.extras["p"]]))[0]
    assert Jp[0, 0] == pytest.approx(0.8)
    Jq = f.jacobian_matrix(np.array([ex1.extras["q1"]]))[0]
    assert np.allclose(Jq, 4 * np.array([[1, -1], [1, 1]]))


def test_example1_claims_pass(ex1):
    certs = ex1.verify(["volume", "H1", "H3", "complex_eigenvalues"])
    assert all(c.passed for c in certs), [c.line() for c in certs]


def test_example1_H2_sampled(ex1):
    assert ex1.verify(["H2"], H2={"samples": 6, "horizon": 30})[0].passed


def test_example1_volume_guard():
    with pytest.raises(BuildError, match="volume"):
        build_example1(bifurcation_amplitude=3.7)


def test_example1_bumps_must_fit():
    with pytest.raises(BuildError):
        build_example1(u0_radius=0.1, bump_radius=0.1)


def test_example2_counts_follow_carpet_law():
    from robust_transit.regions import compute_lambda_cover
    inst = build_example2(res=81)
    lc = compute_lambda_cover(inst.mapspec, inst.U0, 2)
    assert list(lc.counts) == [81 * 81 * 8 // 9, 81 * 81 * 64 // 81, 81 * 81 * 512 // 729]


def test_example2_claims():
    inst = build_example2()
    d0 = inst.verify(["d0"])[0]
    assert d0.passed and d0.details["d0"] == pytest.approx(1 / 3)
    assert inst.verify(["afir31"], afir31={"arcs": 10})[0].passed


def test_example2_refuses_colliding_cells():
    with pytest.raises(BuildError, match="collides"):
        check_removed_cells(3, [(1, 1), (0, 1)])


def test_circle_diffeo_design_meets_constraints():
    coef = design_circle_diffeo(0.0, 0.85, (0.0, 0.5), (0.0, 0.75))
    K = (len(coef) - 1) // 2
    k = np.arange(1, K + 1)

    def h(x):
        x = np.asarray(x)[:, None]
        return coef[0] + np.sin(2 * np.pi * k * x) @ coef[1:K + 1] + np.cos(2 * np.pi * k * x) @ coef[K + 1:]

    x = np.linspace(0, 1, 2001)
    F = x + h(x)
    assert np.all(np.diff(F) > 0)
    assert F[-1] - F[0] == pytest.approx(1.0)
    assert h(np.array([0.0, 0.85])) == pytest.approx([0, 0], abs=1e-9)
    assert x[1000] + h(np.array([0.5]))[0] == pytest.approx(0.75)


def test_example3_structure(ex3):
    assert all(c.passed for c in ex3.verify(["fixed_fibers", "overlap"]))
    assert ex3.extras["c_fixed"] == pytest.approx([0.125, 0.375, 0.625, 0.875])


def test_example3_backward_sequence_stays_in_rectangles(ex3):
    seq = backward_sequence(ex3, np.array([0.3, 0.5]), 10)
    assert seq is not None and len(seq) == 11
    f = ex3.mapspec
    assert np.max(torus_dist(f.eval(seq[1:]), seq[:-1])) < 1e-9


def test_example3_segments_and_cones(ex3):
    certs = ex3.verify(["vertical_segments", "cone_invariance"], vertical_segments={"segments": 10})
    assert all(c.passed for c in certs)


def test_example3_spec_intervals():
    inst = build_example3(N=5, intervals=[(0.02, 0.22), (0.27, 0.47), (0.52, 0.72), (0.77, 0.97)])
    assert inst.extras["shift"] == pytest.approx(0.52)
    assert inst.verify(["fixed_fibers"])[0].passed


@pytest.mark.parametrize("kw, msg", [({"a": 0.6, "b": 0.5}, "0 < a < b"), ({"c": 0.2}, "1/4 < c"),
                                     ({"N": 3}, "N > 3")])
def test_example3_constraints(kw, msg):
    with pytest.raises(BuildError, match=msg):
        build_example3(**kw)


def test_broken_example3_fails_disc_hypothesis():
    inst = build_broken_example3()
    cones = ConeFamily.coordinate(2, [0], 0.07)
    assert check_cone_invariance(inst.mapspec, cones, 1 / 64).passed
    assert not check_teo2_disc_hypothesis(inst.mapspec, cones, 1.0, 1.1, 0, 12, 5, 0, 128).passed


def test_ifs_covering_halves_and_gap():
    ok, _ = ifs_covering([lambda u: u / 2, lambda u: u / 2 + 0.5], 0.0, 1.0)
    assert ok
    ok, w = ifs_covering([lambda u: u / 3, lambda u: u / 3 + 2 / 3], 0.0, 1.0)
    assert not ok and 1 / 3 < w < 2 / 3


def test_ifs_density_for_binary_maps():
    ok, gap = ifs_density([lambda u: u / 2, lambda u: u / 2 + 0.5], 0.0, 0.0, 1.0, 6, 0.05)
    assert ok and gap == pytest.approx(1 / 64)


def test_example4_claims():
    inst = build_example4()
    assert all(c.passed for c in inst.verify(vertical_segments={"segments": 5}))


def test_example4_refuses_gap():
    with pytest.raises(BuildError, match="not covered"):
        build_example4(k_offsets=(-0.3, 0.3))


def test_robustness_sweep_small(ex1):
    c = robustness_sweep(ex1, n=1, claim_kw={"H2": {"samples": 3, "horizon": 20}}, cylinders=1)
    assert c.passed
