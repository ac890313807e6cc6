import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_transit.geometry import BoxRegion
from robust_transit.maps import MapSpec, TrigTerm
from robust_transit.regions import (GridCover, RegionError, arc_witness, box_counts, check_expanding_on,
                                    check_H2_arc_property, check_H3_surjectivity_off_U1,
                                    cell_enclosures, check_volume_expanding, compute_lambda_cover, index_ranges,
                                    random_arc_in, verify_orbit)


def ternary_digits(i, k):
    return [(i // 3 ** (k - 1 - j)) % 3 for j in range(k)]


def test_cantor_cover_matches_digit_oracle(tripling):
    U = GridCover.from_boxes([BoxRegion((1 / 3,), (2 / 3,))], 729)
    lc = compute_lambda_cover(tripling, U, 6)
    oracle = np.array([1 not in ternary_digits(i, 6) for i in range(729)])
    assert np.array_equal(lc.cover.mask, oracle)
    assert lc.cover.count == 64


def test_cantor_levels_follow_digit_oracle(tripling):
    U = GridCover.from_boxes([BoxRegion((1 / 3,), (2 / 3,))], 243)
    lc, levels = compute_lambda_cover(tripling, U, 3, keep_levels=True)
    for k, lev in enumerate(levels):
        oracle = np.array([1 not in ternary_digits(i, 5)[: k + 1] for i in range(243)])
        assert np.array_equal(lev.mask, oracle)


def test_lambda_cover_stops_at_fixed_point(tripling):
    U = GridCover.from_boxes([BoxRegion((1 / 3,), (2 / 3,))], 27)
    lc = compute_lambda_cover(tripling, U, 10)
    assert lc.saturated_at is not None
    assert lc.cover.count == 8


def test_carpet_counts():
    f = MapSpec(2, ((3, 0), (0, 3)), ())
    U = GridCover.from_boxes([BoxRegion((1 / 3, 1 / 3), (2 / 3, 2 / 3))], 81)
    lc = compute_lambda_cover(f, U, 2)
    assert list(lc.counts) == [81 * 81 * 8 // 9, 81 * 81 * 64 // 81, 81 * 81 * 512 // 729]


def test_lambda_cover_is_forward_closed(nonlinear2d):
    U = GridCover.ball((0.5, 0.5), 0.2, 64)
    lc = compute_lambda_cover(nonlinear2d, U, 30)
    assert lc.saturated_at is not None
    # at the fixed point every surviving cell's image meets a surviving cell
    lo, hi = cell_enclosures(nonlinear2d, lc.cover, lc.cover.cells)
    s, e = index_ranges(lo, hi, 64)
    assert np.all(box_counts(lc.cover.mask, s, e) > 0)


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_box_counts_matches_brute_force(seed, w0, w1):
    rng = np.random.default_rng(seed)
    res = 8
    mask = rng.random((res, res)) < 0.3
    start = rng.integers(-10, 10, size=(5, 2))
    stop = start + np.array([w0, w1])
    got = box_counts(mask, start, stop)
    for b in range(5):
        total = 0
        for i in range(start[b, 0], stop[b, 0]):
            for j in range(start[b, 1], stop[b, 1]):
                total += mask[i % res, j % res]
        assert got[b] == total


def test_from_boxes_uses_interior():
    c = GridCover.from_boxes([BoxRegion((0.25,), (0.5,))], 8)
    assert c.cells.ravel().tolist() == [2, 3]


def test_set_operations():
    a = GridCover.from_cells(8, 1, [[0], [1], [2]])
    b = GridCover.from_cells(8, 1, [[2], [3]])
    assert a.union(b).count == 4
    assert a.intersection(b).count == 1
    assert a.complement().count == 5
    assert a.intersection(b).issubset(a)
    assert a.dilate(1).count == 5


def test_components_wrap_around():
    c = GridCover.from_cells(8, 2, [[0, 3], [7, 3], [4, 4]])
    _, n = c.components()
    assert n == 2


def test_internal_diameter_of_ball_complement():
    U = GridCover.ball((0.5, 0.5), 0.1, 64)
    assert 0 < U.internal_diameter() <= 1.0
    assert U.diameter() < 0.3


def test_json_round_trip():
    c = GridCover.ball((0.2, 0.7), 0.15, 32)
    assert np.array_equal(GridCover.from_json(c.to_json()).mask, c.mask)


def test_volume_expanding_pass_and_fail(nonlinear2d):
    assert check_volume_expanding(nonlinear2d, 1 / 64, 2.0).passed
    assert not check_volume_expanding(nonlinear2d, 1 / 64, 4.0).passed


def test_volume_sigma_must_exceed_one(doubling):
    with pytest.raises(RegionError):
        check_volume_expanding(doubling, 1 / 64, 1.0)


def test_expanding_on_torus(doubling, rotation_product):
    assert check_expanding_on(doubling, None, 1.5).passed
    c = check_expanding_on(rotation_product, None, 1.5)
    assert c.verdict == "fail"


def test_expanding_rigor_mode_inflates(nonlinear2d):
    sampled = check_expanding_on(nonlinear2d, None, 1.2)
    rig = check_expanding_on(nonlinear2d, None, 1.2, rigor=True)
    assert rig.margin <= sampled.margin + 1e-12


def test_random_arc_avoids_U0():
    U0 = GridCover.ball((0.5, 0.5), 0.1, 64)
    arc = random_arc_in(U0, 0.3, np.random.default_rng(0))
    assert not U0.contains_points(arc).any()
    assert np.ptp(arc, axis=0).max() > 0.3


def test_H2_passes_for_uniform_expansion():
    f = MapSpec(2, ((2, 0), (0, 2)), ())
    U0 = GridCover.ball((0.5, 0.5), 0.1, 64)
    c = check_H2_arc_property(f, U0, horizon=30, samples=6)
    assert c.passed


def test_H2_rejects_delta0_too_large():
    f = MapSpec(2, ((2, 0), (0, 2)), ())
    U0 = GridCover.ball((0.5, 0.5), 0.1, 64)
    with pytest.raises(RegionError):
        check_H2_arc_property(f, U0, delta0=5.0, samples=1)


def test_H3_for_linear_map():
    f = MapSpec(2, ((2, 0), (0, 2)), ())
    U1 = GridCover.ball((0.5, 0.5), 0.1, 32)
    assert check_H3_surjectivity_off_U1(f, U1).passed


def test_arc_witness_orbit_is_verified():
    f = MapSpec(2, ((2, 0), (0, 2)), (TrigTerm((1, 0), 0.02, 0.0, 1),))
    avoid = GridCover.ball((0.5, 0.5), 0.1, 64)
    arc = np.array([[0.1, 0.1], [0.1, 0.6]])
    w = arc_witness(f, arc, avoid, 12)
    assert w is not None
    orbit, dist = w
    assert len(orbit) == 13
    assert dist < 0.01
    assert verify_orbit(f, orbit, avoid)


def test_verify_orbit_rejects_bad_step():
    f = MapSpec(1, ((2,),), ())
    avoid = GridCover.empty(16, 1)
    assert not verify_orbit(f, np.array([[0.1], [0.3]]), avoid)
    assert verify_orbit(f, np.array([[0.1], [0.2]]), avoid)
