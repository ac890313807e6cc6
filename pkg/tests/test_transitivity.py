import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_transit.geometry import ArcPolyline, BoxRegion
from robust_transit.maps import MapSpec
from robust_transit.regions import GridCover
from robust_transit.transitivity import (CylinderSpec, TransitivityError, ball_growth_steps,
                                         build_transition_graph, diameter_growth, irg_pipeline,
                                         preorbit_density, separation_check, slab_crossing, slab_m,
                                         strongly_connected)


def test_doubling_graph_is_strongly_connected(doubling):
    g = build_transition_graph(doubling, 64)
    assert strongly_connected(g).passed
    assert g.has_path(0, 63)


def test_identity_graph_splits():
    g = build_transition_graph(MapSpec(1, ((1,),), ()), 16)
    c = strongly_connected(g)
    assert c.verdict == "fail"
    assert c.details["components"] == 16


def test_rotation_product_graph_is_connected(rotation_product):
    assert strongly_connected(build_transition_graph(rotation_product, 32)).passed


def test_graph_csv(tmp_path, doubling):
    g = build_transition_graph(doubling, 8)
    path = tmp_path / "edges.csv"
    g.write_csv(path)
    assert len(path.read_text().splitlines()) == g.adjacency.nnz + 1


def test_preorbit_density_depth_for_doubling(doubling):
    # the 2^k preimages of x at depth k are spaced 2^-k apart, so 16 cells need k = 4
    c = preorbit_density(doubling, [0.3], 10, 1 / 16)
    assert c.passed
    assert c.details["n0"] == 4


def test_preorbit_density_fails_when_too_shallow(doubling):
    assert not preorbit_density(doubling, [0.3], 2, 1 / 16).passed


@given(st.integers(1, 9))
def test_slab_m_exceeds_twice_root_n(n):
    m = slab_m(n)
    assert m > 2 * math.sqrt(n) and m - 1 <= 2 * math.sqrt(n)


@given(st.floats(1.1, 4), st.floats(0.01, 1), st.floats(1e-4, 0.1))
def test_ball_growth_steps_is_minimal(lam, R, eps):
    N = ball_growth_steps(lam, R, eps)
    assert lam ** (-N) * R < eps / 2
    if N > 0:
        assert lam ** (-(N - 1)) * R >= eps / 2


def test_ball_growth_known_value():
    assert ball_growth_steps(2.0, 1.0, 0.01) == 8


def test_ball_growth_rejects_contraction():
    with pytest.raises(TransitivityError):
        ball_growth_steps(1.0, 1.0, 0.1)


def test_diameter_doubling_control():
    f = MapSpec(2, ((2, 0), (0, 2)), ())
    V = BoxRegion((0.3, 0.3), (0.3 + 1 / 16, 0.3 + 1 / 16), fundamental=False)
    m0, _, diams = diameter_growth(f, V, slab_m(2))
    assert m0 == 6
    assert np.allclose(diams[:7], [2 ** k / 16 for k in range(7)])


def test_slab_crossing_straight_line():
    pts = np.stack([np.linspace(0.5, 2.5, 301), np.zeros(301)], axis=1)
    sub, i, j = slab_crossing(pts, np.array([0.4, 0.4]), np.array([0.6, 0.6]))
    assert i == 0 and j == 0
    assert sub[0, 0] == pytest.approx(0.6)
    assert sub[-1, 0] == pytest.approx(1.4)


def test_slab_crossing_none_for_short_arc():
    pts = np.stack([np.linspace(0.0, 0.5, 50), np.zeros(50)], axis=1)
    assert slab_crossing(pts, np.array([0.4, 0.4]), np.array([0.6, 0.6])) is None


def test_irg_pipeline_on_uniform_expansion():
    f = MapSpec(2, ((3, 0), (0, 3)), ())
    U0 = GridCover.ball((0.5, 0.5), 0.1, 64)
    U1 = U0.dilate(1)
    U2 = U1.dilate(1)
    V = BoxRegion((0.1, 0.1), (0.1 + 1 / 32, 0.1 + 1 / 32), fundamental=False)
    rep = irg_pipeline(f, V, U0, U1, U2, 0.5, 2.0)
    assert rep.completed
    assert rep.N == ball_growth_steps(2.0, rep.R, 0.01)


def band_cover(res=64):
    mask = np.zeros((res, res), bool)
    mask[:, 32:34] = True
    return GridCover(res, mask)


def vertical_cylinder(radius):
    arc = ArcPolyline.from_array([[0.5, 0.2], [0.5, 0.8]])
    return CylinderSpec(arc, radius)


def test_separation_by_band():
    assert separation_check(band_cover(), vertical_cylinder(0.05)).passed


def test_separation_fails_without_cover():
    c = separation_check(GridCover.empty(64, 2), vertical_cylinder(0.05))
    assert c.verdict == "fail"


def test_separation_fails_with_gap():
    cov = band_cover()
    mask = cov.mask.copy()
    mask[32, :] = False
    c = separation_check(GridCover(64, mask), vertical_cylinder(0.05))
    assert c.verdict == "fail"


def test_separation_inconclusive_when_too_thin():
    assert separation_check(band_cover(), vertical_cylinder(0.01)).verdict == "inconclusive"
