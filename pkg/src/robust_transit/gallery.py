"""Builders for the four worked examples, each bundled with its regions and claim checkers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certificate import Certificate, stopwatch, verdict_from
from .cones import (ConeFamily, SkewProductSpec, check_cone_invariance, check_domination,
                    check_teo2_disc_hypothesis)
from .geometry import ArcPolyline, BoxRegion, project, wrap_delta
from .maps import BumpTerm, MapError, MapSpec, TrigTerm, Window, grid_points
from .regions import (GridCover, arc_witness, check_expanding_on, check_H2_arc_property,
                      check_H3_surjectivity_off_U1, check_volume_expanding, compute_lambda_cover,
                      default_delta0, random_arc_in, verify_orbit, _refine_pts)


class BuildError(ValueError):
    pass


@dataclass
class ExampleInstance:
    name: str
    map: MapSpec | SkewProductSpec
    U0: GridCover | None = None
    U1: GridCover | None = None
    U2: GridCover | None = None
    constants: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    claims: dict[str, Callable[..., Certificate]] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def mapspec(self) -> MapSpec:
        return self.map.compile() if isinstance(self.map, SkewProductSpec) else self.map

    def verify(self, names=None, **kw) -> list[Certificate]:
        names = list(self.claims) if names is None else list(names)
        return [self.claims[n](self, **kw.get(n, {})) for n in names]

    def to_json(self) -> dict:
        d = {"name": self.name, "map": self.mapspec.to_json(), "params": self.params,
             "constants": self.constants, "claims": list(self.claims)}
        if isinstance(self.map, SkewProductSpec):
            d["skew_product"] = self.map.to_json()
        for key in ("U0", "U1", "U2"):
            cov = getattr(self, key)
            if cov is not None:
                d[key] = cov.to_json()
        return d


# ---------------------------------------------------------------- shared pieces

_U = 1.0 / math.sqrt(5.0)
_PEAK = _U * (1.0 - _U * _U) ** 2   # max of u (1 - u^2)^2


def bump_pair(center, radius: float, i: int, j: int, slope: float) -> list[BumpTerm]:
    """Two opposite bumps offset along e_j whose sum has d h_i / d x_j = slope at ``center``.

    The pair vanishes at ``center`` and is supported in the max-ball of radius
    ``radius * (1 + 1/sqrt(5))`` around it.
    """
    c = np.asarray(center, float)
    e = np.eye(len(c))[j]
    s = radius * _U
    D = -slope * radius / (12.0 * _PEAK)
    disp = np.zeros(len(c))
    disp[i] = D
    return [BumpTerm(tuple(c - s * e), radius, tuple(disp)), BumpTerm(tuple(c + s * e), radius, tuple(-disp))]


def pair_support(radius: float) -> float:
    return radius * (1.0 + _U)


# ---------------------------------------------------------------- Example 1

def build_example1(degree: int = 4, bifurcation_amplitude: float | None = None,
                   rotation_angle: float = math.pi / 4, sigma: float = 2.0, lam: float = 1.5,
                   res: int = 64, u0_radius: float = 0.15, bump_radius: float = 0.1) -> ExampleInstance:
    """diag(d, d) with a pitchfork deformation inside U0 and a rotation at a second fixed point.

    ``bifurcation_amplitude`` is how much the horizontal eigenvalue at
    p = (1/3, 1/3) is lowered (default: down to 0.8).  At q1 = (2/3, 2/3) the
    Jacobian becomes ``d * [[1, -t], [t, 1]]`` with ``t = tan(rotation_angle)``.
    """
    d = int(degree)
    if d < 2:
        raise BuildError("degree must be at least 2")
    amp = d - 0.8 if bifurcation_amplitude is None else float(bifurcation_amplitude)
    p = np.array([1.0, 1.0]) / (d - 1) if d > 2 else np.array([0.0, 0.0])
    q = 2 * p if d > 3 else np.array([0.5, 0.5]) if d == 3 else np.array([0.0, 0.0])
    if pair_support(bump_radius) >= u0_radius:
        raise BuildError("pitchfork bumps do not fit inside U0")
    # volume guard: det = d * (d - amp) at p, the minimum of the deformation
    if d * (d - amp) <= sigma:
        raise BuildError(f"amplitude {amp} breaks volume expansion: d(d - amp) = {d * (d - amp):.3g} <= sigma = {sigma}")
    terms = []
    if amp:
        terms += bump_pair(p, bump_radius, 0, 0, -amp)
    if rotation_angle:
        b = d * math.tan(rotation_angle)
        terms += bump_pair(q, bump_radius, 0, 1, -b) + bump_pair(q, bump_radius, 1, 0, b)
    f = MapSpec(2, ((d, 0), (0, d)), tuple(terms), f"example1_d{d}")
    U0 = GridCover.ball(p, u0_radius, res)
    if rotation_angle and U0.contains_points(q + np.array([[0, 0]])).any():
        raise BuildError("rotation point falls inside U0")
    U1 = U0.dilate(1)
    U2 = U1.dilate(1)
    step = 1.0 / 256
    x = grid_points(2, step) + step / 2
    det, _ = f.det_and_min_norm(x)
    if np.abs(det).min() <= sigma:
        raise BuildError(f"volume guard failed: min |det| = {np.abs(det).min():.4g}")
    delta0 = default_delta0(U0)
    inst = ExampleInstance("example1", f, U0, U1, U2,
                           {"delta0": delta0, "lambda": lam, "sigma": sigma, "lambda_prime": 1.5, "eps": 0.01},
                           {"degree": d, "bifurcation_amplitude": amp, "rotation_angle": rotation_angle,
                            "res": res, "u0_radius": u0_radius, "bump_radius": bump_radius},
                           extras={"p": p.tolist(), "q1": q.tolist(), "psi": "identity"})
    inst.claims = {
        "volume": lambda I, **kw: check_volume_expanding(I.mapspec, kw.get("grid_step", 1 / 128), I.constants["sigma"]),
        "H1": lambda I, **kw: check_expanding_on(I.mapspec, I.U0, I.constants["lambda"], I.U0.res),
        "H2": lambda I, **kw: check_H2_arc_property(I.mapspec, I.U0, I.U1, I.constants["delta0"],
                                                    kw.get("horizon", 40), kw.get("samples", 12), kw.get("seed", 0)),
        "H3": lambda I, **kw: check_H3_surjectivity_off_U1(I.mapspec, I.U1),
        "complex_eigenvalues": lambda I, **kw: check_complex_eigenvalues(I.mapspec, I.extras["q1"]),
    }
    return inst


def check_complex_eigenvalues(f: MapSpec, point) -> Certificate:
    """Negative discriminant of Df at ``point``: no invariant real line there."""
    J = f.jacobian_matrix(np.asarray(point, float)[None])[0]
    tr, det = float(np.trace(J)), float(np.linalg.det(J))
    disc = tr * tr - 4 * det
    return Certificate("complex_eigenvalues", verdict_from(disc < 0), -disc, None,
                       {"point": list(point)}, 0.0, {"trace": tr, "det": det, "discriminant": disc})


# ---------------------------------------------------------------- Example 2

def _preimage_cells(base: int, cell) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    """Closed preimage boxes of a base-grid cell under diag(base, base)."""
    i, j = cell
    out = []
    for a in range(base):
        for b in range(base):
            lo = ((i + a * base) / base ** 2, (j + b * base) / base ** 2)
            out.append((lo, (lo[0] + 1 / base ** 2, lo[1] + 1 / base ** 2)))
    return out


def _closed_overlap(lo1, hi1, lo2, hi2) -> bool:
    # closed boxes on the torus, one-dimensional test per axis
    for a0, a1, b0, b1 in zip(lo1, hi1, lo2, hi2):
        hit = False
        for k in (-1, 0, 1):
            if a0 <= b1 + k + 1e-12 and b0 + k <= a1 + 1e-12:
                hit = True
        if not hit:
            return False
    return True


def _inside(lo1, hi1, lo2, hi2) -> bool:
    for a0, a1, b0, b1 in zip(lo1, hi1, lo2, hi2):
        if not any(b0 + k - 1e-12 <= a0 and a1 <= b1 + k + 1e-12 for k in (-1, 0, 1)):
            return False
    return True


def check_removed_cells(base: int, removed) -> None:
    """Refuse removed cells whose preimages straddle another removed cell."""
    boxes = [((i / base, j / base), ((i + 1) / base, (j + 1) / base)) for i, j in removed]
    for c in removed:
        for plo, phi in _preimage_cells(base, c):
            for (rlo, rhi), r in zip(boxes, removed):
                if _closed_overlap(plo, phi, rlo, rhi) and not _inside(plo, phi, rlo, rhi):
                    raise BuildError(f"preimage of removed cell {tuple(c)} collides with removed cell {tuple(r)}")


def build_example2(base_degree: int = 3, removed_cells=((1, 1),), contraction_depth: float = 0.5,
                   res: int | None = None, bump_radius: float | None = None) -> ExampleInstance:
    """diag(b, b) deformed inside removed base cells so that the map contracts there.

    Outside the removed cells the map equals the linear one, so the
    surviving set is the product Cantor carpet determined by the removed cells.
    """
    b = int(base_degree)
    removed = [tuple(int(v) for v in c) for c in removed_cells]
    check_removed_cells(b, removed)
    res = res or b ** 6
    terms = []
    fixed = []
    for i, j in removed:
        # fixed points of diag(b, b) inside the cell, if any, receive the contraction
        for m1 in range(b - 1):
            for m2 in range(b - 1):
                pt = np.array([m1, m2]) / (b - 1)
                if i / b < pt[0] < (i + 1) / b and j / b < pt[1] < (j + 1) / b:
                    fixed.append(pt)
    rho = bump_radius or 0.5 / b / (1 + _U) * 0.9
    for pt in fixed:
        slope = contraction_depth - b
        terms += bump_pair(pt, rho, 0, 0, slope) + bump_pair(pt, rho, 1, 1, slope)
    f = MapSpec(2, ((b, 0), (0, b)), tuple(terms), f"example2_b{b}")
    step = 1.0 / 256
    det, _ = f.det_and_min_norm(grid_points(2, step) + step / 2)
    if det.min() <= 0:
        raise BuildError("deformation is not a local diffeomorphism")
    boxes = [BoxRegion((i / b, j / b), ((i + 1) / b, (j + 1) / b)) for i, j in removed]
    U0 = GridCover.from_boxes(boxes, res, 2) if boxes else GridCover.empty(res, 2)
    inst = ExampleInstance("example2", f, U0, U0.dilate(1) if boxes else U0, None,
                           {"sigma": None, "delta0": 1.0},
                           {"base_degree": b, "removed_cells": [list(c) for c in removed],
                            "contraction_depth": contraction_depth, "res": res},
                           extras={"contracted_fixed_points": [p.tolist() for p in fixed]})
    inst.claims = {
        "d0": lambda I, **kw: check_hole_diameter(I, kw.get("depth", 4)),
        "afir31": lambda I, **kw: check_large_arcs_meet_lambda(I, kw.get("arcs", 50), kw.get("depth", 6),
                                                               kw.get("seed", 0)),
    }
    return inst


def check_hole_diameter(inst: ExampleInstance, depth: int = 4) -> Certificate:
    """Largest component of the cells that enter U0 within ``depth`` steps has diameter < 1."""
    with stopwatch() as sw:
        lc = compute_lambda_cover(inst.mapspec, inst.U0, depth)
        holes = lc.cover.complement()
        diams = holes.component_diameters() if not holes.is_empty() else [0.0]
        d0 = max(diams)
    return Certificate("d0_components", verdict_from(d0 < 1.0), 1.0 - d0, inst.U0.res, {"depth": depth},
                       sw["elapsed"], {"d0": d0, "components": len(diams)})


def sample_large_arcs(U0: GridCover, count: int, min_diam: float, rng: np.random.Generator):
    kinds = ("walk", "axis", "diagonal")
    return [random_arc_in(U0, min_diam, rng, kinds[i % 3]) for i in range(count)]


def check_large_arcs_meet_lambda(inst: ExampleInstance, arcs: int = 50, depth: int = 6, seed: int = 0,
                                 min_diam: float = 1.0) -> Certificate:
    """Arcs of diameter >= min_diam in U0^c meet the depth-``depth`` cover, with orbit witnesses."""
    f = inst.mapspec
    rng = np.random.default_rng(seed)
    with stopwatch() as sw:
        lc = compute_lambda_cover(f, inst.U0, depth)
        hits, witnessed, failures = 0, 0, []
        for n, arc in enumerate(sample_large_arcs(inst.U0, arcs, min_diam, rng)):
            fine = _refine_pts(arc, lc.cover.cell_width / 4)
            met = bool(lc.cover.contains_points(fine).any())
            w = arc_witness(f, arc, inst.U0, depth)
            ok_w = w is not None and verify_orbit(f, w[0], inst.U0)
            hits += met
            witnessed += ok_w
            if not (met and ok_w):
                failures.append(n)
    ok = hits == arcs and witnessed == arcs
    return Certificate("afir31_large_arcs", verdict_from(ok), (hits / arcs) if ok else -len(failures) / arcs,
                       lc.cover.res, {"arcs": arcs, "depth": depth, "seed": seed, "min_diam": min_diam},
                       sw["elapsed"], {"intersections": hits, "witnessed": witnessed, "failures": failures[:10],
                                       "cover_fraction": lc.fraction})


# ---------------------------------------------------------------- Example 3

def _fourier_basis(x, K):
    x = np.asarray(x, float)[:, None]
    k = np.arange(1, K + 1)[None]
    return np.hstack([np.ones((len(x), 1)), np.sin(2 * np.pi * k * x), np.cos(2 * np.pi * k * x)])


def _fourier_dbasis(x, K):
    x = np.asarray(x, float)[:, None]
    k = np.arange(1, K + 1)[None]
    w = 2 * np.pi * k
    return np.hstack([np.zeros((len(x), 1)), w * np.cos(w * x), -w * np.sin(w * x)])


def design_circle_diffeo(repeller: float, attractor: float, J: tuple[float, float], image: tuple[float, float],
                         min_slope: float = 1.15, K: int = 6) -> np.ndarray:
    """Trig-polynomial displacement h with F = x + h a circle diffeomorphism.

    F fixes exactly ``repeller`` and ``attractor``, maps the endpoints of
    ``J`` to those of ``image`` and has slope >= ``min_slope`` on J.  Solved
    as a linear program that maximises the global lower bound of F'.
    Returns coefficients [c0, sin_1..sin_K, cos_1..cos_K].
    """
    from scipy.optimize import linprog

    xs = np.linspace(0, 1, 401)[:-1]
    nb = 2 * K + 1
    A_eq, b_eq = [], []
    for x, v in ((J[0], image[0] - J[0]), (J[1], image[1] - J[1]), (repeller, 0.0), (attractor, 0.0)):
        A_eq.append(np.r_[_fourier_basis([x], K)[0], 0.0])
        b_eq.append(v)
    A_ub, b_ub = [], []
    for row in _fourier_dbasis(np.linspace(J[0], J[1], 200), K):
        A_ub.append(np.r_[-row, 0.0])
        b_ub.append(-(min_slope - 1.0))
    for row in _fourier_dbasis(xs, K):
        A_ub.append(np.r_[-row, 1.0])          # h' >= u
        b_ub.append(0.0)
    A_ub.append(np.r_[_fourier_dbasis([attractor], K)[0], 0.0])
    b_ub.append(-0.1)
    span = (attractor - repeller) % 1.0
    for x, row in zip(xs, _fourier_basis(xs, K)):
        dd = min(abs((x - repeller + 0.5) % 1 - 0.5), abs((x - attractor + 0.5) % 1 - 0.5))
        if dd < 0.01:
            continue
        sign = 1.0 if (x - repeller) % 1.0 < span else -1.0
        A_ub.append(np.r_[-sign * row, 0.0])
        b_ub.append(-0.05 * dd)
    res = linprog(np.r_[np.zeros(nb), -1.0], A_ub=np.array(A_ub), b_ub=b_ub, A_eq=np.array(A_eq), b_eq=b_eq,
                  bounds=[(-1, 1)] * nb + [(-0.9, None)], method="highs")
    if res.status != 0:
        raise BuildError(f"no fibre map with repeller {repeller}, attractor {attractor} on J = {J}")
    return res.x[:nb]


def _fourier_terms(coef: np.ndarray, window: Window, dim: int = 2) -> list[TrigTerm]:
    K = (len(coef) - 1) // 2
    terms = []
    zero = (0,) * dim
    if abs(coef[0]) > 0:
        terms.append(TrigTerm(zero, float(coef[0]), math.pi / 2, 0, window))
    for k in range(1, K + 1):
        s, c = coef[k], coef[K + k]
        kv = (k,) + (0,) * (dim - 1)
        if s:
            terms.append(TrigTerm(kv, float(s), 0.0, 0, window))
        if c:
            terms.append(TrigTerm(kv, float(c), math.pi / 2, 0, window))
    return terms


def _base_shift(intervals, N: int) -> float:
    """Translation s so that y -> N y + s has a fixed point inside every interval (max-min margin)."""
    best, best_s = -1.0, None
    for s in np.linspace(0, 1, 20001)[:-1]:
        fixed = (np.arange(N - 1) - s) % (N - 1) / (N - 1)
        margins = []
        for lo, hi in intervals:
            inside = fixed[(fixed > lo) & (fixed < hi)]
            margins.append(np.max(np.minimum(inside - lo, hi - inside)) if len(inside) else -1.0)
        m = min(margins)
        if m > best:
            best, best_s = m, float(s)
    if best <= 0:
        raise BuildError("no translation puts a fixed point of the base map in every interval")
    return best_s


def build_example3(a: float = 0.25, b: float = 0.5, c: float = 0.5, d: float = 0.75, N: int = 81,
                   slopes: float = 1.15, intervals=None, kappa: float = 0.07) -> ExampleInstance:
    """Skew product (x, y) -> (phi_y(x), N y + s) carrying two blenders.

    The fibre maps f_1..f_4 are designed on J_1 = [0, b], J_2 = [a, 3/4],
    J_3 = [1/4, d], J_4 = [c, 1]; phi_y equals f_i for y in I_i and is a
    smoothstep blend of neighbouring f_i in the gaps.
    """
    if not (0 < a < b < 0.75):
        raise BuildError("constraint 0 < a < b < 3/4 violated")
    if not (0.25 < c < d < 1):
        raise BuildError("constraint 1/4 < c < d < 1 violated")
    if N <= 3:
        raise BuildError("constraint N > 3 violated")
    if N < 5:
        raise BuildError("N >= 5 needed to fit four intervals of length 1/N")
    L = 1.0 / N
    if intervals is None:
        centres = [0.125 + 0.25 * i for i in range(4)]
        intervals = [(ci - L / 2, ci + L / 2) for ci in centres]
    intervals = [tuple(map(float, I)) for I in intervals]
    ends = [v for I in intervals for v in I]
    if not (0 < ends[0] and all(x < y for x, y in zip(ends, ends[1:])) and ends[-1] < 1):
        raise BuildError("intervals must satisfy 0 < a_1 < b_1 < ... < b_4 < 1")
    if any(abs((hi - lo) - L) > 1e-9 for lo, hi in intervals):
        raise BuildError("every interval must have length 1/N")
    s = _base_shift(intervals, N)
    fixed = [(np.arange(N - 1) - s) % (N - 1) / (N - 1) for _ in range(1)][0]
    c_fixed = [float(fixed[(fixed > lo) & (fixed < hi)][0]) for lo, hi in intervals]
    gaps = [intervals[(i + 1) % 4][0] - intervals[i][1] + (1.0 if i == 3 else 0.0) for i in range(4)]
    ramp = min(gaps)
    J = [(0.0, b), (a, 0.75), (0.25, d), (c, 1.0)]
    images = [(0.0, 0.75), (0.0, 0.75), (0.25, 1.0), (0.25, 1.0)]
    fixed_pts = [(0.0, 0.85), (0.75, 0.9), (0.25, 0.15), (1.0, 0.1)]
    coefs = [design_circle_diffeo(r, at, Ji, im, slopes) for (r, at), Ji, im in zip(fixed_pts, J, images)]
    terms = []
    for coef, (lo, hi) in zip(coefs, intervals):
        terms += _fourier_terms(coef, Window(1, lo, hi, ramp))
    base = MapSpec(1, ((N,),), (TrigTerm((0,), s, math.pi / 2, 0),) if s else (), f"base_{N}")
    sk = SkewProductSpec(1, ((1,),), tuple(terms), base, f"example3_N{N}")
    f = sk.compile()
    step = 1.0 / 256
    det, _ = f.det_and_min_norm(grid_points(2, step) + step / 2)
    if np.abs(det).min() <= 1.0:
        raise BuildError(f"|det DPhi| > 1 fails: min {np.abs(det).min():.4g}")
    R = [BoxRegion((Ji[0], Ii[0]), (Ji[1], Ii[1])) for Ji, Ii in zip(J, intervals)]
    res = 1024
    inst = ExampleInstance("example3", sk, None, None, None,
                           {"kappa": kappa, "lambda_dom": 0.9, "lambda0": 1.1, "delta0": 1.0},
                           {"a": a, "b": b, "c": c, "d": d, "N": N, "slopes": slopes,
                            "intervals": [list(I) for I in intervals], "res": res},
                           extras={"J": J, "R": R, "c_fixed": c_fixed, "shift": s, "fiber_coefs": coefs,
                                   "fiber_fixed_points": fixed_pts})
    inst.claims = {
        "fixed_fibers": lambda I, **kw: check_fixed_fibers(I),
        "overlap": lambda I, **kw: check_overlap(I),
        "vertical_segments": lambda I, **kw: check_vertical_segments(I, kw.get("segments", 50), kw.get("depth", 8),
                                                                     kw.get("seed", 0), kw.get("res", res)),
        "cone_invariance": lambda I, **kw: check_cone_invariance(I.mapspec, I.cones(), kw.get("grid_step", 1 / 128)),
        "domination": lambda I, **kw: check_domination(I.mapspec, I.cones(), I.constants["lambda_dom"],
                                                       kw.get("grid_step", 1 / 32)),
        "teo2_discs": lambda I, **kw: check_teo2_disc_hypothesis(I.mapspec, I.cones(), I.constants["delta0"],
                                                                 I.constants["lambda0"], 0, kw.get("horizon", 12),
                                                                 kw.get("samples", 10), kw.get("seed", 0), 256),
    }
    return inst


def _cones(self: ExampleInstance) -> ConeFamily:
    return ConeFamily.coordinate(2, [0], self.constants["kappa"])


ExampleInstance.cones = _cones


def blender_covers(inst: ExampleInstance, depth: int, res: int):
    """Lambda covers of R_1 u R_2 and R_3 u R_4."""
    f = inst.mapspec
    R = inst.extras["R"]
    out = []
    for pair in ((0, 1), (2, 3)):
        keep = GridCover.from_boxes([R[i] for i in pair], res)
        out.append(compute_lambda_cover(f, keep.complement(), depth, f"R{pair[0] + 1}uR{pair[1] + 1}"))
    return out


def check_fixed_fibers(inst: ExampleInstance) -> Certificate:
    """The circles S^1 x {c_i} are invariant."""
    f = inst.mapspec
    x = np.linspace(0, 1, 257)[:-1]
    worst = 0.0
    for ci in inst.extras["c_fixed"]:
        img = f.eval(np.stack([x, np.full_like(x, ci)], axis=1))
        worst = max(worst, float(np.abs(wrap_delta(img[:, 1] - ci)).max()))
    return Certificate("fixed_fibers", verdict_from(worst < 1e-9), 1e-9 - worst, None, {}, 0.0, {"max_drift": worst})


def check_overlap(inst: ExampleInstance) -> Certificate:
    """Phi(R_1) and Phi(R_2) have x-range [0, 3/4]; Phi(R_3), Phi(R_4) have [1/4, 1]; all span every y."""
    f = inst.mapspec
    targets = [(0.0, 0.75), (0.0, 0.75), (0.25, 1.0), (0.25, 1.0)]
    worst = 0.0
    for R, (lo, hi) in zip(inst.extras["R"], targets):
        gx = np.linspace(R.lo[0], R.hi[0], 201)
        gy = np.linspace(R.lo[1], R.hi[1], 21)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        img = f.eval_lift(np.stack([X.ravel(), Y.ravel()], axis=1))
        xr = (img[:, 0].min(), img[:, 0].max())
        yr = img[:, 1].max() - img[:, 1].min()
        worst = max(worst, abs(xr[0] - lo), abs(xr[1] - hi), abs(yr - 1.0))
    return Certificate("overlap", verdict_from(worst < 1e-6), 1e-6 - worst, None, {}, 0.0, {"max_error": worst})


def backward_sequence(inst: ExampleInstance, z, steps: int, pair=(0, 1)) -> np.ndarray | None:
    """z_0 = z, Phi(z_k) = z_{k-1}, every z_k inside R_i u R_j."""
    f = inst.mapspec
    R = [inst.extras["R"][i] for i in pair]
    seq = [np.asarray(z, float)]
    for _ in range(steps):
        pre = f.preimage_array(seq[-1])
        inside = [p for p in pre if any(r.contains(p) for r in R)]
        if not inside:
            return None
        seq.append(inside[0])
    return np.array(seq)


def vertical_segment(x0: float, y0: float = 0.0, length: float = 1.0, n: int = 2) -> np.ndarray:
    return np.stack([np.full(n, x0), np.linspace(y0, y0 + length, n)], axis=1)


def check_vertical_segments(inst: ExampleInstance, segments: int = 50, depth: int = 8, seed: int = 0,
                            res: int = 1024, witnesses: bool = True) -> Certificate:
    """Random vertical unit segments meet the cover of Lambda_1 or Lambda_2."""
    rng = np.random.default_rng(seed)
    f = inst.mapspec
    with stopwatch() as sw:
        covers = blender_covers(inst, depth, res)
        union = covers[0].cover.union(covers[1].cover)
        cols = union.mask.any(axis=1)
        R = inst.extras["R"]
        misses, witnessed = [], 0
        for n in range(segments):
            x0 = float(rng.random())
            col = min(int(x0 * res), res - 1)
            if not cols[col]:
                misses.append(x0)
                continue
            if witnesses:
                seg = vertical_segment(x0)
                found = False
                for pair, cov in zip(((0, 1), (2, 3)), covers):
                    avoid = GridCover.from_boxes([R[i] for i in pair], res).complement()
                    w = arc_witness(f, seg, avoid, depth, max_seg=1.0 / (4 * res))
                    if w is not None and verify_orbit(f, w[0], avoid, tol=1e-8):
                        found = True
                        break
                witnessed += found
    hits = segments - len(misses)
    ok = hits == segments and (not witnesses or witnessed == segments)
    disjoint = not np.any(covers[0].cover.mask & covers[1].cover.mask)
    return Certificate("vertical_segments", verdict_from(ok and disjoint),
                       (hits / segments) if ok and disjoint else -max(len(misses), 1) / segments, res,
                       {"segments": segments, "depth": depth, "seed": seed},
                       sw["elapsed"], {"hits": hits, "witnessed": witnessed if witnesses else None,
                                       "misses": misses[:10], "covers_disjoint": disjoint,
                                       "fractions": [c.fraction for c in covers]})


def build_broken_example3(N: int = 81, contraction: float = 0.12) -> ExampleInstance:
    """Blender removed: every fibre map is the same circle map with a sink at 0."""
    term = TrigTerm((1, 0), -contraction, 0.0, 0)
    base = MapSpec(1, ((N,),), (), f"base_{N}")
    sk = SkewProductSpec(1, ((1,),), (term,), base, "example3_broken")
    return ExampleInstance("example3_broken", sk, constants={"kappa": 0.07, "lambda0": 1.1, "delta0": 1.0},
                           params={"N": N, "contraction": contraction})


# ---------------------------------------------------------------- Example 4

def ifs_covering(maps, lo: float, hi: float, grid: int = 4096) -> tuple[bool, float | None]:
    """Whether the images of [lo, hi] under increasing maps cover [lo, hi]; else an uncovered point."""
    imgs = sorted((float(g(lo)), float(g(hi))) for g in maps)
    reach = lo
    for a, b in imgs:
        if a > reach + 1e-12:
            return False, 0.5 * (reach + a)
        reach = max(reach, b)
        if reach >= hi:
            return True, None
    return False, 0.5 * (reach + hi) if reach < hi else hi


def ifs_orbit(maps, x0: float, depth: int) -> np.ndarray:
    pts = np.array([x0], float)
    allpts = [pts]
    for _ in range(depth):
        pts = np.unique(np.concatenate([np.asarray(g(pts), float) for g in maps]).round(15))
        allpts.append(pts)
    return np.unique(np.concatenate(allpts))


def ifs_density(maps, x0: float, lo: float, hi: float, depth: int, eps: float) -> tuple[bool, float]:
    """Whether the IFS orbit of x0 is eps-dense in [lo, hi]; returns the largest gap."""
    pts = ifs_orbit(maps, x0, depth)
    pts = np.sort(pts[(pts >= lo - 1e-12) & (pts <= hi + 1e-12)])
    if len(pts) == 0:
        return False, hi - lo
    gaps = np.diff(np.concatenate([[lo], pts, [hi]]))
    g = float(gaps.max())
    return g < eps, g


def build_example4(k_offsets=(-0.11, 0.0, 0.11), r_centers=None, delta: float = 0.15, s: float = 0.5,
                   N: int = 9) -> ExampleInstance:
    """T^1 x T^1 skew product whose fibre maps over the Q_i form a covering IFS near 0.

    phi_0(u) = u - s sin(2 pi u) / (2 pi) contracts [-delta, delta]; the IFS is
    {phi_0 + c_i}.  Over the interval Q_i around the i-th chosen fixed point of
    y -> N y the fibre map is phi_0 + c_i.
    """
    offsets = [float(c) for c in k_offsets]
    if not 0 < s < 1:
        raise BuildError("contraction parameter s must lie in (0, 1)")
    lam1 = 1 - s * math.cos(2 * math.pi * delta)
    if not lam1 < 1:
        raise BuildError("phi_0 is not a contraction on the disc")

    def phi0(u):
        u = np.asarray(u, float)
        return u - s * np.sin(2 * np.pi * u) / (2 * np.pi)

    maps = [lambda u, c=c: phi0(u) + c for c in offsets]
    ok, witness = ifs_covering(maps, -delta, delta)
    if not ok:
        raise BuildError(f"covering fails: point {witness:.6g} of the disc is not covered")
    k = len(offsets)
    if r_centers is None:
        spacing = (N - 1) // k
        r_centers = [(1 + spacing * i) / (N - 1) for i in range(k)]
    r_centers = [float(r) for r in r_centers]
    L = 1.0 / N
    Q = [(r - L / 2, r + L / 2) for r in r_centers]
    gaps = [Q[(i + 1) % k][0] - Q[i][1] + (1.0 if i == k - 1 else 0.0) for i in range(k)]
    if min(gaps) <= 0:
        raise BuildError("fibre intervals overlap")
    ramp = min(gaps)
    terms = []
    for c, (lo, hi) in zip(offsets, Q):
        w = Window(1, lo, hi, ramp)
        terms.append(TrigTerm((1, 0), -s / (2 * np.pi), 0.0, 0, w))
        if c:
            terms.append(TrigTerm((0, 0), c, math.pi / 2, 0, w))
    base = MapSpec(1, ((N,),), (), f"base_{N}")
    sk = SkewProductSpec(1, ((1,),), tuple(terms), base, f"example4_k{k}")
    R = [BoxRegion((-delta, lo), (delta, hi), fundamental=False) for lo, hi in Q]
    inst = ExampleInstance("example4", sk, None, None, None,
                           {"delta": delta, "lambda1": lam1, "eps": 0.02},
                           {"k_offsets": offsets, "r_centers": r_centers, "delta": delta, "s": s, "N": N},
                           extras={"maps": maps, "Q": Q, "R": R})
    inst.claims = {
        "covering": lambda I, **kw: _covering_cert(I),
        "orbit_density": lambda I, **kw: _density_cert(I, kw.get("depth", 10), kw.get("eps", I.constants["eps"])),
        "vertical_segments": lambda I, **kw: check_ifs_segments(I, kw.get("segments", 30), kw.get("depth", 8),
                                                                kw.get("seed", 0)),
    }
    return inst


def _covering_cert(inst: ExampleInstance) -> Certificate:
    d = inst.constants["delta"]
    ok, w = ifs_covering(inst.extras["maps"], -d, d)
    imgs = sorted((float(g(-d)), float(g(d))) for g in inst.extras["maps"])
    overlap = min(b0 - a1 for (a0, a1), (b0, b1) in zip(imgs, imgs[1:])) if len(imgs) > 1 else 0.0
    slack = min(imgs[0][0] + d, d - imgs[-1][1])
    margin = -max(overlap, slack) if ok else -1.0
    return Certificate("ifs_covering", verdict_from(ok and margin > 0), margin if ok else -1.0, None,
                       {"delta": d}, 0.0, {"images": imgs, "uncovered": w})


def _density_cert(inst: ExampleInstance, depth: int, eps: float) -> Certificate:
    d = inst.constants["delta"]
    ok, gap = ifs_density(inst.extras["maps"], 0.0, -d, d, depth, eps)
    return Certificate("ifs_orbit_density", verdict_from(ok), eps - gap, None, {"depth": depth, "eps": eps},
                       0.0, {"largest_gap": gap})


def check_ifs_segments(inst: ExampleInstance, segments: int = 30, depth: int = 8, seed: int = 0,
                       res: int = 512) -> Certificate:
    """Vertical unit segments over the disc meet the cover of orbits staying in the rectangles."""
    f = inst.mapspec
    rng = np.random.default_rng(seed)
    d = inst.constants["delta"]
    with stopwatch() as sw:
        keep = GridCover.from_boxes(inst.extras["R"], res)
        avoid = keep.complement()
        lc = compute_lambda_cover(f, avoid, depth)
        cols = lc.cover.mask.any(axis=1)
        hits, witnessed = 0, 0
        for _ in range(segments):
            x0 = float(rng.uniform(-d, d)) % 1.0
            hits += bool(cols[min(int(x0 * res), res - 1)])
            w = arc_witness(f, vertical_segment(x0), avoid, depth, max_seg=1.0 / (4 * res))
            witnessed += w is not None and verify_orbit(f, w[0], avoid, tol=1e-8)
    ok = hits == segments and witnessed == segments
    return Certificate("ifs_vertical_segments", verdict_from(ok), 1.0 if ok else -(segments - min(hits, witnessed)) / segments,
                       res, {"segments": segments, "depth": depth, "seed": seed}, sw["elapsed"],
                       {"hits": hits, "witnessed": witnessed, "cover_fraction": lc.fraction})


BUILDERS = {"example1": build_example1, "example2": build_example2, "example3": build_example3,
            "example4": build_example4}


# ---------------------------------------------------------------- robustness

def separation_cylinders(inst: ExampleInstance, count: int = 3, radius: float | None = None,
                         seed: int = 0) -> list:
    """Vertical cylinders around segments in U1^c longer than delta0."""
    from .transitivity import CylinderSpec

    rng = np.random.default_rng(seed)
    res = inst.U1.res
    radius = 2.0 / res if radius is None else radius
    length = min(0.9, 1.5 * inst.constants["delta0"])
    fat = inst.U1.dilate(int(math.ceil(radius * res)) + 1)
    out, tries = [], 0
    while len(out) < count and tries < 5000:
        tries += 1
        x0, y0 = rng.random(2)
        seg = np.stack([np.full(64, x0), y0 + np.linspace(0, length, 64)], axis=1)
        if fat.contains_points(project(seg)).any():
            continue
        out.append(CylinderSpec(ArcPolyline.from_array(seg), radius))
    if len(out) < count:
        raise BuildError("no room for separation cylinders outside U1")
    return out


def robustness_sweep(inst: ExampleInstance, n: int = 20, norm: float = 1e-3, seed: int = 0,
                     claim_kw: dict | None = None, cover_depth: int = 6, cylinders: int = 3) -> Certificate:
    """Re-run every claim and separation check on ``n`` random maps C^1-close to the instance.

    Passes when every verdict matches the unperturbed one.
    """
    from dataclasses import replace

    from .maps import random_perturbation
    from .transitivity import separation_check

    claim_kw = claim_kw or {}
    rng = np.random.default_rng(seed)
    cyls = separation_cylinders(inst, cylinders, seed=seed) if inst.U1 is not None else []

    def verdicts(I):
        v = {c.check_name: c.verdict for c in I.verify(**claim_kw)}
        if cyls:
            lc = compute_lambda_cover(I.mapspec, I.U1, cover_depth)
            for i, cyl in enumerate(cyls):
                v[f"separation_{i}"] = separation_check(lc, cyl).verdict
        return v

    with stopwatch() as sw:
        base = verdicts(inst)
        changed = []
        for k in range(n):
            g = random_perturbation(inst.mapspec, norm, rng)
            v = verdicts(replace(inst, map=g))
            diff = {name: (base[name], v.get(name)) for name in base if v.get(name) != base[name]}
            if diff:
                changed.append({"perturbation": k, "changed": diff})
    ok = not changed
    return Certificate("robustness", verdict_from(ok), 1.0 - len(changed) / n if ok else -len(changed) / n, n,
                       {"n": n, "norm": norm, "seed": seed, "cover_depth": cover_depth}, sw["elapsed"],
                       {"base": base, "changed": changed})
