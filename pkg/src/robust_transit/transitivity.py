"""Transitivity evidence, the internal-radius-growth pipeline and cylinder separation."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .certificate import FAIL, INCONCLUSIVE, PASS, Certificate, stopwatch, verdict_from
from .geometry import ArcPolyline, BoxRegion, project, torus_dist
from .maps import MapSpec
from .regions import (GridCover, LambdaCover, _refine_pts, arc_witness, index_ranges, verify_orbit)

NODE_CAP = 10 ** 8


class TransitivityError(ValueError):
    pass


# ---------------------------------------------------------------- transition graph

@dataclass(frozen=True, eq=False)
class TransitionGraph:
    res: int
    dim: int
    adjacency: csr_matrix

    @property
    def n_cells(self) -> int:
        return self.adjacency.shape[0]

    def cell_index(self, cell) -> int:
        return int(np.ravel_multi_index(tuple(np.mod(np.asarray(cell), self.res)), (self.res,) * self.dim))

    def cell_of_point(self, x) -> int:
        c = np.minimum((project(x) * self.res).astype(int), self.res - 1)
        return self.cell_index(c)

    def successors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def has_path(self, i: int, j: int) -> bool:
        order = breadth_first_order(self.adjacency, i, directed=True, return_predecessors=False)
        return bool(np.isin(j, order))

    def write_csv(self, path) -> None:
        coo = self.adjacency.tocoo()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["source", "target"])
            for a, b in sorted(zip(coo.row.tolist(), coo.col.tolist())):
                w.writerow([a, b])


def build_transition_graph(fmap: MapSpec, res: int) -> TransitionGraph:
    """Cell graph with an edge c -> c' whenever the image enclosure of c meets c'."""
    if res < 2:
        raise TransitivityError("resolution must be at least 2")
    n = fmap.dim
    cells = np.argwhere(np.ones((res,) * n, bool))
    lo = cells / res
    elo, ehi = fmap.enclose(lo, lo + 1.0 / res)
    start, stop = index_ranges(elo, ehi, res)
    width = np.minimum(stop - start, res)
    rows, cols = [], []
    src = np.arange(len(cells))
    for off in itertools.product(*[range(int(w)) for w in width.max(axis=0)]):
        ok = np.all(np.asarray(off) < width, axis=1)
        tgt = np.mod(start[ok] + np.asarray(off), res)
        rows.append(src[ok])
        cols.append(np.ravel_multi_index(tuple(tgt.T), (res,) * n))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    A = csr_matrix((np.ones(len(r), np.int8), (r, c)), shape=(len(cells),) * 2)
    A.sum_duplicates()
    return TransitionGraph(res, n, A)


def strongly_connected(graph: TransitionGraph) -> Certificate:
    """Strong connectivity of the cell graph: evidence of transitivity, not proof."""
    with stopwatch() as sw:
        ncomp, labels = connected_components(graph.adjacency, directed=True, connection="strong")
        outdeg = graph.out_degrees()
    ok = ncomp == 1 and outdeg.min() >= 1
    margin = 1.0 / graph.n_cells if ok else -float(ncomp - 1 or 1)
    sizes = np.bincount(labels)
    return Certificate("strongly_connected", verdict_from(ok), margin, graph.res, {},
                       sw["elapsed"], {"components": int(ncomp), "largest": int(sizes.max()),
                                       "min_out_degree": int(outdeg.min()), "edges": int(graph.adjacency.nnz)},
                       note="evidence of transitivity only")


# ---------------------------------------------------------------- pre-orbit density

def preorbit_density(fmap: MapSpec, x, depth: int, eps: float) -> Certificate:
    """Whether the preimages of ``x`` up to ``depth`` meet every grid cube of side <= eps."""
    if not eps > 0:
        raise TransitivityError("eps must be positive")
    res = int(math.ceil(1.0 / eps - 1e-12))
    seen = np.zeros((res,) * fmap.dim, bool)
    level = project(np.atleast_2d(np.asarray(getattr(x, "coords", x), float)))
    total = 1
    n0 = None
    with stopwatch() as sw:
        for k in range(depth + 1):
            idx = np.minimum((level * res).astype(int), res - 1)
            seen[tuple(idx.T)] = True
            if seen.all():
                n0 = k
                break
            if k == depth:
                break
            if total + len(level) * fmap.degree > NODE_CAP:
                return Certificate("preorbit_density", INCONCLUSIVE, 0.0, res,
                                   {"depth": depth, "eps": eps}, sw["elapsed"],
                                   {"reason": f"node cap {NODE_CAP} reached at depth {k}", "nodes": total})
            level = fmap.preimage_batch(level).reshape(-1, fmap.dim)
            total += len(level)
    ok = n0 is not None
    frac = float(seen.mean())
    return Certificate("preorbit_density", verdict_from(ok), eps if ok else frac - 1.0, res,
                       {"depth": depth, "eps": eps}, sw["elapsed"],
                       {"n0": n0, "nodes": total, "covered_fraction": frac})


# ---------------------------------------------------------------- IRG pipeline

def slab_m(dim: int, slack: int = 0) -> int:
    """Least integer strictly above 2*sqrt(n), plus optional slack."""
    return int(math.floor(2.0 * math.sqrt(dim))) + 1 + slack


def ball_growth_steps(lam: float, R: float, eps: float) -> int:
    """Least N with lam**-N * R < eps / 2."""
    if not lam > 1:
        raise TransitivityError("growth rate must exceed 1")
    N = 0
    while lam ** (-N) * R >= eps / 2:
        N += 1
    return N


def lifted_boundary(V: BoxRegion, max_seg: float) -> np.ndarray:
    if V.dim == 2:
        return V.boundary_polyline(max_seg).as_array()
    # in other dimensions the main diagonal stands in for the boundary
    return _refine_pts(np.array([V.lo, V.hi], float), max_seg)


def diameter_growth(fmap: MapSpec, V: BoxRegion, m: float, max_steps: int = 64,
                    max_seg: float = 1e-2) -> tuple[int | None, np.ndarray, list[float]]:
    """Iterate the lifted boundary until its diameter exceeds ``m``."""
    pts = lifted_boundary(V, min(max_seg, float(V.sides.min()) / 4 or max_seg))
    diams = [float((pts.max(axis=0) - pts.min(axis=0)).max())]
    for k in range(1, max_steps + 1):
        pts = _refine_pts(fmap.eval_lift(pts), max_seg)
        diams.append(float((pts.max(axis=0) - pts.min(axis=0)).max()))
        if diams[-1] > m:
            return k, pts, diams
    return None, pts, diams


def slab_bounds(U: GridCover) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis open interval (k-, k+) of the framed lifted projections of U."""
    f = U.framed_cells()
    return f.min(axis=0) / U.res, (f.max(axis=0) + 1) / U.res


def slab_crossing(pts: np.ndarray, k_minus: np.ndarray, k_plus: np.ndarray):
    """First sub-arc whose i-th coordinate runs from k+_i + j to k-_i + j + 1 (or back).

    Returns ``(sub_arc, i, j)`` or ``None``.  Ties at the same cut index go to
    the lowest coordinate.
    """
    best = None
    for i in range(pts.shape[1]):
        a, b = k_plus[i], k_minus[i] + 1.0
        t = pts[:, i]
        # slab index of each vertex: j with a + j <= t <= b + j
        j_lo = np.floor(t - a)
        inside = (t - j_lo) <= b
        hit = None
        state = None  # (j, entered_from, index)
        for s in range(len(t)):
            if inside[s]:
                if state is None or state[0] != j_lo[s]:
                    # entered a slab: from which side?
                    if s > 0:
                        side = "lo" if t[s - 1] < a + j_lo[s] else ("hi" if t[s - 1] > b + j_lo[s] else None)
                    else:
                        side = None
                    state = (j_lo[s], side, s)
            else:
                if state is not None and state[1] is not None:
                    j, side = state[0], state[1]
                    exit_side = "hi" if t[s] > b + j else ("lo" if t[s] < a + j else None)
                    if exit_side is not None and exit_side != side:
                        hit = (s, state[2] - 1, j)
                        break
                state = None
        if hit is not None and (best is None or hit[0] < best[0]):
            best = (hit[0], hit[1], hit[2], i)
    if best is None:
        return None
    end, begin, j, i = best
    sub = pts[begin:end + 1].copy()
    a, b = k_plus[i] + j, k_minus[i] + j + 1.0
    # clip the end segments to the hyperplanes
    for idx, nb in ((0, 1), (-1, -2)):
        p, q = sub[idx], sub[nb]
        target = a if (p[i] < a) else b if p[i] > b else None
        if target is not None and q[i] != p[i]:
            s = (target - q[i]) / (p[i] - q[i])
            sub[idx] = q + s * (p - q)
    return sub, i, int(j)


@dataclass
class IRGReport:
    V: BoxRegion
    m: int
    m0: int | None = None
    arc: np.ndarray | None = None
    slab: tuple[int, int] | None = None
    witness: np.ndarray | None = None
    N: int | None = None
    R: float | None = None
    stages: list = field(default_factory=list)
    failed_stage: str | None = None

    @property
    def completed(self) -> bool:
        return self.failed_stage is None and len(self.stages) == 5

    def to_json(self) -> dict:
        return {"V": {"lo": list(self.V.lo), "hi": list(self.V.hi)}, "m": self.m, "m0": self.m0,
                "slab": list(self.slab) if self.slab else None,
                "witness": None if self.witness is None else self.witness[0].tolist(),
                "N": self.N, "R": self.R, "stages": self.stages, "failed_stage": self.failed_stage,
                "completed": self.completed,
                "conventions": {"metric": "max", "m": "least integer above 2 sqrt(n) plus slack",
                                "R0": "reported as the R of the ball-growth stage"}}


def expansion_hole(fmap: MapSpec, lam_prime: float, res: int) -> GridCover:
    """Cells where the sampled minimum norm drops to ``lam_prime`` or below, dilated once."""
    cells = np.argwhere(np.ones((res,) * fmap.dim, bool))
    offs = [np.asarray(c, float) for c in itertools.product((0.0, 0.5, 1.0), repeat=fmap.dim)]
    worst = np.full(len(cells), np.inf)
    for o in offs:
        _, mn = fmap.det_and_min_norm((cells + o) / res)
        worst = np.minimum(worst, mn)
    m = np.zeros((res,) * fmap.dim, bool)
    m[tuple(cells[worst <= lam_prime].T)] = True
    return GridCover(res, m).dilate(1) if m.any() else GridCover(res, m)


def cover_gap(inner: GridCover, outer: GridCover) -> float:
    """Max-metric distance from ``inner`` to the complement of ``outer`` (cell units)."""
    if inner.is_empty():
        return 0.5
    comp = outer.complement()
    if comp.is_empty():
        return 0.5
    a = inner.cells
    b = comp.cells
    res = inner.res
    best = np.inf
    for s in range(0, len(a), 2000):
        d = np.abs(((b[None, :, :] - a[s:s + 2000, None, :]) + res // 2) % res - res // 2)
        best = min(best, float(np.maximum(0, d - 1).max(axis=-1).min()))
    return best / res


def irg_pipeline(fmap: MapSpec, V: BoxRegion, U0: GridCover, U1: GridCover, U2: GridCover,
                 delta0: float, lam_prime: float, eps: float = 0.01, witness_steps: int = 50,
                 m_slack: int = 0, max_steps: int = 64) -> IRGReport:
    n = fmap.dim
    m = slab_m(n, m_slack)
    rep = IRGReport(V, m)

    def fail(stage, **diag):
        rep.stages.append({"stage": stage, "ok": False, **diag})
        rep.failed_stage = stage
        return rep

    # (a) diameter growth
    m0, pts, diams = diameter_growth(fmap, V, m, max_steps)
    if m0 is None:
        return fail("diameter_growth", diameters=diams[-5:])
    rep.m0 = m0
    rep.stages.append({"stage": "diameter_growth", "ok": True, "m0": m0, "diameter": diams[-1]})
    # (b) slab crossing
    km, kp = slab_bounds(U2)
    hit = slab_crossing(pts, km, kp)
    if hit is None:
        return fail("slab_crossing", k_minus=km.tolist(), k_plus=kp.tolist())
    sub, i, j = hit
    rep.slab = (i, j)
    rep.stages.append({"stage": "slab_crossing", "ok": True, "coordinate": i, "sheet": j, "vertices": len(sub)})
    # (c) projected arc in U2^c with diameter > delta0
    fine = _refine_pts(sub, U2.cell_width / 4)
    d = float((fine.max(axis=0) - fine.min(axis=0)).max())
    clear = not U2.contains_points(fine[1:-1]).any()
    rep.arc = project(sub)
    if not (d > delta0 and clear):
        return fail("projected_arc", diameter=d, delta0=delta0, in_U2c=clear)
    rep.stages.append({"stage": "projected_arc", "ok": True, "diameter": d})
    # (d) a point of the arc whose orbit avoids U1
    w = arc_witness(fmap, sub, U1, witness_steps)
    if w is None or not verify_orbit(fmap, w[0], U1):
        return fail("lambda_intersection", steps=witness_steps)
    rep.witness = w[0]
    rep.stages.append({"stage": "lambda_intersection", "ok": True, "steps": witness_steps, "arc_distance": w[1]})
    # (e) ball growth on the complement of U3
    U3 = expansion_hole(fmap, lam_prime, U0.res)
    if not U3.issubset(U0):
        return fail("ball_growth", reason="expansion hole not inside U0")
    R = cover_gap(U3, U0)
    if not R > 0:
        return fail("ball_growth", reason="U3 touches the boundary of U0")
    rep.R = R
    rep.N = ball_growth_steps(lam_prime, R, eps)
    rep.stages.append({"stage": "ball_growth", "ok": True, "R": R, "N": rep.N, "lambda_prime": lam_prime})
    return rep


# ---------------------------------------------------------------- cylinders

@dataclass(frozen=True, eq=False)
class CylinderSpec:
    """Tube of half-width ``radius`` around a lifted planar polyline."""

    arc: ArcPolyline
    radius: float

    def __post_init__(self):
        if self.arc.dim != 2:
            raise TransitivityError("cylinders are implemented for planar arcs")
        if not self.radius > 0:
            raise TransitivityError("cylinder radius must be positive")

    @property
    def length(self) -> float:
        p = self.arc.as_array()
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())

    @property
    def arc_diameter(self) -> float:
        p = self.arc.as_array()
        return float((p.max(axis=0) - p.min(axis=0)).max())

    def rasterize(self, res: int, margin: float = 0.0):
        """Local raster: (cell centres, inside, top, bottom) over the bounding box."""
        p = self.arc.as_array()
        r = self.radius
        lo = np.floor((p.min(axis=0) - r) * res) - 1
        hi = np.ceil((p.max(axis=0) + r) * res) + 1
        gx = np.arange(lo[0], hi[0])
        gy = np.arange(lo[1], hi[1])
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        centers = (np.stack([X, Y], axis=-1) + 0.5) / res
        seg = np.diff(p, axis=0)
        seglen = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seglen)])
        best_perp = np.full(X.shape, np.inf)
        best_t = np.zeros(X.shape)
        for a, v, L, c0 in zip(p[:-1], seg, seglen, cum[:-1]):
            u = v / L
            rel = centers - a
            s = rel @ u
            perp = np.abs(rel @ np.array([-u[1], u[0]]))
            sc = np.clip(s, 0, L)
            dist = np.where((s >= 0) & (s <= L), perp, np.hypot(perp, s - sc))
            better = dist < best_perp
            best_perp = np.where(better, dist, best_perp)
            best_t = np.where(better, c0 + s, best_t)
        total = cum[-1]
        h = 1.0 / res
        inside = (best_perp <= r - margin) & (best_t >= -h / 2) & (best_t <= total + h / 2)
        bottom = inside & (best_t <= h)
        top = inside & (best_t >= total - h)
        return centers, inside, top, bottom


def separation_check(lambda_cover, cyl: CylinderSpec, margin: float = 0.0) -> Certificate:
    """Whether the cover cells disconnect the cylinder's top slice from its bottom slice."""
    cover: GridCover = getattr(lambda_cover, "cover", lambda_cover)
    res = cover.res
    if 2 * cyl.radius * res < 3:
        return Certificate("separation", INCONCLUSIVE, 0.0, res, {"radius": cyl.radius},
                           0.0, {"reason": "cylinder narrower than 3 cells"})
    with stopwatch() as sw:
        centers, inside, top, bottom = cyl.rasterize(res, margin)
        blocked = cover.contains_points(centers.reshape(-1, 2)).reshape(inside.shape)
        free = inside & ~blocked
        lab, _ = ndimage.label(free)
        joined = np.intersect1d(np.unique(lab[top & free]), np.unique(lab[bottom & free]))
        joined = joined[joined > 0]
    ok = len(joined) == 0
    margin_v = 1.0 / res if ok else -float(len(joined))
    return Certificate("separation", verdict_from(ok), margin_v, res,
                       {"radius": cyl.radius, "margin": margin}, sw["elapsed"],
                       {"free_cells": int(free.sum()), "cylinder_cells": int(inside.sum()),
                        "connecting_components": int(len(joined)),
                        "convention": "Euclidean normals to the arc, max-metric diameters"})
