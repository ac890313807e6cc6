"""Grid covers of torus regions, outer approximations of the sets of points
whose forward orbits avoid a region, and the hypothesis checkers built on them.

Conventions: a region ``U`` is open and is represented by the closed cells
whose interior meets it; complements are closed.  Covers of
``Lambda_k = {x : f^j(x) not in U, 0 <= j <= k}`` are therefore outer
approximations.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .certificate import FAIL, INCONCLUSIVE, PASS, Certificate, stopwatch, verdict_from
from .geometry import ArcPolyline, BoxRegion, GeometryError, project
from .maps import MapSpec, grid_points

EDGE_EPS = 1e-9


class RegionError(ValueError):
    pass


# ---------------------------------------------------------------- grid covers

@dataclass(frozen=True, eq=False)
class GridCover:
    res: int
    mask: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.mask, dtype=bool)
        if m.ndim < 1 or any(s != self.res for s in m.shape):
            raise RegionError(f"mask shape {m.shape} does not match resolution {self.res}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    # -- constructors

    @classmethod
    def empty(cls, res: int, dim: int) -> "GridCover":
        return cls(res, np.zeros((res,) * dim, bool))

    @classmethod
    def full(cls, res: int, dim: int) -> "GridCover":
        return cls(res, np.ones((res,) * dim, bool))

    @classmethod
    def from_cells(cls, res: int, dim: int, cells) -> "GridCover":
        m = np.zeros((res,) * dim, bool)
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, dim)
        if len(cells):
            m[tuple(np.mod(cells, res).T)] = True
        return cls(res, m)

    @classmethod
    def from_boxes(cls, boxes, res: int, dim: int | None = None) -> "GridCover":
        """Cells whose interior meets one of the open boxes (lo, hi)."""
        boxes = [boxes] if isinstance(boxes, BoxRegion) else list(boxes)
        if dim is None:
            if not boxes:
                raise RegionError("dimension needed for an empty box list")
            dim = boxes[0].dim
        m = np.zeros((res,) * dim, bool)
        for b in boxes:
            ranges = []
            for lo, hi in zip(b.lo, b.hi):
                start = math.floor(lo * res + EDGE_EPS)
                stop = math.ceil(hi * res - EDGE_EPS)
                if stop <= start:
                    ranges = None
                    break
                ranges.append(np.arange(start, stop) % res if stop - start < res else np.arange(res))
            if ranges is None:
                continue
            m[np.ix_(*ranges)] = True
        return cls(res, m)

    @classmethod
    def ball(cls, center, radius: float, res: int) -> "GridCover":
        c = np.asarray(center, float)
        return cls.from_boxes([BoxRegion(tuple(c - radius), tuple(c + radius), fundamental=False)], res)

    # -- basic queries

    @property
    def dim(self) -> int:
        return self.mask.ndim

    @property
    def cells(self) -> np.ndarray:
        return np.argwhere(self.mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def fraction(self) -> float:
        return self.count / self.mask.size

    @property
    def cell_width(self) -> float:
        return 1.0 / self.res

    def is_empty(self) -> bool:
        return not self.mask.any()

    def complement(self) -> "GridCover":
        return GridCover(self.res, ~self.mask)

    def union(self, other: "GridCover") -> "GridCover":
        self._compatible(other)
        return GridCover(self.res, self.mask | other.mask)

    def intersection(self, other: "GridCover") -> "GridCover":
        self._compatible(other)
        return GridCover(self.res, self.mask & other.mask)

    def issubset(self, other: "GridCover") -> bool:
        self._compatible(other)
        return not np.any(self.mask & ~other.mask)

    def _compatible(self, other):
        if other.res != self.res or other.dim != self.dim:
            raise RegionError("covers have different grids")

    def dilate(self, cells: int = 1) -> "GridCover":
        """Max-metric dilation by ``cells`` grid cells (wrapping)."""
        m = self.mask.copy()
        src = self.mask
        for shift in itertools.product(range(-cells, cells + 1), repeat=self.dim):
            m |= np.roll(src, shift, axis=tuple(range(self.dim)))
        return GridCover(self.res, m)

    def cell_of(self, x) -> np.ndarray:
        return np.minimum((project(x) * self.res).astype(np.int64), self.res - 1)

    def contains_points(self, x) -> np.ndarray:
        idx = self.cell_of(x)
        return self.mask[tuple(np.moveaxis(idx, -1, 0))]

    def cell_boxes(self, cells=None) -> tuple[np.ndarray, np.ndarray]:
        c = self.cells if cells is None else np.asarray(cells)
        lo = c / self.res
        return lo, lo + 1.0 / self.res

    def refine(self, factor: int) -> "GridCover":
        m = self.mask
        for ax in range(self.dim):
            m = np.repeat(m, factor, axis=ax)
        return GridCover(self.res * factor, m)

    # -- geometry in the best frame

    def frame_shift(self) -> np.ndarray:
        """Per-axis index shift that makes the occupied projections contiguous-minimal."""
        if self.is_empty():
            raise RegionError("empty cover has no frame")
        shifts = []
        for ax in range(self.dim):
            occ = np.flatnonzero(self.mask.any(axis=tuple(a for a in range(self.dim) if a != ax)))
            if len(occ) == self.res:
                shifts.append(0)
                continue
            gaps = np.diff(np.concatenate([occ, [occ[0] + self.res]])) - 1
            g = int(np.argmax(gaps))
            shifts.append(int(occ[(g + 1) % len(occ)]))
        return np.asarray(shifts)

    def framed_cells(self) -> np.ndarray:
        """Cell indices unwrapped so that the region sits inside one fundamental domain."""
        return np.mod(self.cells - self.frame_shift(), self.res) + self.frame_shift()

    def diameter(self) -> float:
        f = self.framed_cells()
        return float((f.max(axis=0) - f.min(axis=0) + 1).max()) / self.res

    def to_boxes(self) -> list[BoxRegion]:
        f = self.framed_cells()
        return [BoxRegion(tuple(c / self.res), tuple((c + 1) / self.res), fundamental=False) for c in f]

    def internal_diameter(self) -> float:
        """min over k in {-1,0,1}^n \\ {0} of the max-metric distance from U to U + k."""
        d = self.diameter()
        if d >= 1.0:
            raise GeometryError(f"diam(U) = {d:.6g} >= 1: internal diameter undefined")
        f = self.framed_cells()
        # only cells on the hull of each projection matter for the minimum
        best = math.inf
        chunk = max(1, 2_000_000 // max(1, len(f)))
        for k in itertools.product((-1, 0, 1), repeat=self.dim):
            if not any(k):
                continue
            kk = np.asarray(k) * self.res
            for s in range(0, len(f), chunk):
                delta = f[None, :, :] + kk - f[s:s + chunk, None, :]
                gap = np.maximum(0, np.abs(delta) - 1).max(axis=-1)
                best = min(best, float(gap.min()) / self.res)
        return best

    def components(self) -> tuple[np.ndarray, int]:
        """Face-adjacent connected components on the torus."""
        from scipy import ndimage

        lab, n = ndimage.label(self.mask)
        # merge labels across the periodic boundary
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for ax in range(self.dim):
            a = np.take(lab, 0, axis=ax)
            b = np.take(lab, -1, axis=ax)
            for u, v in zip(a.ravel(), b.ravel()):
                if u and v:
                    ru, rv = find(u), find(v)
                    if ru != rv:
                        parent[ru] = rv
        roots = np.array([find(i) for i in range(n + 1)])
        uniq, relabel = np.unique(roots, return_inverse=True)
        out = relabel[lab]
        # label 0 stays background since roots[0] == 0 is the smallest root
        return out, len(uniq) - 1

    def component_diameters(self) -> list[float]:
        lab, n = self.components()
        if n == 0:
            return []
        flat = lab.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(1, n + 2))
        idx = np.stack(np.unravel_index(order, lab.shape), axis=1)
        out = []
        for a, b in zip(bounds[:-1], bounds[1:]):
            cells = idx[a:b]
            out.append(max(_circular_extent(cells[:, ax], self.res) for ax in range(self.dim)) / self.res)
        return out

    # -- serialisation

    def to_json(self) -> dict:
        return {"res": self.res, "dim": self.dim, "cells": self.cells.tolist()}

    @classmethod
    def from_json(cls, d: dict, res: int | None = None, dim: int | None = None) -> "GridCover":
        if "cells" in d:
            r = int(d["res"])
            cells = d["cells"]
            n = int(d.get("dim") or (len(cells[0]) if cells else dim or 1))
            return cls.from_cells(r, n, cells)
        if "boxes" in d:
            r = int(d.get("res") or res or 64)
            boxes = [BoxRegion(tuple(b["lo"]), tuple(b["hi"]), fundamental=False) for b in d["boxes"]]
            return cls.from_boxes(boxes, r, dim or (boxes[0].dim if boxes else None))
        raise RegionError("region JSON needs 'cells' or 'boxes'")


def _circular_extent(idx: np.ndarray, res: int) -> int:
    """Length of the shortest circular arc of cells containing all of ``idx``."""
    u = np.unique(idx)
    if len(u) == res:
        return res
    gaps = np.diff(np.concatenate([u, [u[0] + res]])) - 1
    return res - int(gaps.max())


# ---------------------------------------------------------------- box queries

def index_ranges(lo: np.ndarray, hi: np.ndarray, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell index ranges [start, stop) whose interiors meet the boxes [lo, hi]."""
    start = np.floor(lo * res + EDGE_EPS).astype(np.int64)
    stop = np.ceil(hi * res - EDGE_EPS).astype(np.int64)
    stop = np.maximum(stop, start + 1)
    return start, stop


def _prefix(mask: np.ndarray) -> np.ndarray:
    P = np.zeros(tuple(s + 1 for s in mask.shape), np.int64)
    inner = mask.astype(np.int64)
    for ax in range(mask.ndim):
        inner = np.cumsum(inner, axis=ax)
    P[tuple(slice(1, None) for _ in mask.shape)] = inner
    return P


def box_counts(mask: np.ndarray, start: np.ndarray, stop: np.ndarray) -> np.ndarray:
    """Number of marked cells in each periodic index box [start, stop)."""
    res = mask.shape[0]
    n = mask.ndim
    P = _prefix(mask)
    full = (stop - start) >= res
    s = np.where(full, 0, np.mod(start, res))
    e = np.where(full, res, s + (stop - start))
    # each axis splits into [s, min(e, res)) and [0, max(e - res, 0))
    pieces = [((s[:, ax], np.minimum(e[:, ax], res)), (np.zeros_like(s[:, ax]), np.maximum(e[:, ax] - res, 0)))
              for ax in range(n)]
    total = np.zeros(len(start), np.int64)
    for choice in itertools.product((0, 1), repeat=n):
        a = [pieces[ax][choice[ax]][0] for ax in range(n)]
        b = [pieces[ax][choice[ax]][1] for ax in range(n)]
        valid = np.all([bb > aa for aa, bb in zip(a, b)], axis=0)
        sub = np.zeros(len(start), np.int64)
        for corner in itertools.product((0, 1), repeat=n):
            idx = tuple(np.where(valid, b[ax] if corner[ax] else a[ax], 0) for ax in range(n))
            sign = (-1) ** (n - sum(corner))
            sub += sign * P[idx]
        total += np.where(valid, sub, 0)
    return total


def paint_boxes(res: int, dim: int, start: np.ndarray, stop: np.ndarray) -> np.ndarray:
    """Mask of all cells met by the index boxes (periodic)."""
    m = np.zeros((res,) * dim, bool)
    width = np.minimum(stop - start, res)
    wmax = width.max(axis=0) if len(width) else np.zeros(dim, int)
    for off in itertools.product(*[range(int(w)) for w in wmax]):
        off = np.asarray(off)
        ok = np.all(off < width, axis=1)
        if ok.any():
            idx = np.mod(start[ok] + off, res)
            m[tuple(idx.T)] = True
    return m


# ---------------------------------------------------------------- lambda covers

@dataclass(frozen=True, eq=False)
class LambdaCover:
    depth: int
    cover: GridCover
    map_id: str = ""
    region_id: str = ""
    counts: tuple[int, ...] = ()
    coarse_cells: int = 0
    saturated_at: int | None = None

    @property
    def fraction(self) -> float:
        return self.cover.fraction


def cell_enclosures(fmap: MapSpec, cover: GridCover, cells=None):
    lo, hi = cover.cell_boxes(cells)
    return fmap.enclose(lo, hi)


def compute_lambda_cover(fmap: MapSpec, U: GridCover, depth: int, region_id: str = "U",
                         keep_levels: bool = False):
    """Outer cover of the points whose first ``depth`` iterates avoid ``U``.

    ``C_0`` is the complement of ``U`` and ``C_{k+1}`` keeps the cells of
    ``C_k`` whose image enclosure meets the interior of a cell of ``C_k``.
    Iteration stops early once the cover is a fixed point.
    """
    if depth < 0:
        raise RegionError("depth must be nonnegative")
    res, dim = U.res, U.dim
    mask = ~U.mask
    # later levels are subsets of C_0, so only its cells need enclosures
    allcells = np.argwhere(mask)
    elo, ehi = cell_enclosures(fmap, U, allcells)
    start, stop = index_ranges(elo, ehi, res)
    coarse = int(np.sum(np.any((stop - start) >= res // 2, axis=1)))
    counts = [int(mask.sum())]
    levels = [mask] if keep_levels else None
    saturated = None
    flat_index = np.ravel_multi_index(tuple(allcells.T), (res,) * dim)
    for k in range(1, depth + 1):
        hit = box_counts(mask, start, stop) > 0
        new = mask.copy().ravel()
        new[flat_index] &= hit
        new = new.reshape(mask.shape)
        if np.array_equal(new, mask):
            saturated = k - 1
            mask = new
            counts.extend([counts[-1]] * (depth - k + 1))
            if keep_levels:
                levels.extend([mask] * (depth - k + 1))
            break
        mask = new
        counts.append(int(mask.sum()))
        if keep_levels:
            levels.append(mask)
    lc = LambdaCover(depth, GridCover(res, mask), fmap.name, region_id, tuple(counts), coarse, saturated)
    if keep_levels:
        return lc, [GridCover(res, m) for m in levels]
    return lc


def image_cover(fmap: MapSpec, cover: GridCover) -> GridCover:
    """Cells met by the image enclosures of the cells of ``cover``."""
    cells = cover.cells
    if len(cells) == 0:
        return GridCover.empty(cover.res, cover.dim)
    elo, ehi = cell_enclosures(fmap, cover, cells)
    start, stop = index_ranges(elo, ehi, cover.res)
    return GridCover(cover.res, paint_boxes(cover.res, cover.dim, start, stop))


# ---------------------------------------------------------------- H0: volume

def _grid_inflation(fmap: MapSpec, step: float, power: int = 1) -> float:
    n = fmap.dim
    dist = math.sqrt(n) * step / 2.0
    H = fmap.hessian_bound()
    if power == 1:
        return H * dist
    jmax = float(np.abs(fmap.A).sum(axis=1).max()) + H
    return n * jmax ** (n - 1) * H * dist


def check_volume_expanding(fmap: MapSpec, grid_step: float, sigma: float, rigor: bool = False) -> Certificate:
    if not sigma > 1:
        raise RegionError("sigma must exceed 1")
    with stopwatch() as sw:
        x = grid_points(fmap.dim, grid_step) + grid_step / 2
        det, _ = fmap.det_and_min_norm(x)
        gap = float(np.abs(det).min() - sigma)
        infl = _grid_inflation(fmap, grid_step, power=fmap.dim) if rigor else 0.0
    verdict = verdict_from(gap > infl)
    return Certificate("volume_expanding", verdict, gap, grid_step,
                       {"sigma": sigma, "rigor": rigor, "inflation": infl},
                       sw["elapsed"], {"min_abs_det": gap + sigma})


# ---------------------------------------------------------------- H1

def _cell_samples(cover: GridCover, cells: np.ndarray) -> np.ndarray:
    h = cover.cell_width
    lo = cells / cover.res
    offs = [np.asarray(c, float) for c in itertools.product((0.0, 1.0), repeat=cover.dim)]
    offs.append(np.full(cover.dim, 0.5))
    return np.concatenate([lo + o * h for o in offs])


def check_expanding_on(fmap: MapSpec, U0: GridCover | None, lam: float, res: int = 64,
                       rigor: bool = False) -> Certificate:
    """Minimum norm of Df on the complement of ``U0`` against ``lam``; also diam(U0) < 1."""
    if not lam > 1:
        raise RegionError("lambda must exceed 1")
    with stopwatch() as sw:
        region = GridCover.full(res, fmap.dim) if U0 is None else U0.complement()
        if region.is_empty():
            raise RegionError("expanding region is empty")
        pts = _cell_samples(region, region.cells)
        _, mn = fmap.det_and_min_norm(pts)
        min_norm = float(mn.min())
        infl = _grid_inflation(fmap, region.cell_width) if rigor else 0.0
        gap = min_norm - lam
        details = {"min_norm": min_norm, "argmin": pts[int(np.argmin(mn))].tolist()}
        diam_ok = True
        if U0 is not None and not U0.is_empty():
            d = U0.diameter()
            details["diam_U0"] = d
            diam_ok = d < 1.0
            if diam_ok:
                details["diam_int_U0c"] = U0.internal_diameter()
    verdict = verdict_from(gap > infl and diam_ok)
    margin = gap if diam_ok else min(gap, 1.0 - details.get("diam_U0", 1.0))
    return Certificate("H1_expanding_off_U0", verdict, margin, region.res,
                       {"lambda": lam, "rigor": rigor, "inflation": infl}, sw["elapsed"], details)


# ---------------------------------------------------------------- H2

def random_arc_in(U0: GridCover, min_diam: float, rng: np.random.Generator, kind: str = "walk",
                  step: float = 0.01, max_tries: int = 2000) -> np.ndarray:
    """Random lifted polyline in the complement of U0 with max-metric diameter > min_diam."""
    dim = U0.dim
    for _ in range(max_tries):
        x0 = rng.random(dim)
        if U0.contains_points(x0):
            continue
        if kind in ("axis", "diagonal"):
            if kind == "axis":
                d = np.zeros(dim)
                d[rng.integers(dim)] = rng.choice([-1.0, 1.0])
            else:
                d = rng.choice([-1.0, 1.0], size=dim)
            L = min_diam * (1.0 + 0.25 * rng.random()) + 1e-6
            n = int(math.ceil(L / step))
            pts = x0 + np.linspace(0, L, n + 1)[:, None] * d
            if not U0.contains_points(pts).any():
                return pts
            continue
        pts = [x0]
        heading = rng.normal(size=dim)
        for _ in range(int(20 * min_diam / step) + 50):
            heading = heading + 0.6 * rng.normal(size=dim)
            heading /= np.abs(heading).max()
            nxt = pts[-1] + step * heading
            if U0.contains_points(nxt):
                heading = -heading
                continue
            pts.append(nxt)
            arr = np.asarray(pts)
            if (arr.max(axis=0) - arr.min(axis=0)).max() > min_diam:
                return arr
    raise RegionError("could not sample an arc in the complement of U0")


def _refine_pts(pts: np.ndarray, max_seg: float) -> np.ndarray:
    if len(pts) < 2:
        return pts
    seg = np.abs(np.diff(pts, axis=0)).max(axis=1)
    reps = np.maximum(1, np.ceil(seg / max_seg).astype(int))
    if reps.max() == 1:
        return pts
    seg_idx = np.repeat(np.arange(len(reps)), reps)
    # position of each inserted point within its segment, in (0, 1]
    within = np.arange(len(seg_idx)) - np.repeat(np.cumsum(reps) - reps, reps) + 1
    t = (within / reps[seg_idx])[:, None]
    body = pts[seg_idx] + t * (pts[seg_idx + 1] - pts[seg_idx])
    return np.concatenate([pts[:1], body])


def _runs(flags: np.ndarray):
    """Index ranges of maximal runs of True."""
    if not flags.any():
        return []
    d = np.diff(np.concatenate([[0], flags.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def push_arc(fmap: MapSpec, pts: np.ndarray, avoid: GridCover, horizon: int, max_seg: float = 2e-3,
             beam: int = 32, max_piece_diam: float = 0.5) -> dict:
    """Forward-iterate an arc, discarding the parts that enter ``avoid``.

    Returns the number of steps survived by at least one piece.  Image arcs are
    re-sampled by linear interpolation, so this is numerical evidence only.
    """
    pieces = [_refine_pts(np.asarray(pts, float), max_seg)]
    for step in range(1, horizon + 1):
        new = []
        for p in pieces:
            img = _refine_pts(fmap.eval_lift(p), max_seg)
            img = img - np.floor(img[0])
            ok = ~avoid.contains_points(img)
            for a, b in _runs(ok):
                run = img[a:b]
                span = (run.max(axis=0) - run.min(axis=0)).max()
                if span > max_piece_diam:
                    nchunk = int(math.ceil(span / max_piece_diam))
                    for c in np.array_split(run, nchunk):
                        if len(c):
                            new.append(c)
                else:
                    new.append(run)
        if not new:
            return {"survived": step - 1, "pieces": 0}
        new.sort(key=lambda r: -float((r.max(axis=0) - r.min(axis=0)).max()))
        pieces = new[:beam]
    return {"survived": horizon, "pieces": len(pieces)}


def default_U1(U0: GridCover) -> GridCover:
    return U0.dilate(1)


def default_delta0(U0: GridCover) -> float:
    comp = U0.component_diameters()
    return 0.5 * (U0.internal_diameter() + (max(comp) if comp else 0.0))


def check_H2_arc_property(fmap: MapSpec, U0: GridCover, U1: GridCover | None = None,
                          delta0: float | None = None, horizon: int = 100, samples: int = 50,
                          seed: int = 0, cover_depth: int = 12, arc_kinds=("walk", "axis", "diagonal"),
                          certify=None) -> Certificate:
    """Every arc in U0^c of diameter > delta0 has a point whose forward orbit avoids U1."""
    u1_choice = "one-cell dilation" if U1 is None else "given"
    U1 = default_U1(U0) if U1 is None else U1
    dint = U0.internal_diameter()
    delta0 = default_delta0(U0) if delta0 is None else delta0
    if not (0 < delta0 < dint):
        raise RegionError(f"need 0 < delta0 < diam_int(U0^c) = {dint:.6g}, got {delta0}")
    if horizon < 1:
        raise RegionError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    with stopwatch() as sw:
        lam1 = compute_lambda_cover(fmap, U1, cover_depth, "U1")
        failures, min_survived, cover_hits = [], horizon, 0
        for i in range(samples):
            kind = arc_kinds[i % len(arc_kinds)]
            arc = random_arc_in(U0, delta0, rng, kind)
            fine = _refine_pts(arc, lam1.cover.cell_width / 2)
            if lam1.cover.contains_points(fmap.eval(fine)).any():
                cover_hits += 1
            r = push_arc(fmap, arc, U1, horizon)
            min_survived = min(min_survived, r["survived"])
            if r["survived"] < horizon:
                failures.append({"arc": i, "kind": kind, "died_at": r["survived"] + 1,
                                 "start": arc[0].tolist()})
        sampled_ok = not failures
        cert_result = certify(fmap, U0, U1, delta0) if certify is not None else None
    details = {"sampled": {"arcs": samples, "failures": failures[:10], "n_failures": len(failures),
                           "min_steps_survived": min_survived, "cover_hits": cover_hits,
                           "cover_depth": cover_depth, "cover_fraction": lam1.fraction,
                           "label": "statistical evidence, not proof"},
               "diam_int_U0c": dint, "U1_choice": u1_choice}
    if cert_result is not None:
        details["certified"] = cert_result
    ok = sampled_ok and (cert_result is None or cert_result.get("ok", False))
    margin = (dint - delta0) if ok else -(len(failures) or 1) / samples
    return Certificate("H2_arc_property", verdict_from(ok), margin, U0.res,
                       {"delta0": delta0, "horizon": horizon, "samples": samples, "seed": seed},
                       sw["elapsed"], details)


def certify_interval_h2(fmap: MapSpec, U0: GridCover, U1: GridCover, delta0: float,
                        max_level: int = 12) -> dict:
    """Nested-interval certificate for circle maps.

    Builds good intervals G (cells of U1^c whose image enclosure contains a
    full good cell, iterated to a fixed point) and verifies that every
    interval of length > delta0 in U0^c contains a good cell.
    """
    if fmap.dim != 1:
        return {"ok": False, "reason": "certified mode needs a circle map"}
    res = U1.res
    good = ~U1.mask.copy()
    cells = np.arange(res)[:, None]
    lo, hi = cells / res, (cells + 1) / res
    elo, ehi = fmap.enclose(lo, hi)
    # inner image: cells certainly covered by f(cell) for monotone increasing branches
    vlo = fmap.eval_lift(lo)
    vhi = fmap.eval_lift(hi)
    inner_start = np.ceil(np.minimum(vlo, vhi)[:, 0] * res - EDGE_EPS).astype(int)
    inner_stop = np.floor(np.maximum(vlo, vhi)[:, 0] * res + EDGE_EPS).astype(int)
    d, _ = fmap.det_and_min_norm((lo + hi) / 2)
    sign_ok = np.all(fmap.jacobian_matrix(_refine_pts(np.array([[0.0], [1.0]]), 1 / (4 * res)))[..., 0, 0] > 0)
    if not sign_ok:
        return {"ok": False, "reason": "map is not orientation preserving"}
    for _ in range(max_level * res):
        covered = np.zeros(res, bool)
        for j in np.flatnonzero(good):
            s, e = inner_start[j], inner_stop[j]
            if e - s >= 1:
                idx = np.mod(np.arange(s, e), res)
                covered[j] = good[idx].any()
        new = good & covered
        if np.array_equal(new, good):
            break
        good = new
    if not good.any():
        return {"ok": False, "reason": "no self-covering good cells"}
    # longest run of U0^c cells free of good cells
    free = (~U0.mask) & (~good)
    best = 0
    run = 0
    for v in np.concatenate([free, free]):
        run = run + 1 if v else 0
        best = max(best, run)
    longest = min(best, res) / res
    # an interval of length > longest + 2/res inside U0^c must contain a good cell
    bound = longest + 2.0 / res
    return {"ok": bool(bound <= delta0), "good_cells": int(good.sum()), "gap_bound": bound}


# ---------------------------------------------------------------- H3

def _branch_boxes(fmap: MapSpec, centers: np.ndarray, half: float):
    """Preimages of each centre and per-branch radii covering the preimage of B_half(centre)."""
    pre = fmap.preimage_batch(centers)                       # (M, D, n)
    J = fmap.jacobian_matrix(pre.reshape(-1, fmap.dim))
    inv_norm = 1.0 / np.linalg.svd(J, compute_uv=False)[:, -1]
    r = (half * inv_norm * math.sqrt(fmap.dim) * 1.25).reshape(pre.shape[:2])
    return pre, r


def check_H3_surjectivity_off_U1(fmap: MapSpec, U1: GridCover, spot_checks: int = 5,
                                 path_length: int = 20, seed: int = 0) -> Certificate:
    """Every cell outside U1 has an inverse-branch image (outer box) outside U1."""
    with stopwatch() as sw:
        res = U1.res
        free = U1.complement()
        cells = free.cells
        if len(cells) == 0:
            return Certificate("H3_surjective_off_U1", PASS, 1.0, res, {}, sw["elapsed"],
                               {"note": "U1 covers the torus; hypothesis vacuous"})
        if U1.is_empty():
            return Certificate("H3_surjective_off_U1", PASS, 1.0, res, {}, 0.0,
                               {"note": "U1 empty: every branch admissible"})
        centers = (cells + 0.5) / res
        pre, r = _branch_boxes(fmap, centers, 0.5 / res)
        M, D, n = pre.shape
        flat = pre.reshape(-1, n)
        rr = r.reshape(-1, 1)
        s, e = index_ranges(flat - rr, flat + rr, res)
        free_branch = (box_counts(U1.mask, s, e) == 0).reshape(M, D)
        bad = cells[~free_branch.any(axis=1)].tolist()
        witness = []
        if not bad:
            rng = np.random.default_rng(seed)
            for idx in rng.choice(len(cells), size=min(spot_checks, len(cells)), replace=False):
                x = centers[idx]
                path = [x.tolist()]
                for _ in range(path_length):
                    pre = fmap.preimage_array(x)
                    inside = U1.contains_points(pre)
                    if inside.all():
                        break
                    x = pre[np.flatnonzero(~inside)[0]]
                    path.append(x.tolist())
                witness.append(path)
    ok = not bad
    margin = 1.0 / res if ok else -len(bad) / len(cells)
    return Certificate("H3_surjective_off_U1", verdict_from(ok), margin, res,
                       {"spot_checks": spot_checks, "path_length": path_length}, sw["elapsed"],
                       {"failing_cells": bad[:20], "n_failing": len(bad), "inverse_paths": witness})


# ---------------------------------------------------------------- witnesses

def arc_witness(fmap: MapSpec, arc: np.ndarray, avoid: GridCover, steps: int, max_seg: float = 2e-3,
                beam: int = 16, max_piece_diam: float = 0.25):
    """Point near ``arc`` whose orbit avoids ``avoid`` for ``steps`` steps.

    Surviving image pieces are pushed forward with re-sampling; a point of the
    last piece is then pulled back through the inverse branch nearest the
    recorded piece at each step.  Returns ``(orbit, distance_to_arc)`` where
    ``orbit[k+1] = f(orbit[k])`` to solver tolerance, or ``None``.
    """
    pts = _refine_pts(np.asarray(arc, float), max_seg)
    ok0 = ~avoid.contains_points(pts)
    chains = [[pts[a:b]] for a, b in _runs(ok0)]
    if not chains:
        return None
    for _ in range(steps):
        new = []
        for ch in chains:
            img = _refine_pts(fmap.eval_lift(ch[-1]), max_seg)
            img = img - np.floor(img[0])
            ok = ~avoid.contains_points(img)
            for a, b in _runs(ok):
                run = img[a:b]
                span = float((run.max(axis=0) - run.min(axis=0)).max())
                parts = np.array_split(run, int(math.ceil(span / max_piece_diam))) if span > max_piece_diam else [run]
                new.extend(ch + [p] for p in parts if len(p))
        if not new:
            return None
        new.sort(key=lambda c: -(len(c[-1]) + float((c[-1].max(axis=0) - c[-1].min(axis=0)).max()) * 1e6))
        chains = new[:beam]
    for ch in chains:
        y = project(ch[-1][len(ch[-1]) // 2])
        orbit = [y]
        good = True
        for piece in reversed(ch[:-1]):
            proj = project(piece)
            near = np.abs(((project(fmap.eval(proj)) - orbit[-1]) + 0.5) % 1.0 - 0.5).max(axis=1)
            x = fmap.local_preimage(orbit[-1], piece[int(np.argmin(near))])
            if x is None or np.min(np.abs(((proj - x) + 0.5) % 1.0 - 0.5).max(axis=1)) > 2 * max_seg:
                pre = fmap.preimage_array(orbit[-1])
                d = np.array([np.min(np.abs(((proj - p) + 0.5) % 1.0 - 0.5).max(axis=1)) for p in pre])
                x = pre[int(np.argmin(d))]
            if avoid.contains_points(x):
                good = False
                break
            orbit.append(x)
        if not good:
            continue
        orbit = np.array(orbit[::-1])
        proj_arc = project(pts)
        dist = float(np.min(np.abs(((proj_arc - orbit[0]) + 0.5) % 1.0 - 0.5).max(axis=1)))
        return orbit, dist
    return None


def verify_orbit(fmap: MapSpec, orbit: np.ndarray, avoid: GridCover, tol: float = 1e-9) -> bool:
    """Step-by-step check that consecutive points are images and none lies in ``avoid``."""
    from .geometry import torus_dist

    if avoid.contains_points(orbit).any():
        return False
    if len(orbit) < 2:
        return True
    return bool(np.max(torus_dist(fmap.eval(orbit[:-1]), orbit[1:])) <= tol)
