"""Torus coordinates, lifts and max-metric diameters.

All distances use the max-coordinate (Chebyshev) metric, so balls are
axis-aligned cubes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in self.coords)
        if len(c) < 1:
            raise GeometryError("torus point needs at least one coordinate")
        if any(not (0.0 <= v < 1.0) for v in c):
            raise GeometryError(f"torus coordinates must lie in [0,1): {c}")
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def lift(self, sheet: Sequence[int] | None = None) -> "LiftPoint":
        k = np.zeros(self.dim) if sheet is None else np.asarray(sheet, float)
        return LiftPoint(tuple(np.asarray(self.coords) + k))


@dataclass(frozen=True)
class LiftPoint:
    coords: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(v) for v in self.coords))

    @property
    def dim(self) -> int:
        return len(self.coords)

    def project(self) -> TorusPoint:
        return TorusPoint(tuple(project(self.coords)))


def as_array(x) -> np.ndarray:
    if isinstance(x, (TorusPoint, LiftPoint)):
        return np.asarray(x.coords, float)
    return np.asarray(x, float)


def project(x) -> np.ndarray:
    """Reduce lifted coordinates into [0, 1)."""
    a = np.mod(as_array(x), 1.0)
    # np.mod can return exactly 1.0 for tiny negative inputs
    return np.where(a >= 1.0, 0.0, a)


def wrap_delta(d) -> np.ndarray:
    """Representative of a coordinate difference in [-1/2, 1/2]."""
    d = np.asarray(d, float)
    return d - np.round(d)


def torus_dist(x, y) -> float | np.ndarray:
    """Max-metric distance on the torus; vectorised over leading axes."""
    a, b = as_array(x), as_array(y)
    if a.shape[-1] != b.shape[-1]:
        raise GeometryError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    d = np.abs(wrap_delta(a - b)).max(axis=-1)
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class BoxRegion:
    """Closed axis-aligned box, either inside the fundamental domain or in R^n."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    fundamental: bool = True

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise GeometryError("lo/hi must be nonempty and of equal length")
        if any(l > h for l, h in zip(lo, hi)):
            raise GeometryError(f"empty box: lo={lo} hi={hi}")
        if self.fundamental and any(h - l > 1.0 for l, h in zip(lo, hi)):
            raise GeometryError("fundamental-domain box has a side longer than 1")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def contains(self, x) -> bool:
        p = as_array(x)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def boundary_polyline(self, max_seg: float = 1e-3) -> "ArcPolyline":
        """Closed boundary loop of a 2-D box (first vertex repeated at the end)."""
        if self.dim != 2:
            raise GeometryError("boundary loops are only defined for planar boxes")
        (x0, y0), (x1, y1) = self.lo, self.hi
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
        return ArcPolyline(tuple(LiftPoint(c) for c in corners)).refined(max_seg)


@dataclass(frozen=True)
class ArcPolyline:
    vertices: tuple[LiftPoint, ...]

    def __post_init__(self):
        verts = tuple(v if isinstance(v, LiftPoint) else LiftPoint(tuple(v)) for v in self.vertices)
        if len(verts) < 2:
            raise GeometryError("an arc needs at least two vertices")
        arr = np.array([v.coords for v in verts])
        if np.any(np.all(np.diff(arr, axis=0) == 0.0, axis=1)):
            raise GeometryError("consecutive arc vertices must be distinct")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_array(cls, pts) -> "ArcPolyline":
        return cls(tuple(LiftPoint(tuple(p)) for p in np.asarray(pts, float)))

    def as_array(self) -> np.ndarray:
        return np.array([v.coords for v in self.vertices])

    @property
    def dim(self) -> int:
        return self.vertices[0].dim

    def refined(self, max_seg: float = 1e-3) -> "ArcPolyline":
        """Insert vertices so that no segment is longer than ``max_seg`` (max-metric)."""
        pts = self.as_array()
        out = [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            n = max(1, int(np.ceil(np.abs(b - a).max() / max_seg)))
            t = np.linspace(0.0, 1.0, n + 1)[1:, None]
            out.extend(a + t * (b - a))
        return ArcPolyline.from_array(np.array(out))


Region = Union[BoxRegion, ArcPolyline]


def _pairwise_max_extent(pts: np.ndarray) -> float:
    # the max-metric diameter of a finite set is the widest coordinate spread
    return float((pts.max(axis=0) - pts.min(axis=0)).max())


def diameter(region, lifted: bool = True) -> float:
    """Max-metric diameter of a box, polyline or union of boxes.

    With ``lifted=False`` polyline vertices are first reduced to the torus
    and distances use the wrapped metric.
    """
    if isinstance(region, BoxRegion):
        return float(region.sides.max())
    if isinstance(region, ArcPolyline):
        pts = region.as_array()
        if lifted:
            return _pairwise_max_extent(pts)
        p = project(pts)
        return float(max(torus_dist(p[i], p[i:]).max() for i in range(len(p))))
    boxes = list(region)
    if not boxes:
        raise GeometryError("diameter of an empty region")
    lo = np.min([b.lo for b in boxes], axis=0)
    hi = np.max([b.hi for b in boxes], axis=0)
    return float((hi - lo).max())


def _as_boxes(U) -> list[BoxRegion]:
    if isinstance(U, BoxRegion):
        return [U]
    if hasattr(U, "to_boxes"):
        return U.to_boxes()
    return list(U)


def internal_diameter(U) -> float:
    """min over k != 0 of dist(U, U + k) for a box or union of boxes.

    The search over k is restricted to {-1, 0, 1}^n, which is exhaustive
    when diam(U) < 1.
    """
    boxes = _as_boxes(U)
    if not boxes:
        raise GeometryError("internal diameter of an empty region")
    d = diameter(boxes)
    if d >= 1.0:
        raise GeometryError(
            f"diam(U) = {d:.6g} >= 1: internal diameter is not meaningful in this frame"
        )
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    n = lo.shape[1]
    best = np.inf
    for k in itertools.product((-1, 0, 1), repeat=n):
        if not any(k):
            continue
        kk = np.asarray(k, float)
        # gap per coordinate between box a and translated box b
        g1 = (lo[None, :, :] + kk) - hi[:, None, :]
        g2 = lo[:, None, :] - (hi[None, :, :] + kk)
        gap = np.maximum(0.0, np.maximum(g1, g2)).max(axis=-1)
        best = min(best, float(gap.min()))
    return best
