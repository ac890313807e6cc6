"""Pseudo-orbits, shadowing by backward contraction, and the shadowing conjugacy.

The conjugacy direction is fixed once: ``h`` sends points of the perturbed
map ``g`` to points of the reference map ``f`` and satisfies
``h(g(x)) = f(h(x))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certificate import Certificate, stopwatch, verdict_from
from .geometry import TorusPoint, project, torus_dist
from .maps import MapError, MapSpec

TIE_TOL = 1e-9
SLACK = 1e-12


class ShadowingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PseudoOrbit:
    """Finite window of a delta-pseudo-orbit; validated when ``fmap`` is given."""

    points: np.ndarray
    delta: float
    fmap: MapSpec | None = None

    def __post_init__(self):
        pts = project(np.atleast_2d(np.asarray(self.points, float)))
        if len(pts) < 1:
            raise ShadowingError("pseudo-orbit is empty")
        if not self.delta >= 0:
            raise ShadowingError("delta must be nonnegative")
        object.__setattr__(self, "points", pts)
        if self.fmap is not None:
            err = self.errors(self.fmap)
            if len(err) and err.max() > self.delta + SLACK:
                k = int(np.argmax(err))
                raise ShadowingError(f"step {k}: d(f(x_k), x_k+1) = {err[k]:.3g} exceeds delta = {self.delta:.3g}")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def errors(self, fmap: MapSpec) -> np.ndarray:
        if len(self.points) < 2:
            return np.zeros(0)
        return np.atleast_1d(torus_dist(fmap.eval(self.points[:-1]), self.points[1:]))

    def to_json(self) -> dict:
        return {"delta": self.delta, "points": self.points.tolist()}

    @classmethod
    def from_json(cls, d, fmap: MapSpec | None = None) -> "PseudoOrbit":
        if isinstance(d, list):
            pts = np.asarray(d, float)
            delta = None
        else:
            pts = np.asarray(d["points"], float)
            delta = d.get("delta")
        if delta is None:
            if fmap is None:
                raise ShadowingError("delta missing and no map to measure it")
            delta = float(cls(pts, 0.0).errors(fmap).max(initial=0.0))
        return cls(pts, float(delta), fmap)


@dataclass(frozen=True, eq=False)
class ShadowingResult:
    orbit: np.ndarray
    eta: float
    bound: float
    tail: float = 0.0
    unique: bool | None = None

    @property
    def point(self) -> TorusPoint:
        return TorusPoint(tuple(self.orbit[0]))


def random_pseudo_orbit(fmap: MapSpec, x0, length: int, delta: float, rng: np.random.Generator) -> PseudoOrbit:
    """Orbit of ``x0`` with a uniform kick of max-norm at most ``delta`` after each step."""
    pts = [project(x0)]
    for _ in range(length - 1):
        kick = rng.uniform(-delta, delta, size=fmap.dim)
        pts.append(project(fmap.eval(pts[-1]) + kick))
    return PseudoOrbit(np.array(pts), delta)


def _nearest_branch(pre: np.ndarray, ref: np.ndarray, step: int) -> tuple[np.ndarray, np.ndarray]:
    # pre: (M, D, n), ref: (M, n)
    d = torus_dist(pre, ref[:, None, :])
    d = np.atleast_2d(d)
    order = np.argsort(d, axis=1)
    best = order[:, 0]
    rows = np.arange(len(pre))
    if d.shape[1] > 1:
        d0 = d[rows, best]
        d1 = d[rows, order[:, 1]]
        tie = (d1 - d0) <= TIE_TOL
        if tie.any():
            i = int(np.flatnonzero(tie)[0])
            raise ShadowingError(f"branch ambiguity at step {step} (orbit {i}): two preimages equidistant")
    return pre[rows, best], d[rows, best]


def shadow_batch(fmap: MapSpec, pseudos: np.ndarray, delta: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Shadow M pseudo-orbits of equal length at once.

    ``pseudos`` has shape (M, L, n).  Returns the shadowing orbits (same
    shape) and the achieved eta per orbit.
    """
    if not lam > 1:
        raise ShadowingError(f"contraction failure: expansion constant {lam} <= 1")
    P = project(np.asarray(pseudos, float))
    M, L, n = P.shape
    Y = np.empty_like(P)
    Y[:, -1] = P[:, -1]
    limit = 0.5 / lam + delta
    for k in range(L - 2, -1, -1):
        pre = fmap.preimage_batch(Y[:, k + 1])
        Y[:, k], dist = _nearest_branch(pre, P[:, k], k)
        if np.any(dist > limit * lam):
            raise ShadowingError(f"contraction failure at step {k}: preimage drifted {dist.max():.3g} from the pseudo-orbit")
    eta = np.atleast_2d(torus_dist(Y, P)).max(axis=1)
    return Y, eta


def shadow(fmap: MapSpec, pseudo: PseudoOrbit, region=None, lam: float | None = None,
           beta: float | None = None) -> ShadowingResult:
    """Shadowing orbit of a finite pseudo-orbit window.

    The window end is pinned to the pseudo-orbit and pulled back through the
    nearest inverse branch at every step.  ``region`` (a LambdaCover) is used
    only to measure the tail term ``lam**-L * diam``.
    """
    if lam is None:
        _, mn = fmap.det_and_min_norm(pseudo.points)
        lam = float(mn.min())
    Y, eta = shadow_batch(fmap, pseudo.points[None], pseudo.delta, lam)
    bound = pseudo.delta * lam / (lam - 1.0)
    diam = 1.0
    if region is not None:
        cov = getattr(region, "cover", region)
        try:
            diam = cov.diameter()
        except Exception:
            diam = 1.0
    tail = lam ** (-(len(pseudo) - 1)) * diam
    unique = None if beta is None else bool(eta[0] < beta / 2)
    return ShadowingResult(Y[0], float(eta[0]), bound, tail, unique)


# ---------------------------------------------------------------- expansivity

def estimate_beta(fmap: MapSpec, cover=None, samples: int = 64, seed: int = 0) -> float:
    """Heuristic expansivity constant (reported, not certified).

    With a Lambda cover that splits into several components, half the
    smallest gap between components; otherwise half the smallest distance
    between distinct preimages of sample points.
    """
    if cover is not None:
        cov = getattr(cover, "cover", cover)
        lab, n = cov.components()
        if n > 1:
            from .regions import GridCover
            gaps = []
            covers = [GridCover(cov.res, lab == i) for i in range(1, n + 1)]
            for i in range(n):
                for j in range(i + 1, n):
                    a = covers[i].framed_cells()
                    b = covers[j].cells
                    delta = np.abs(((b[None, :, :] - a[:, None, :]) + cov.res // 2) % cov.res - cov.res // 2)
                    gaps.append(float(np.maximum(0, delta - 1).max(axis=-1).min()) / cov.res)
            return 0.5 * min(gaps)
    if fmap.degree == 1:
        return 0.5
    rng = np.random.default_rng(seed)
    pre = fmap.preimage_batch(rng.random((samples, fmap.dim)))
    D = pre.shape[1]
    best = np.inf
    for i in range(D):
        for j in range(i + 1, D):
            best = min(best, float(np.min(torus_dist(pre[:, i], pre[:, j]))))
    return 0.5 * best


# ---------------------------------------------------------------- conjugacy

def _orbit_windows(g: MapSpec, X: np.ndarray, window: int) -> np.ndarray:
    W = np.empty((len(X), window + 1, X.shape[1]))
    W[:, 0] = project(X)
    for k in range(window):
        W[:, k + 1] = g.eval(W[:, k])
    return W


def _c0_distance(f: MapSpec, g: MapSpec, pts: np.ndarray) -> float:
    return float(np.max(torus_dist(f.eval(pts), g.eval(pts)), initial=0.0))


def conjugacy_points(f: MapSpec, g: MapSpec, X, window: int, region=None, lam: float | None = None,
                     eps: float | None = None) -> np.ndarray:
    """Vectorised ``conjugacy_point`` over rows of ``X``."""
    if f.dim != g.dim:
        raise MapError("maps act on different tori")
    X = project(np.atleast_2d(np.asarray(X, float)))
    W = _orbit_windows(g, X, window)
    flat = W.reshape(-1, f.dim)
    if region is not None:
        cov = getattr(region, "cover", region)
        inside = cov.contains_points(flat).reshape(W.shape[:2])
        if not inside.all():
            i, k = np.argwhere(~inside)[0]
            raise ShadowingError(f"orbit {i} leaves the expanding region at step {k}")
    delta = _c0_distance(f, g, flat)
    if eps is not None and delta > eps:
        raise ShadowingError(f"C0 distance {delta:.3g} exceeds eps = {eps:.3g}")
    if lam is None:
        _, mn = f.det_and_min_norm(flat)
        lam = float(mn.min())
    Y, _ = shadow_batch(f, W, delta, lam)
    return Y[:, 0]


def conjugacy_point(f: MapSpec, g: MapSpec, x, window: int, region=None, lam: float | None = None) -> TorusPoint:
    y = conjugacy_points(f, g, np.asarray(getattr(x, "coords", x), float)[None], window, region, lam)
    return TorusPoint(tuple(y[0]))


@dataclass(frozen=True, eq=False)
class ConjugacyTable:
    sources: np.ndarray
    images: np.ndarray
    eta: float
    window: int
    beta: float | None = None

    @property
    def pairs(self) -> list[tuple[tuple, tuple]]:
        return [(tuple(a), tuple(b)) for a, b in zip(self.sources, self.images)]

    def to_json(self) -> dict:
        return {"window": self.window, "eta": self.eta, "beta": self.beta,
                "pairs": [[a.tolist(), b.tolist()] for a, b in zip(self.sources, self.images)]}


def build_table(f: MapSpec, g: MapSpec, X, window: int, region=None, beta: float | None = None) -> ConjugacyTable:
    X = project(np.atleast_2d(np.asarray(X, float)))
    Y = conjugacy_points(f, g, X, window, region)
    eta = float(np.max(torus_dist(X, Y), initial=0.0))
    return ConjugacyTable(X, Y, eta, window, beta)


def check_conjugacy(f: MapSpec, g: MapSpec, table: ConjugacyTable, tol: float) -> Certificate:
    """Empirical check of h(g(x)) = f(h(x)) and injectivity on the table."""
    if len(table.sources) == 0:
        raise ShadowingError("conjugacy table is empty")
    if table.beta is not None and table.eta >= table.beta:
        raise ShadowingError(f"eta = {table.eta:.3g} >= beta = {table.beta:.3g}: outside the uniqueness regime")
    with stopwatch() as sw:
        hg = conjugacy_points(f, g, g.eval(table.sources), table.window)
        fh = f.eval(table.images)
        defect = np.atleast_1d(torus_dist(hg, fh))
        worst = float(defect.max())
        collisions = 0
        X, Y = table.sources, table.images
        if len(X) <= 4000:
            for i in range(len(X) - 1):
                dy = np.atleast_1d(torus_dist(Y[i], Y[i + 1:]))
                dx = np.atleast_1d(torus_dist(X[i], X[i + 1:]))
                collisions += int(np.sum((dy < tol / 10) & (dx >= tol / 10)))
    ok = worst <= tol and collisions == 0
    margin = tol - worst if collisions == 0 else -float(collisions)
    return Certificate("conjugacy", verdict_from(ok), margin, len(X),
                       {"tol": tol, "window": table.window},
                       sw["elapsed"], {"max_defect": worst, "eta": table.eta, "collisions": collisions,
                                       "beta": table.beta})
