"""Torus endomorphisms in additive normal form ``f(x) = A x + sum(terms)``.

Two perturbation kinds are supported:

* ``TrigTerm``: ``amp * sin(2 pi <k, x> + phase) * e_coord``, optionally
  multiplied by a C^2 plateau window in one coordinate (used to make fibre
  maps of skew products depend on the base point).
* ``BumpTerm``: ``disp * prod_i beta(d_i / radius)`` with
  ``beta(u) = (1 - u^2)^3`` on ``|u| < 1``; supported in the max-ball
  ``B_radius(center)``.

Every term has a closed-form derivative and a rigorous range bound over a box,
which gives the box enclosures used by the set-oriented checkers.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import TorusPoint, as_array, project, torus_dist, wrap_delta

TWO_PI = 2.0 * math.pi


class MapError(ValueError):
    pass


class BranchError(MapError):
    pass


# ---------------------------------------------------------------- intervals

def sin_range(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact range of sin over [lo, hi] (vectorised)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    s_lo = np.minimum(np.sin(lo), np.sin(hi))
    s_hi = np.maximum(np.sin(lo), np.sin(hi))
    # a maximum pi/2 + 2 pi m inside the interval
    has_max = np.floor((hi - math.pi / 2) / TWO_PI) >= np.ceil((lo - math.pi / 2) / TWO_PI)
    has_min = np.floor((hi + math.pi / 2) / TWO_PI) >= np.ceil((lo + math.pi / 2) / TWO_PI)
    s_hi = np.where(has_max, 1.0, s_hi)
    s_lo = np.where(has_min, -1.0, s_lo)
    return s_lo, s_hi


def interval_mul(a_lo, a_hi, b_lo, b_hi):
    c = np.stack([a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi])
    return c.min(axis=0), c.max(axis=0)


def _dist_to_int_range(a: np.ndarray, w: np.ndarray):
    """Range of the distance to the nearest integer over [a, a + w]."""
    b = a + w
    contains_int = np.floor(b) >= np.ceil(a)
    contains_half = np.floor(b - 0.5) >= np.ceil(a - 0.5)
    da = np.abs(wrap_delta(a))
    db = np.abs(wrap_delta(b))
    dmin = np.where(contains_int, 0.0, np.minimum(da, db))
    dmax = np.where(contains_half | (w >= 1.0), 0.5, np.maximum(da, db))
    return dmin, dmax


# ---------------------------------------------------------------- window

def _smoothstep(t):
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_d(t):
    return 30.0 * t * t * (1.0 - t) ** 2


@dataclass(frozen=True)
class Window:
    """Periodic C^2 plateau in one coordinate: 1 on [lo, hi], 0 beyond a ramp."""

    coord: int
    lo: float
    hi: float
    ramp: float

    def __post_init__(self):
        if self.ramp <= 0 or self.hi < self.lo or self.hi - self.lo + 2 * self.ramp >= 1.0:
            raise MapError(f"invalid window {self}")

    def _u(self, x):
        return np.mod(np.asarray(x, float)[..., self.coord] - self.lo, 1.0)

    def value(self, x):
        u = self._u(x)
        L, r = self.hi - self.lo, self.ramp
        up = np.clip((u - (1.0 - r)) / r, 0.0, 1.0)
        down = np.clip(1.0 - (u - L) / r, 0.0, 1.0)
        return np.where(u <= L, 1.0, np.where(u < L + r, _smoothstep(down), _smoothstep(up)))

    def deriv(self, x):
        u = self._u(x)
        L, r = self.hi - self.lo, self.ramp
        up = np.clip((u - (1.0 - r)) / r, 0.0, 1.0)
        down = np.clip(1.0 - (u - L) / r, 0.0, 1.0)
        return np.where(
            u <= L, 0.0, np.where(u < L + r, -_smoothstep_d(down) / r, _smoothstep_d(up) / r)
        )

    def range(self, lo, hi):
        a = np.asarray(lo, float)[..., self.coord]
        b = np.asarray(hi, float)[..., self.coord]
        w = b - a
        full = w >= 1.0
        # plateau [lo, hi] and zero zone [hi + r, lo - r + 1], both mod 1
        zlo, zhi = self.hi + self.ramp, self.lo - self.ramp + 1.0

        def meets(s, e):
            return np.floor(b - s) >= np.ceil(a - e)

        va = self.value(_one_coord(a, self.coord))
        vb = self.value(_one_coord(b, self.coord))
        w_hi = np.where(full | meets(self.lo, self.hi), 1.0, np.maximum(va, vb))
        w_lo = np.where(full | meets(zlo, zhi), 0.0, np.minimum(va, vb))
        return w_lo, w_hi

    def to_json(self):
        return {"coord": self.coord, "lo": self.lo, "hi": self.hi, "ramp": self.ramp}


def _one_coord(v, coord):
    v = np.asarray(v, float)
    out = np.zeros(v.shape + (coord + 1,))
    out[..., coord] = v
    return out


# ---------------------------------------------------------------- terms

@dataclass(frozen=True)
class TrigTerm:
    k: tuple[int, ...]
    amp: float
    phase: float
    coord: int
    window: Window | None = None

    kind = "trig"

    def _arg(self, x):
        return TWO_PI * (np.asarray(x, float) @ np.asarray(self.k, float)) + self.phase

    def value(self, x):
        v = self.amp * np.sin(self._arg(x))
        if self.window is not None:
            v = v * self.window.value(x)
        return v

    def gradient(self, x):
        """Gradient of the scalar factor, shape (..., n)."""
        x = np.asarray(x, float)
        arg = self._arg(x)
        g = (self.amp * TWO_PI * np.cos(arg))[..., None] * np.asarray(self.k, float)
        if self.window is not None:
            w = self.window.value(x)
            g = g * w[..., None]
            extra = self.amp * np.sin(arg) * self.window.deriv(x)
            g[..., self.window.coord] += extra
        return g

    def range(self, lo, hi):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        kk = np.asarray(self.k, float)
        base = TWO_PI * (np.where(kk >= 0, lo, hi) @ kk) + self.phase
        top = TWO_PI * (np.where(kk >= 0, hi, lo) @ kk) + self.phase
        s_lo, s_hi = sin_range(base, top)
        r_lo, r_hi = interval_mul(s_lo, s_hi, np.full_like(s_lo, self.amp), np.full_like(s_hi, self.amp))
        if self.window is not None:
            w_lo, w_hi = self.window.range(lo, hi)
            r_lo, r_hi = interval_mul(r_lo, r_hi, w_lo, w_hi)
        return r_lo, r_hi

    def hessian_bound(self) -> float:
        kn = TWO_PI * float(np.linalg.norm(self.k))
        a = abs(self.amp)
        if self.window is None:
            return a * kn * kn
        r = self.window.ramp
        return a * (kn * kn + 2.0 * kn * 1.875 / r + 5.7735 / r**2)

    def to_json(self):
        d = {"kind": "trig", "k": list(self.k), "amp": self.amp, "phase": self.phase, "coord": self.coord}
        if self.window is not None:
            d["window"] = self.window.to_json()
        return d


def _beta(u):
    u2 = np.minimum(u * u, 1.0)
    return (1.0 - u2) ** 3


def _beta_d(u):
    u2 = np.minimum(u * u, 1.0)
    return -6.0 * u * (1.0 - u2) ** 2


@dataclass(frozen=True)
class BumpTerm:
    center: tuple[float, ...]
    radius: float
    disp: tuple[float, ...]

    kind = "bump"

    def __post_init__(self):
        if not (0.0 < self.radius <= 0.5):
            raise MapError("bump radius must lie in (0, 1/2]")

    def _u(self, x):
        return wrap_delta(np.asarray(x, float) - np.asarray(self.center)) / self.radius

    def profile(self, x):
        return np.prod(_beta(self._u(x)), axis=-1)

    def value(self, x):
        return self.profile(x)[..., None] * np.asarray(self.disp)

    def profile_gradient(self, x):
        u = self._u(x)
        b = _beta(u)
        db = _beta_d(u) / self.radius
        n = u.shape[-1]
        g = np.empty_like(u)
        for i in range(n):
            others = np.prod(np.delete(b, i, axis=-1), axis=-1) if n > 1 else 1.0
            g[..., i] = db[..., i] * others
        return g

    def range(self, lo, hi):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        a = lo - np.asarray(self.center)
        dmin, dmax = _dist_to_int_range(a, hi - lo)
        p_hi = np.prod(_beta(dmin / self.radius), axis=-1)
        p_lo = np.prod(_beta(dmax / self.radius), axis=-1)
        v = np.asarray(self.disp)
        r1 = p_lo[..., None] * v
        r2 = p_hi[..., None] * v
        return np.minimum(r1, r2), np.maximum(r1, r2)

    def hessian_bound(self) -> float:
        n = len(self.center)
        return float(np.linalg.norm(self.disp)) * n * 6.0 / self.radius**2

    def to_json(self):
        return {"kind": "bump", "center": list(self.center), "radius": self.radius, "disp": list(self.disp)}


Term = TrigTerm | BumpTerm


def term_from_json(d: dict) -> Term:
    kind = d.get("kind")
    if kind == "trig":
        w = d.get("window")
        window = Window(int(w["coord"]), float(w["lo"]), float(w["hi"]), float(w["ramp"])) if w else None
        return TrigTerm(tuple(int(v) for v in d["k"]), float(d["amp"]), float(d.get("phase", 0.0)),
                        int(d["coord"]), window)
    if kind == "bump":
        return BumpTerm(tuple(float(v) for v in d["center"]), float(d["radius"]),
                        tuple(float(v) for v in d["disp"]))
    raise MapError(f"unknown term kind {kind!r}")


# ---------------------------------------------------------------- samples

@dataclass(frozen=True)
class JacobianSample:
    point: TorusPoint
    matrix: np.ndarray
    det: float
    min_norm: float
    degenerate: bool = False


@dataclass(frozen=True)
class BranchId:
    residue: tuple[int, ...]
    seed: tuple[float, ...]


# ---------------------------------------------------------------- map

@dataclass(frozen=True)
class MapSpec:
    dim: int
    linear: tuple[tuple[int, ...], ...]
    terms: tuple[Term, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        lin = tuple(tuple(int(v) for v in row) for row in self.linear)
        if len(lin) != self.dim or any(len(r) != self.dim for r in lin):
            raise MapError(f"linear part must be {self.dim}x{self.dim}")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if isinstance(t, TrigTerm) and (len(t.k) != self.dim or not 0 <= t.coord < self.dim):
                raise MapError(f"trig term has wrong dimension: {t}")
            if isinstance(t, BumpTerm) and (len(t.center) != self.dim or len(t.disp) != self.dim):
                raise MapError(f"bump term has wrong dimension: {t}")
        if self.degree < 1:
            raise MapError("linear part must satisfy |det A| >= 1")

    # -- basic data

    @property
    def A(self) -> np.ndarray:
        return np.asarray(self.linear, float)

    @property
    def det_linear(self) -> int:
        return int(round(np.linalg.det(np.asarray(self.linear, float))))

    @property
    def degree(self) -> int:
        return abs(self.det_linear)

    def with_terms(self, extra: Iterable[Term], name: str | None = None) -> "MapSpec":
        return MapSpec(self.dim, self.linear, self.terms + tuple(extra), name or self.name)

    # -- evaluation

    def perturbation(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        for t in self.terms:
            if isinstance(t, TrigTerm):
                out[..., t.coord] += t.value(x)
            else:
                out += t.value(x)
        return out

    def eval_lift(self, x) -> np.ndarray:
        x = as_array(x)
        return x @ self.A.T + self.perturbation(x)

    def eval(self, x) -> np.ndarray:
        return project(self.eval_lift(project(x)))

    def __call__(self, x) -> np.ndarray:
        return self.eval(x)

    def iterate(self, x, steps: int) -> np.ndarray:
        x = project(x)
        for _ in range(steps):
            x = self.eval(x)
        return x

    def jacobian_matrix(self, x) -> np.ndarray:
        x = as_array(x)
        J = np.broadcast_to(self.A, x.shape[:-1] + (self.dim, self.dim)).copy()
        for t in self.terms:
            if isinstance(t, TrigTerm):
                J[..., t.coord, :] += t.gradient(x)
            else:
                J += t.profile_gradient(x)[..., None, :] * np.asarray(t.disp)[:, None]
        return J

    def jacobian(self, x) -> JacobianSample:
        p = project(x)
        M = self.jacobian_matrix(p)
        det = float(np.linalg.det(M))
        s = np.linalg.svd(M, compute_uv=False)
        degenerate = bool(s[-1] <= 1e-14 * max(1.0, s[0]))
        return JacobianSample(TorusPoint(tuple(p)), M, det, 0.0 if degenerate else float(s[-1]), degenerate)

    def det_and_min_norm(self, x) -> tuple[np.ndarray, np.ndarray]:
        M = self.jacobian_matrix(x)
        return np.linalg.det(M), np.linalg.svd(M, compute_uv=False)[..., -1]

    def hessian_bound(self) -> float:
        """Upper bound for ||D^2 f|| (used to inflate grid-sampled margins)."""
        return float(sum(t.hessian_bound() for t in self.terms))

    # -- enclosures

    def enclose(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Lifted boxes [lo, hi] (shape (..., n)) -> boxes containing their images."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        A = self.A
        mid = c @ A.T
        rad = r @ np.abs(A).T
        out_lo, out_hi = mid - rad, mid + rad
        for t in self.terms:
            t_lo, t_hi = t.range(lo, hi)
            if isinstance(t, TrigTerm):
                out_lo[..., t.coord] += t_lo
                out_hi[..., t.coord] += t_hi
            else:
                out_lo += t_lo
                out_hi += t_hi
        return out_lo, out_hi

    # -- inverse branches

    def residues(self) -> np.ndarray:
        """Complete residue system of Z^n / A Z^n (integer points of A [0,1)^n)."""
        A = np.asarray(self.linear, dtype=np.int64)
        det = self.det_linear
        adj = np.rint(np.linalg.inv(A.astype(float)) * det).astype(np.int64)
        corners = np.array(list(itertools.product((0, 1), repeat=self.dim))) @ A.T
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        grids = np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        num = pts @ adj.T  # = det * A^{-1} r, exact integers
        if det > 0:
            ok = np.all((num >= 0) & (num < det), axis=1)
        else:
            ok = np.all((num <= 0) & (num > det), axis=1)
        res = pts[ok]
        if len(res) != abs(det):
            raise MapError("residue enumeration failed")
        return res

    def _lift_solve(self, targets: np.ndarray, tol: float, max_iter: int,
                    x0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Damped Newton for eval_lift(x) = targets, rows independent."""
        x = targets @ np.linalg.inv(self.A).T if x0 is None else np.array(x0, float)
        converged = np.zeros(len(x), bool)
        F = self.eval_lift(x) - targets
        for _ in range(max_iter):
            J = self.jacobian_matrix(x)
            step = np.linalg.solve(J, F[..., None])[..., 0]
            t = np.ones(len(x))
            norm0 = np.abs(F).max(axis=1)
            for _ in range(40):
                xn = x - t[:, None] * step
                Fn = self.eval_lift(xn) - targets
                bad = np.abs(Fn).max(axis=1) > norm0 * (1 - 1e-4 * t) + 1e-15
                if not bad.any():
                    break
                t = np.where(bad, t * 0.5, t)
            step = t[:, None] * step
            x = x - step
            F = self.eval_lift(x) - targets
            converged = np.abs(step).max(axis=1) < tol / 10.0
            if converged.all():
                break
        return x, converged

    def preimage_array(self, y, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        y = project(y)
        res = self.residues()
        x, ok = self._lift_solve(y[None, :] + res, tol, max_iter)
        if not ok.all():
            bad = [tuple(int(v) for v in r) for r in res[~ok]]
            raise BranchError(f"Newton did not converge for residues {bad} at y={tuple(y)}")
        return project(x)

    def local_preimage(self, y, guess, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray | None:
        """Preimage of ``y`` on the inverse branch through ``guess``; None if Newton fails."""
        guess = np.asarray(guess, float)
        fy = self.eval_lift(guess[None])[0]
        target = np.asarray(y, float) + np.round(fy - np.asarray(y, float))
        x, ok = self._lift_solve(target[None], tol, max_iter, guess[None])
        return project(x[0]) if ok[0] else None

    def preimage_batch(self, Y, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        """All preimages of each row of ``Y``; shape (M, degree, n)."""
        Y = project(np.atleast_2d(Y))
        res = self.residues()
        M, D = len(Y), len(res)
        targets = (Y[:, None, :] + res[None, :, :]).reshape(M * D, self.dim)
        x, ok = self._lift_solve(targets, tol, max_iter)
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0]) // D
            raise BranchError(f"Newton did not converge at y={tuple(Y[i])}")
        return project(x).reshape(M, D, self.dim)

    def preimages(self, y, tol: float = 1e-10, max_iter: int = 50) -> list[tuple[TorusPoint, BranchId]]:
        y = project(y)
        res = self.residues()
        targets = y[None, :] + res
        x, ok = self._lift_solve(targets, tol, max_iter)
        if not ok.all():
            bad = [tuple(int(v) for v in r) for r in res[~ok]]
            raise BranchError(f"Newton did not converge for residues {bad} at y={tuple(y)}")
        pts = project(x)
        for i in range(len(pts)):
            d = torus_dist(pts[i], pts[i + 1:]) if i + 1 < len(pts) else np.array([])
            if np.any(d < tol):
                raise BranchError(f"duplicate preimages for residues {tuple(res[i])}: map not locally invertible")
        seeds = targets @ np.linalg.inv(self.A).T
        return [
            (TorusPoint(tuple(p)), BranchId(tuple(int(v) for v in r), tuple(s)))
            for p, r, s in zip(pts, res, seeds)
        ]

    # -- serialisation

    def to_json(self) -> dict:
        d = {"dim": self.dim, "linear": [list(r) for r in self.linear], "terms": [t.to_json() for t in self.terms]}
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_json(cls, d: dict) -> "MapSpec":
        try:
            return cls(int(d["dim"]), tuple(tuple(r) for r in d["linear"]),
                       tuple(term_from_json(t) for t in d.get("terms", [])), d.get("name", ""))
        except (KeyError, TypeError) as exc:
            raise MapError(f"malformed map spec: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, s: str) -> "MapSpec":
        return cls.from_json(json.loads(s))


def linear_map(A: Sequence[Sequence[int]], name: str = "") -> MapSpec:
    A = [list(r) for r in A]
    return MapSpec(len(A), tuple(tuple(r) for r in A), (), name)


def grid_points(dim: int, step: float) -> np.ndarray:
    ticks = np.arange(0.0, 1.0, step)
    mesh = np.meshgrid(*([ticks] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def c1_distance(f: MapSpec, g: MapSpec, grid_step: float) -> float:
    """Grid-sampled C^1 distance; infinite across homotopy classes."""
    if f.dim != g.dim:
        raise MapError("maps of different dimension")
    if f.linear != g.linear:
        return math.inf
    x = grid_points(f.dim, grid_step)
    c0 = torus_dist(f.eval(x), g.eval(x))
    dJ = f.jacobian_matrix(x) - g.jacobian_matrix(x)
    c1 = np.linalg.norm(dJ, ord=2, axis=(-2, -1))
    return float(max(np.max(c0), np.max(c1)))


def random_perturbation(f: MapSpec, norm: float, rng: np.random.Generator, n_terms: int = 3,
                        max_freq: int = 2, grid_step: float = 1.0 / 64) -> MapSpec:
    """``f`` plus random trigonometric terms scaled to grid C^1 distance ``norm``."""
    terms = []
    for _ in range(n_terms):
        k = tuple(int(v) for v in rng.integers(-max_freq, max_freq + 1, size=f.dim))
        if not any(k):
            k = (1,) + k[1:]
        terms.append(TrigTerm(k, float(rng.uniform(0.5, 1.0)), float(rng.uniform(0, TWO_PI)),
                              int(rng.integers(f.dim))))
    probe = f.with_terms(terms)
    scale = norm / c1_distance(f, probe, grid_step)
    scaled = [TrigTerm(t.k, t.amp * scale, t.phase, t.coord) for t in terms]
    return f.with_terms(scaled, name=f"{f.name}+pert")
