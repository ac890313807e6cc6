"""Cone fields over a constant splitting, skew products, and the disc hypothesis checks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .certificate import INCONCLUSIVE, Certificate, stopwatch, verdict_from
from .maps import MapError, MapSpec, TrigTerm, Window, grid_points, term_from_json
from .regions import GridCover, arc_witness, compute_lambda_cover


class ConeError(ValueError):
    pass


# ---------------------------------------------------------------- cone families

@dataclass(frozen=True, eq=False)
class ConeFamily:
    """Cones ``{v : |v_c| <= kappa |v_u|}`` around a fixed orthonormal splitting."""

    center: np.ndarray    # (n, d_c) orthonormal columns spanning E^c
    unstable: np.ndarray  # (n, d_u) orthonormal columns
    kappa: float

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.center, float))
        u = np.atleast_2d(np.asarray(self.unstable, float))
        if c.shape[0] != u.shape[0] or c.shape[1] + u.shape[1] != c.shape[0]:
            raise ConeError("center and unstable bases must be complementary")
        B = np.hstack([c, u])
        if not np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-10):
            raise ConeError("splitting coordinates must be orthonormal")
        if not self.kappa > 0:
            raise ConeError("kappa must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "unstable", u)

    @classmethod
    def coordinate(cls, dim: int, center_axes, kappa: float) -> "ConeFamily":
        center_axes = list(center_axes)
        others = [i for i in range(dim) if i not in center_axes]
        I = np.eye(dim)
        return cls(I[:, center_axes], I[:, others], kappa)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def d_c(self) -> int:
        return self.center.shape[1]

    @property
    def d_u(self) -> int:
        return self.unstable.shape[1]

    def split(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return v @ self.center, v @ self.unstable

    def boundary_rays(self, count: int | None = None, interior: int = 0) -> np.ndarray:
        """Unit vectors on the cone boundary (plus optional interior rays)."""
        def sphere(d, k):
            if d == 1:
                return np.array([[1.0], [-1.0]])
            if d == 2:
                t = np.linspace(0, 2 * np.pi, k, endpoint=False)
                return np.stack([np.cos(t), np.sin(t)], axis=1)
            g = np.random.default_rng(0).normal(size=(k, d))
            return g / np.linalg.norm(g, axis=1, keepdims=True)

        k = count or (2 if self.d_u == 1 else 64)
        cs = sphere(self.d_c, k)
        us = sphere(self.d_u, k)
        if self.d_u == 1:
            us = us[:1]  # cones are symmetric under v -> -v
        scales = [self.kappa] + [self.kappa * (i + 1) / (interior + 1) for i in range(interior)]
        rays = []
        for s in scales:
            for c in cs:
                for u in us:
                    rays.append(s * (self.center @ c) + self.unstable @ u)
        if interior:
            for u in us:
                rays.append(self.unstable @ u)
        R = np.array(rays)
        return R / np.linalg.norm(R, axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "unstable": self.unstable.tolist(), "kappa": self.kappa}

    @classmethod
    def from_json(cls, d: dict) -> "ConeFamily":
        return cls(np.asarray(d["center"]), np.asarray(d["unstable"]), float(d["kappa"]))


def _grid(fmap: MapSpec, grid_step: float) -> np.ndarray:
    return grid_points(fmap.dim, grid_step) + grid_step / 2


def check_cone_invariance(fmap: MapSpec, cones: ConeFamily, grid_step: float, rays: int | None = None,
                          rigor: bool = False, chunk: int = 65536) -> Certificate:
    """Df maps the cone at x into the cone at f(x) on a grid; margin is the relative slack."""
    with stopwatch() as sw:
        V = cones.boundary_rays(rays)
        x = _grid(fmap, grid_step)
        worst = np.inf
        where = None
        for s in range(0, len(x), chunk):
            J = fmap.jacobian_matrix(x[s:s + chunk])
            W = np.einsum("mij,rj->mri", J, V)
            wc, wu = cones.split(W)
            nu = cones.kappa * np.linalg.norm(wu, axis=-1)
            slack = (nu - np.linalg.norm(wc, axis=-1)) / np.maximum(nu, 1e-300)
            i = np.unravel_index(np.argmin(slack), slack.shape)
            if slack[i] < worst:
                worst, where = float(slack[i]), x[s + i[0]].tolist()
        infl = 0.0
        if rigor:
            infl = fmap.hessian_bound() * math.sqrt(fmap.dim) * grid_step / 2 * (1 + cones.kappa)
    ok = worst > infl
    return Certificate("cone_invariance", verdict_from(ok), worst - infl, grid_step,
                       {"kappa": cones.kappa, "rays": len(V), "rigor": rigor}, sw["elapsed"],
                       {"min_slack": worst, "argmin": where, "inflation": infl})


def check_domination(fmap: MapSpec, cones: ConeFamily, lam: float, grid_step: float, rays: int | None = None,
                     interior: int = 4, chunk: int = 8192) -> Certificate:
    """For every inverse branch phi at grid points x with x' = phi(x):
    |Dphi(x) v| < lam and |Df(x')|E^c| * |Dphi(x) v| < lam for unit v in the cone at x."""
    if not 0 < lam < 1:
        raise ConeError("domination constant must lie in (0, 1)")
    with stopwatch() as sw:
        V = cones.boundary_rays(rays, interior=interior)
        x = _grid(fmap, grid_step)
        c1 = c2 = 0.0
        for s in range(0, len(x), chunk):
            pre = fmap.preimage_batch(x[s:s + chunk]).reshape(-1, fmap.dim)
            J = fmap.jacobian_matrix(pre)
            Jinv = np.linalg.inv(J)
            back = np.linalg.norm(np.einsum("mij,rj->mri", Jinv, V), axis=-1).max(axis=1)
            central = np.linalg.norm(J @ cones.center, ord=2, axis=(1, 2))
            c1 = max(c1, float(back.max()))
            c2 = max(c2, float((central * back).max()))
    achieved = max(c1, c2)
    ok = achieved < lam
    return Certificate("domination", verdict_from(ok), lam - achieved, grid_step,
                       {"lambda": lam, "kappa": cones.kappa}, sw["elapsed"],
                       {"max_inverse_cone_norm": c1, "max_product": c2, "lambda_achieved": achieved})


# ---------------------------------------------------------------- central cocycle

def central_min_norm(fmap: MapSpec, cones: ConeFamily, x: np.ndarray) -> np.ndarray:
    """Minimum norm of Df restricted to E^c at each row of x."""
    J = fmap.jacobian_matrix(np.atleast_2d(x))
    W = J @ cones.center
    return np.linalg.svd(W, compute_uv=False)[:, -1]


def cocycle_log_growth(fmap: MapSpec, cones: ConeFamily, orbit: np.ndarray) -> np.ndarray:
    """log m{Df^i |E^c} along the orbit for i = 1..len-1, by running QR."""
    Q = cones.center.copy()
    logs = [0.0]
    acc = 0.0
    R_acc = np.eye(cones.d_c)
    for x in orbit[:-1]:
        W = fmap.jacobian_matrix(x[None])[0] @ Q
        Q, R = np.linalg.qr(W)
        R_acc = R @ R_acc
        # normalise to avoid overflow; keep the scale in acc
        sc = np.abs(R_acc).max()
        acc += math.log(sc)
        R_acc /= sc
        smin = np.linalg.svd(R_acc, compute_uv=False)[-1]
        logs.append(acc + math.log(max(smin, 1e-300)))
    return np.asarray(logs[1:])


def central_good_set(fmap: MapSpec, cones: ConeFamily, lam0: float, res: int) -> GridCover:
    """Cells whose sampled central minimum norm exceeds lam0."""
    cells = np.argwhere(np.ones((res,) * fmap.dim, bool))
    worst = np.full(len(cells), np.inf)
    for o in itertools.product((0.0, 0.5, 1.0), repeat=fmap.dim):
        worst = np.minimum(worst, central_min_norm(fmap, cones, (cells + np.asarray(o)) / res))
    m = np.zeros((res,) * fmap.dim, bool)
    m[tuple(cells[worst > lam0].T)] = True
    return GridCover(res, m)


def check_teo2_disc_hypothesis(fmap: MapSpec, cones: ConeFamily, delta0: float, lam0: float, k0: int,
                               horizon: int, samples: int, seed: int = 0, res: int = 128,
                               cover_depth: int = 8) -> Certificate:
    """Random discs tangent to the unstable cone each carry a point with central growth.

    Discs are straight segments (d_u = 1) or flat squares spanned by the
    unstable basis, with max-metric diameter slightly above ``delta0``.
    """
    if not lam0 > 1:
        raise ConeError("lambda0 must exceed 1")
    if horizon < k0 + 2:
        return Certificate("teo2_disc_hypothesis", INCONCLUSIVE, 0.0, res,
                           {"horizon": horizon, "k0": k0}, 0.0, {"reason": "horizon too short"})
    rng = np.random.default_rng(seed)
    with stopwatch() as sw:
        good = central_good_set(fmap, cones, lam0, res)
        avoid = good.complement()
        lam_cover = compute_lambda_cover(fmap, avoid, cover_depth, "central-growth")
        found, misses = 0, []
        u = cones.unstable[:, 0]
        span = delta0 * 1.05 / np.abs(u).max()
        for i in range(samples):
            base = rng.random(fmap.dim)
            t = np.linspace(0.0, span, max(8, int(span * res * 4)))
            disc = base + t[:, None] * u
            w = arc_witness(fmap, disc, avoid, horizon)
            ok = False
            if w is not None:
                logs = cocycle_log_growth(fmap, cones, w[0])
                ok = True
                for k in range(k0 + 1, horizon):
                    seg = logs[k:] - (logs[k - 1] if k > 0 else 0.0)
                    i_steps = np.arange(1, len(seg) + 1)
                    if np.any(seg <= i_steps * math.log(lam0)):
                        ok = False
                        break
            if ok:
                found += 1
            else:
                misses.append(base.tolist())
    passed = found == samples
    margin = (found / samples) if passed else -(samples - found) / samples
    return Certificate("teo2_disc_hypothesis", verdict_from(passed), margin, res,
                       {"delta0": delta0, "lambda0": lam0, "k0": k0, "horizon": horizon,
                        "samples": samples, "seed": seed},
                       sw["elapsed"], {"witnessed": found, "misses": misses[:10],
                                       "good_fraction": good.fraction, "cover_fraction": lam_cover.fraction,
                                       "cover_depth": cover_depth,
                                       "disc_diameter": "max-metric diameter of the lifted disc"})


# ---------------------------------------------------------------- skew products

def _shift_term(t, offset: int, dim: int):
    if isinstance(t, TrigTerm):
        k = (0,) * offset + tuple(t.k)
        k = k + (0,) * (dim - len(k))
        w = t.window
        if w is not None:
            w = Window(w.coord + offset, w.lo, w.hi, w.ramp)
        return TrigTerm(k, t.amp, t.phase, t.coord + offset, w)
    raise MapError("only trigonometric terms can be lifted from the base")


@dataclass(frozen=True, eq=False)
class SkewProductSpec:
    """(x, y) -> (phi_y(x), E(y)) with fiber coordinates first.

    ``fiber_terms`` act on the full coordinate vector but may only displace
    fiber coordinates; ``base`` acts on the base coordinates alone.
    """

    fiber_dim: int
    fiber_linear: tuple
    fiber_terms: tuple
    base: MapSpec
    name: str = ""

    def __post_init__(self):
        for t in self.fiber_terms:
            if isinstance(t, TrigTerm):
                bad = t.coord >= self.fiber_dim
            else:
                bad = np.any(np.asarray(t.disp)[self.fiber_dim:] != 0)
            if bad:
                raise MapError("fiber terms must displace fiber coordinates only")

    @property
    def dim(self) -> int:
        return self.fiber_dim + self.base.dim

    def compile(self) -> MapSpec:
        n, m = self.fiber_dim, self.base.dim
        A = np.zeros((n + m, n + m), int)
        A[:n, :n] = np.asarray(self.fiber_linear, int).reshape(n, n)
        A[n:, n:] = self.base.A
        terms = list(self.fiber_terms) + [_shift_term(t, n, n + m) for t in self.base.terms]
        return MapSpec(n + m, tuple(map(tuple, A.tolist())), tuple(terms), self.name)

    def eval(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, float))
        n = self.fiber_dim
        Af = np.asarray(self.fiber_linear, float).reshape(n, n)
        fib = xy[:, :n] @ Af.T
        for t in self.fiber_terms:
            if isinstance(t, TrigTerm):
                fib[:, t.coord] += t.value(xy)
            else:
                fib = fib + t.value(xy)[:, :n]
        out = np.hstack([fib, self.base.eval_lift(xy[:, n:])])
        return np.mod(out, 1.0)

    def fiber_map(self, y) -> callable:
        y = np.atleast_1d(np.asarray(y, float))

        def phi(x):
            x = np.atleast_1d(np.asarray(x, float))
            pts = np.hstack([x.reshape(-1, self.fiber_dim), np.broadcast_to(y, (x.size // self.fiber_dim, len(y)))])
            return self.eval(pts)[:, :self.fiber_dim]

        return phi

    def to_json(self) -> dict:
        return {"kind": "skew_product", "fiber_dim": self.fiber_dim,
                "fiber_linear": np.asarray(self.fiber_linear).tolist(),
                "fiber_terms": [t.to_json() for t in self.fiber_terms],
                "base": self.base.to_json(), "name": self.name}

    @classmethod
    def from_json(cls, d: dict) -> "SkewProductSpec":
        return cls(int(d["fiber_dim"]), tuple(map(tuple, d["fiber_linear"])),
                   tuple(term_from_json(t) for t in d["fiber_terms"]), MapSpec.from_json(d["base"]), d.get("name", ""))
