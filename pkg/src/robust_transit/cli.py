"""Command-line entry point: runs checkers and writes JSON reports and CSV plot data."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__
from .certificate import FAIL, INCONCLUSIVE, Certificate, dumps
from .cones import ConeFamily, check_cone_invariance, check_domination
from .geometry import BoxRegion
from .maps import MapError, MapSpec, random_perturbation
from .regions import (GridCover, RegionError, check_expanding_on, check_H2_arc_property,
                      check_H3_surjectivity_off_U1, check_volume_expanding, compute_lambda_cover,
                      default_delta0)
from .shadowing import PseudoOrbit, ShadowingError, shadow
from .transitivity import (build_transition_graph, diameter_growth, irg_pipeline, preorbit_density,
                           slab_m, strongly_connected)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class InputError(click.UsageError):
    """Malformed input; click maps it to exit code 2."""


@dataclass
class RunConfig:
    map_source: str
    resolution: int | None = None
    base: int | None = None
    depth: int | None = None
    horizon: int | None = None
    tolerances: dict = field(default_factory=dict)
    threads: int = 1
    out: str | None = None
    rigor: bool = False
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution is not None and self.base is not None:
            r = self.resolution
            while r % self.base == 0 and r > 1:
                r //= self.base
            if r != 1:
                raise InputError(f"resolution {self.resolution} is not a power of {self.base}")
        for k, v in self.tolerances.items():
            if v is not None and not v > 0:
                raise InputError(f"tolerance {k} must be positive")


@dataclass
class Report:
    command: str
    config: RunConfig
    certificates: list[Certificate]
    input_hashes: dict
    extra: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        verdicts = {c.verdict for c in self.certificates}
        if FAIL in verdicts:
            return EXIT_FAIL
        if INCONCLUSIVE in verdicts:
            return EXIT_INCONCLUSIVE
        return EXIT_PASS

    def to_json(self, timing: bool = True) -> dict:
        d = {"tool": "robust_transit", "version": __version__, "command": self.command,
             "config": asdict(self.config), "input_hashes": self.input_hashes,
             "certificates": [c.to_json(timing) for c in self.certificates], "extra": self.extra}
        if timing:
            d["timing"] = {"total": sum(c.elapsed for c in self.certificates)}
        return d


def thread_count(option: int | None) -> int:
    env = os.environ.get("ROBUST_TRANSIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"ROBUST_TRANSIT_THREADS must be an integer, got {env!r}")
    return max(1, option or 1)


def _read_json(source: str, hashes: dict):
    if source.lstrip().startswith(("{", "[")):
        text = source
        hashes["inline:" + hashlib.sha256(text.encode()).hexdigest()[:12]] = hashlib.sha256(text.encode()).hexdigest()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {source}: {exc}")
        hashes[source] = hashlib.sha256(text.encode()).hexdigest()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")


def load_map(source: str, hashes: dict) -> tuple[MapSpec, dict]:
    """Map from a file or inline JSON; a built example instance also yields its regions and constants."""
    d = _read_json(source, hashes)
    inst = {}
    if isinstance(d, dict) and "map" in d and "linear" not in d:
        inst = d
        d = d["map"]
    try:
        f = MapSpec.from_json(d)
    except (MapError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{source}: malformed map spec: {exc}")
    ctx = {"constants": inst.get("constants", {})}
    for key in ("U0", "U1", "U2"):
        if key in inst:
            ctx[key] = GridCover.from_json(inst[key], dim=f.dim)
    return f, ctx


def load_region(source: str, hashes: dict, dim: int, res: int | None = None) -> GridCover:
    d = _read_json(source, hashes)
    try:
        return GridCover.from_json(d, res=res, dim=dim)
    except (RegionError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{source}: malformed region: {exc}")


def emit(report: Report, quiet: bool = False) -> None:
    if not quiet:
        for c in report.certificates:
            click.echo(c.line())
    if report.config.out:
        path = Path(report.config.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(report.to_json(), indent=2) + "\n")
    sys.exit(report.exit_code)


def _csv(path: str | None, header: list[str], rows) -> None:
    if not path:
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _box(text: str, dim: int) -> BoxRegion:
    try:
        v = [float(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"box must be 2*dim comma-separated numbers, got {text!r}")
    if len(v) != 2 * dim:
        raise InputError(f"box needs {2 * dim} numbers (lo then hi), got {len(v)}")
    return BoxRegion(tuple(v[:dim]), tuple(v[dim:]), fundamental=False)


map_option = click.option("--map", "map_src", required=True, help="map JSON file, built example, or inline JSON")
out_option = click.option("--out", default=None, help="write the JSON report here")
seed_option = click.option("--seed", default=0, show_default=True, type=int, help="random seed (recorded in the report)")
threads_option = click.option("--threads", default=None, type=int, help="worker pool size (ROBUST_TRANSIT_THREADS overrides)")


@click.group()
@click.version_option(__version__)
def main():
    """Numerical certificates for robustly transitive endomorphisms of the torus."""


def _hypothesis_suite(f: MapSpec, ctx: dict, sigma: float, lam: float, res: int, grid_step: float,
                      horizon: int, samples: int, seed: int, rigor: bool, cones: ConeFamily | None = None,
                      cone_lambda: float | None = None) -> list[Certificate]:
    certs = [check_volume_expanding(f, grid_step, sigma, rigor),
             check_expanding_on(f, ctx.get("U0"), lam, res, rigor)]
    U0 = ctx.get("U0")
    if U0 is not None:
        U1 = ctx.get("U1") or U0.dilate(1)
        delta0 = ctx.get("constants", {}).get("delta0") or default_delta0(U0)
        certs.append(check_H2_arc_property(f, U0, U1, delta0, horizon, samples, seed))
        certs.append(check_H3_surjectivity_off_U1(f, U1, seed=seed))
    if cones is not None:
        certs.append(check_cone_invariance(f, cones, grid_step))
        if cone_lambda is not None:
            certs.append(check_domination(f, cones, cone_lambda, grid_step))
    return certs


@main.command()
@map_option
@click.option("--u0", default=None, help="region U0 (JSON with 'cells' or 'boxes')")
@click.option("--sigma", default=1.5, show_default=True, type=float)
@click.option("--lambda", "lam", default=1.5, show_default=True, type=float)
@click.option("--res", default=64, show_default=True, type=int)
@click.option("--grid-step", default=1 / 128, show_default=True, type=float)
@click.option("--horizon", default=100, show_default=True, type=int)
@click.option("--samples", default=50, show_default=True, type=int)
@click.option("--cones", "cones_src", default=None, help="cone family JSON")
@click.option("--cone-lambda", default=None, type=float)
@click.option("--rigor", is_flag=True, help="interval enclosures instead of sampling")
@seed_option
@out_option
def check(map_src, u0, sigma, lam, res, grid_step, horizon, samples, cones_src, cone_lambda, rigor, seed, out):
    """Run every applicable hypothesis checker."""
    hashes = {}
    f, ctx = load_map(map_src, hashes)
    if u0:
        ctx["U0"] = load_region(u0, hashes, f.dim, res)
    res = ctx["U0"].res if ctx.get("U0") is not None else res
    cones = ConeFamily.from_json(_read_json(cones_src, hashes)) if cones_src else None
    cfg = RunConfig(map_src, res, None, None, horizon, {"sigma": sigma, "lambda": lam, "grid_step": grid_step},
                    1, out, rigor, seed, {"samples": samples, "u0": u0, "cones": cones_src, "cone_lambda": cone_lambda})
    try:
        certs = _hypothesis_suite(f, ctx, sigma, lam, res, grid_step, horizon, samples, seed, rigor, cones, cone_lambda)
    except RegionError as exc:
        raise InputError(str(exc))
    emit(Report("check", cfg, certs, hashes))


@main.command("lambda")
@map_option
@click.option("--u0", required=True, help="region U0 to avoid")
@click.option("--depth", required=True, type=int)
@click.option("--res", default=None, type=int, help="resolution when U0 is given as boxes")
@click.option("--csv", "csv_path", default=None, help="occupancy grid: cell index, depth survived")
@out_option
def lambda_cmd(map_src, u0, depth, res, csv_path, out):
    """Outer cover of the points whose orbit avoids U0 for DEPTH steps."""
    hashes = {}
    f, _ = load_map(map_src, hashes)
    U = load_region(u0, hashes, f.dim, res)
    cfg = RunConfig(map_src, U.res, None, depth, None, {}, 1, out, False, 0, {"u0": u0})
    lc, levels = compute_lambda_cover(f, U, depth, Path(u0).stem if not u0.lstrip().startswith("{") else "U0",
                                      keep_levels=True)
    survived = np.full((U.res,) * f.dim, -1, int)
    for k, lev in enumerate(levels):
        survived[lev.mask] = k
    idx = np.argwhere(survived >= 0)
    _csv(csv_path, [*"ijk"[:f.dim], "depth_survived"], [[*map(int, c), int(survived[tuple(c)])] for c in idx])
    cert = Certificate("lambda_cover", "pass" if lc.cover.count > 0 else "fail", lc.fraction if lc.cover.count else -1.0,
                       U.res, {"depth": depth}, 0.0,
                       {"cells": lc.cover.count, "fraction": lc.fraction, "counts": list(lc.counts),
                        "saturated_at": lc.saturated_at, "coarse_cells": lc.coarse_cells})
    click.echo(f"cells={lc.cover.count} res={U.res} fraction={lc.fraction:.10g}")
    emit(Report("lambda", cfg, [cert], hashes))


@main.command("shadow")
@map_option
@click.option("--orbit", required=True, help="pseudo-orbit JSON: {'delta', 'points'} or a list of points")
@click.option("--lambda", "lam", default=None, type=float, help="expansion constant (default: measured)")
@out_option
def shadow_cmd(map_src, orbit, lam, out):
    """Shadow a finite pseudo-orbit and compare eta with delta*lambda/(lambda-1)."""
    hashes = {}
    f, _ = load_map(map_src, hashes)
    try:
        po = PseudoOrbit.from_json(_read_json(orbit, hashes), f)
        r = shadow(f, po, lam=lam)
    except ShadowingError as exc:
        cert = Certificate("shadowing", FAIL, -1.0, None, {"orbit": orbit}, 0.0, {"error": str(exc)})
    else:
        ok = r.eta <= r.bound + 1e-9
        cert = Certificate("shadowing", "pass" if ok else "fail", (r.bound + 1e-9 - r.eta) if ok else r.bound - r.eta,
                           len(po), {"delta": po.delta, "lambda": lam}, 0.0,
                           {"eta": r.eta, "bound": r.bound, "tail": r.tail, "orbit": r.orbit.tolist()})
    cfg = RunConfig(map_src, None, None, None, None, {}, 1, out, False, 0, {"orbit": orbit})
    emit(Report("shadow", cfg, [cert], hashes))


@main.command()
@map_option
@click.option("--res", default=64, show_default=True, type=int)
@click.option("--point", default=None, help="comma-separated point for the pre-orbit density test")
@click.option("--depth", default=8, show_default=True, type=int)
@click.option("--eps", default=0.05, show_default=True, type=float)
@click.option("--graph-csv", default=None, help="write the transition graph edges")
@out_option
def transit(map_src, res, point, depth, eps, graph_csv, out):
    """Transition-graph connectivity and pre-orbit density."""
    hashes = {}
    f, _ = load_map(map_src, hashes)
    cfg = RunConfig(map_src, res, None, depth, None, {"eps": eps}, 1, out, False, 0, {"point": point})
    g = build_transition_graph(f, res)
    if graph_csv:
        g.write_csv(graph_csv)
    certs = [strongly_connected(g)]
    if point:
        x = np.array([float(t) for t in point.split(",")])
        if len(x) != f.dim:
            raise InputError(f"point needs {f.dim} coordinates")
        certs.append(preorbit_density(f, x, depth, eps))
    emit(Report("transit", cfg, certs, hashes))


@main.command()
@map_option
@click.option("--u0", default=None, help="region U0 (defaults to the built example's)")
@click.option("--box", "boxes", multiple=True, required=True, help="start box lo..,hi.. (repeatable)")
@click.option("--lambda-prime", default=1.5, show_default=True, type=float)
@click.option("--delta0", default=None, type=float)
@click.option("--eps", default=0.01, show_default=True, type=float)
@click.option("--max-steps", default=64, show_default=True, type=int)
@click.option("--csv", "csv_path", default=None, help="diameter growth curves: box, step, diameter")
@out_option
def irg(map_src, u0, boxes, lambda_prime, delta0, eps, max_steps, csv_path, out):
    """Five-stage pipeline from a start box to a ball of radius eps."""
    hashes = {}
    f, ctx = load_map(map_src, hashes)
    if u0:
        ctx["U0"] = load_region(u0, hashes, f.dim)
    U0 = ctx.get("U0")
    if U0 is None:
        raise InputError("irg needs U0 (--u0 or a built example)")
    U1 = ctx.get("U1") or U0.dilate(1)
    U2 = ctx.get("U2") or U1.dilate(1)
    delta0 = delta0 or ctx["constants"].get("delta0") or default_delta0(U0)
    cfg = RunConfig(map_src, U0.res, None, None, None, {"eps": eps}, 1, out, False, 0,
                    {"boxes": list(boxes), "lambda_prime": lambda_prime, "delta0": delta0})
    certs, rows, reports = [], [], []
    for b, text in enumerate(boxes):
        V = _box(text, f.dim)
        _, _, diams = diameter_growth(f, V, slab_m(f.dim), max_steps)
        rows += [[b, k, d] for k, d in enumerate(diams)]
        rep = irg_pipeline(f, V, U0, U1, U2, delta0, lambda_prime, eps, max_steps=max_steps)
        reports.append(rep.to_json())
        certs.append(Certificate(f"irg_box_{b}", "pass" if rep.completed else "fail",
                                 1.0 if rep.completed else -1.0, U0.res, {"box": text}, 0.0,
                                 {"failed_stage": rep.failed_stage, "m0": rep.m0, "N": rep.N}))
    _csv(csv_path, ["box", "step", "diameter"], rows)
    emit(Report("irg", cfg, certs, hashes, {"pipelines": reports}))


@main.command()
@map_option
@click.option("--norm", default=1e-3, show_default=True, type=float)
@click.option("--trials", default=20, show_default=True, type=int)
@click.option("--sigma", default=1.5, show_default=True, type=float)
@click.option("--lambda", "lam", default=None, type=float, help="default: the built example's constant or 1.5")
@click.option("--horizon", default=40, show_default=True, type=int)
@click.option("--samples", default=8, show_default=True, type=int)
@click.option("--csv", "csv_path", default=None, help="table: trial, norm, one verdict column per check")
@seed_option
@threads_option
@out_option
def perturb(map_src, norm, trials, sigma, lam, horizon, samples, csv_path, seed, threads, out):
    """Re-run the checks on random trigonometric perturbations of C^1 size NORM."""
    hashes = {}
    f, ctx = load_map(map_src, hashes)
    if not norm > 0:
        raise InputError("norm must be positive")
    consts = ctx["constants"]
    lam = lam or consts.get("lambda", 1.5)
    sigma = consts.get("sigma", sigma)
    res = ctx["U0"].res if ctx.get("U0") is not None else 64
    nthreads = thread_count(threads)
    cfg = RunConfig(map_src, res, None, None, horizon, {"norm": norm, "sigma": sigma, "lambda": lam},
                    nthreads, out, False, seed, {"trials": trials, "samples": samples})
    rng = np.random.default_rng(seed)
    maps = [random_perturbation(f, norm, rng) for _ in range(trials)]

    def run(g):
        return _hypothesis_suite(g, ctx, sigma, lam, res, 1 / 128, horizon, samples, seed, False)

    base = run(f)
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        results = list(pool.map(run, maps))
    names = [c.check_name for c in base]
    rows = [[k, norm, *[c.verdict for c in certs]] for k, certs in enumerate(results)]
    _csv(csv_path, ["trial", "norm", *names], rows)
    all_pass = sum(all(c.passed for c in certs) for certs in results)
    click.echo(f"all-pass rows: {all_pass}/{trials}")
    certs = list(base)
    for k, cs in enumerate(results):
        for c in cs:
            c.check_name = f"trial{k}:{c.check_name}"
        certs += cs
    emit(Report("perturb", cfg, certs, hashes, {"all_pass_rows": all_pass,
                                                "maps": [g.to_json() for g in maps]}))


@main.command()
@click.argument("name", type=click.Choice(["example1", "example2", "example3", "example4"]))
@click.option("--param", "params", multiple=True, help="builder keyword as key=value (JSON value)")
@click.option("--write", "write_path", default=None, help="write the built instance JSON here")
@click.option("--verify/--no-verify", default=True, show_default=True)
@click.option("--claim", "claims", multiple=True, help="only these claims")
@out_option
def example(name, params, write_path, verify, claims, out):
    """Build a gallery instance and run its claim checkers."""
    from .gallery import BUILDERS, BuildError

    kw = {}
    for p in params:
        if "=" not in p:
            raise InputError(f"--param needs key=value, got {p!r}")
        k, v = p.split("=", 1)
        try:
            kw[k] = json.loads(v)
        except json.JSONDecodeError:
            kw[k] = v
    try:
        inst = BUILDERS[name](**kw)
    except BuildError as exc:
        click.echo(f"build refused: {exc}", err=True)
        sys.exit(EXIT_FAIL)
    except TypeError as exc:
        raise InputError(str(exc))
    if write_path:
        Path(write_path).parent.mkdir(parents=True, exist_ok=True)
        Path(write_path).write_text(dumps(inst.to_json(), indent=2) + "\n")
    certs = inst.verify(claims or None) if verify else []
    cfg = RunConfig(name, inst.params.get("res"), None, None, None, {}, 1, out, False, 0, {"params": kw})
    emit(Report("example", cfg, certs, {}, {"instance": inst.to_json() if out else None}))


if __name__ == "__main__":
    main()
