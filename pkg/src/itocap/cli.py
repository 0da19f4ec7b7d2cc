"""Command-line runner: ``itocap <command> [config.json] [--seed N] [--workers N] [--out PATH]``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration does not match
its schema (the offending field is printed), 3 numerical failure (with
diagnostics), 4 a value outside an operation's domain.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, bounds, capacity, config, geometry
from . import montecarlo as mc
from .errors import DomainError, NumericalError, SchemaError

EXIT_OK, EXIT_FAILURE, EXIT_SCHEMA, EXIT_NUMERICAL, EXIT_DOMAIN = 0, 1, 2, 3, 4

MC_COMMANDS = {"hit", "fk", "sweep", "xcheck"}
COMMANDS = ("capacity", "hit", "fk", "sweep", "carleman", "lower", "series", "phi", "content", "gen", "xcheck")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(doc) -> str:
    return json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n"


class Context:
    """Parsed command line plus the validated configuration."""

    def __init__(self, args, doc, base_dir):
        self.args = args
        self.doc = doc
        self.base_dir = base_dir

    def set(self, required=True):
        if "set" not in self.doc:
            if required:
                raise SchemaError("'set' is a required property for this command", "set")
            return None
        return config.set_from_json(self.doc["set"], self.base_dir)

    def sim(self):
        return config.sim_from_json(self.doc.get("sim"), self.args.seed, self.args.workers)

    def echo(self):
        doc = dict(self.doc)
        if self.args.command in MC_COMMANDS:
            sim = dict(doc.get("sim", {}))
            if self.args.seed is not None:
                sim["seed"] = self.args.seed
            doc["sim"] = sim
        else:
            doc.pop("sim", None)
        for key in ("T", "suite", "kind", "N", "d", "T_list", "thickness"):
            value = getattr(self.args, key, None)
            if value is not None:
                doc.setdefault("cli", {})[key] = value
        return doc


# --------------------------------------------------------------------------
# commands


def cmd_capacity(ctx):
    s = ctx.set()
    spec = config.kernel_from_json(ctx.doc.get("kernel"), s.dimension)
    solver = ctx.doc.get("solver", {})
    res = capacity.capacity_lp(s, spec, solver.get("resolution", 800), solver.get("second", True),
                               solver.get("spacing"))
    out = {"capacity": res.to_json(include_measure=solver.get("include_measure", False))}
    if solver.get("bounds", True):
        out["bounds"] = capacity.capacity_bounds(s, spec, solver.get("resolution", 800), result=res).to_json()
    return out


def _vector(doc, key, d, default):
    v = doc.get(key)
    if v is None:
        return np.asarray(default, float)
    if isinstance(v, list) and len(v) != d:
        raise SchemaError(f"expected {d} coordinates", key)
    return v if isinstance(v, str) else np.asarray(v, float)


def cmd_hit(ctx):
    s = ctx.set()
    d = s.dimension
    cfg = ctx.sim()
    x0 = _vector(ctx.doc, "x0", d, np.zeros(d))
    if "angles" in ctx.doc:
        angles = ctx.doc["angles"]
        if isinstance(angles, int):
            angles = 2 * np.pi * np.arange(angles) / angles
        ests = mc.hit_probability_angles(s, angles, cfg, x0)
        best = max(ests, key=lambda e: e.value)
        return {"angles": [e.extra["angle"] for e in ests], "values": [e.value for e in ests],
                "std_errors": [e.std_error for e in ests], "sup": best.value, "sup_std_error": best.std_error,
                "sup_angle": best.extra["angle"], "config": cfg.echo()}
    theta = _vector(ctx.doc, "theta", d, np.eye(d)[0])
    if "trace" in ctx.doc:
        cfg = mc._with(cfg, keep_paths=True)
    est = mc.hit_probability(s, x0, theta, cfg)
    if est.paths is not None and "trace" in ctx.doc:
        est.paths.write_trace(ctx.base_dir / ctx.doc["trace"])
    return est.to_json()


def cmd_fk(ctx):
    V = config.potential_from_json(ctx.doc.get("potential"), ctx.base_dir)
    d = ctx.doc.get("dimension") or V.dimension
    if d is None:
        raise SchemaError("give 'dimension' when the potential has no set pieces", "dimension")
    cfg = ctx.sim()
    x0 = _vector(ctx.doc, "x0", d, np.zeros(d))
    mode = _vector(ctx.doc, "mode", d, np.eye(d)[0]) if ctx.doc.get("mode") != "sphere" else "sphere"
    est = mc.feynman_kac(V, x0, mode, cfg, d)
    out = {"feynman_kac": est.to_json(), "c01_rhs": bounds.c01_rhs(V, d),
           "flags": [bounds.UNSPECIFIED]}
    if "weight" in ctx.doc:
        f = config.potential_from_json(ctx.doc["weight"], ctx.base_dir)
        out["th2_rhs"] = bounds.th2_rhs(V, f, cfg, d).to_json()
    return out


def cmd_sweep(ctx):
    s = ctx.set()
    return mc.sweeping_mass(s, ctx.sim(), ctx.doc.get("rho", 20.0)).to_json()


def cmd_carleman(ctx):
    c = ctx.doc.get("carleman")
    if c is None:
        raise SchemaError("'carleman' is a required property for this command", "carleman")
    lam = config.profile_from_json(c["lambda"])
    res = bounds.carleman_upper(lam, c["R"], c["area"])
    return {"inputs": c, **res.to_json()}


def cmd_lower(ctx):
    c = ctx.doc.get("lower")
    if c is None:
        raise SchemaError("'lower' is a required property for this command", "lower")
    base = config.section_from_json(c["base"])
    k = config.profile_from_json(c["k"])
    value = bounds.lower_bound_exponent(base, k, c["delta"], c["R"])
    return {"inputs": c, "exponent": value, "eigenvalue": bounds.principal_eigenvalue(base),
            "flags": [bounds.UNSPECIFIED]}


def cmd_series(ctx):
    c = ctx.doc.get("series")
    if c is None:
        raise SchemaError("'series' is a required property for this command", "series")
    profiles = [config.profile_from_json(p) for p in c["profiles"]]
    v = bounds.series_criterion(profiles, c["q"], c.get("eps", 0.1), c.get("N", 500), c.get("n_min"))
    return {"inputs": c, **v.to_json()}


def cmd_phi(ctx):
    s = ctx.set()
    c = ctx.doc.get("phi", {})
    angles = c.get("angles", 360)
    if isinstance(angles, int):
        angles = 2 * np.pi * np.arange(angles) / angles
    angles = np.asarray(angles, float)
    series = bounds.PhiSeries.from_set(s, c.get("n0", 0), c.get("n_max"))
    values, tail = bounds.phi_theta(series, angles)
    return {"theta": angles, "phi": values, "tail": tail, "cells": len(series.contents)}


def cmd_content(ctx):
    s = ctx.set()
    theta = ctx.doc.get("kernel", {}).get("theta")
    rep = geometry.hausdorff_content(s, None if theta is None else np.asarray(theta, float))
    return {"content": rep.content, "direction": rep.direction, "pieces": len(rep.pieces),
            "cover": [{"scale": p.scale, "corner": p.world_corner} for p in rep.pieces]}


def cmd_gen(ctx):
    a = ctx.args
    if a.kind is None:
        s = ctx.set()
    else:
        doc = {"generator": a.kind}
        for key in ("N", "d", "T", "T_list", "thickness"):
            if getattr(a, key) is not None:
                doc[key] = getattr(a, key)
        s = config.set_from_json(doc)
    return s.to_json()


def _xcheck_trii(ctx, T):
    d = 3
    T2 = T * T
    slab = geometry.SetSpec(d, (geometry.Box((T2, 0.0, 0.0), (T2, T, T)),), f"slab T={T}")
    spec = capacity.KernelSpec(d)
    solver = ctx.doc.get("solver", {})
    lp = capacity.capacity_lp(slab, spec, solver.get("resolution", 800), second=False)
    cfg = ctx.sim()
    on = mc.hit_probability(slab, np.zeros(d), np.eye(d)[0], cfg)
    shift = ctx.doc.get("xcheck", {}).get("shift", 3)
    off_set = slab.translated((0.0, shift * T, 0.0))
    off = mc.hit_probability(off_set, np.zeros(d), np.eye(d)[0], cfg)
    gauss = math.exp(-shift**2 / (2 + math.sqrt(4 + shift**2 / T2)))
    ratio = on.value * T2 / lp.capacity
    off_ratio = off.value / on.value if on.value > 0 else float("nan")
    return {"suite": "trii", "T": T, "omega": on.to_json(), "capacity": lp.capacity, "ratio": ratio,
            "ratio_bracket": [0.2, 5.0], "ratio_in_bracket": 0.2 <= ratio <= 5.0,
            "off_axis": {"shift": shift, "omega": off.to_json(), "ratio_to_on_axis": off_ratio,
                         "gaussian_factor": gauss, "within_three_times": off_ratio <= 3 * gauss}}


def _xcheck_sweep(ctx, T):
    ball = geometry.SetSpec(3, (geometry.Ball((5.0, 0.0, 0.0), 1.0),), "ball")
    spec = capacity.KernelSpec(3)
    lp = capacity.capacity_lp(ball, spec, ctx.doc.get("solver", {}).get("resolution", 800), second=False)
    est = mc.sweeping_mass(ball, ctx.sim(), ctx.doc.get("rho", 20.0))
    return {"suite": "sweep", "sweeping_mass": est.to_json(), "capacity": lp.capacity,
            "relative_difference": abs(est.value - lp.capacity) / lp.capacity}


def _xcheck_carleman(ctx, T):
    x = ctx.doc.get("xcheck", {})
    w = x.get("half_width", 5.0)
    R = x.get("R", 40.0)
    lam = (math.pi / (2 * w)) ** 2
    est = mc.harmonic_measure_tube(w, R, ctx.sim(), d=2)
    bound = bounds.carleman_upper(bounds.ProfileSpec.constant(lam), R, 2 * w)
    rate_mc = math.log(est.value) / R if est.value > 0 else float("-inf")
    rate = 1 - math.sqrt(lam + 1)
    return {"suite": "carleman", "omega": est.to_json(), "rate_mc": rate_mc, "rate_bound": rate,
            "relative_rate_error": abs(rate_mc - rate) / abs(rate), "bound": bound.to_json(),
            "below_bound2": est.value <= bound.bound2}


def cmd_xcheck(ctx):
    suite = ctx.args.suite or ctx.doc.get("xcheck", {}).get("suite")
    if suite is None:
        raise SchemaError("name a suite: trii, sweep or carleman", "xcheck/suite")
    T = ctx.args.T or ctx.doc.get("xcheck", {}).get("T", 8)
    runner = {"trii": _xcheck_trii, "sweep": _xcheck_sweep, "carleman": _xcheck_carleman}[suite]
    return runner(ctx, T)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# --------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the Monte Carlo seed")
    common.add_argument("--workers", type=int, help="worker processes for Monte Carlo (default $ITOCAP_WORKERS or 1)")
    common.add_argument("--out", help="output file (default: standard output)")
    parser = argparse.ArgumentParser(prog="itocap", description="Modified capacities, hitting probabilities and bounds.")
    parser.add_argument("--version", action="version", version=f"itocap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        if name == "gen":
            p.add_argument("--kind", choices=["fractal_ET", "annular_example", "full_slab"])
            p.add_argument("--N", type=int)
            p.add_argument("--d", type=int, choices=[2, 3])
            p.add_argument("--T", type=float)
            p.add_argument("--T-list", dest="T_list", type=float, nargs="+")
            p.add_argument("--thickness", type=float)
        elif name == "xcheck":
            p.add_argument("suite", nargs="?", choices=["trii", "sweep", "carleman"])
            p.add_argument("--T", type=float)
        p.add_argument("config", nargs="?", help="JSON configuration file")
    return parser


HELP = {
    "capacity": "solve for the capacity and equilibrium measure, with bounds",
    "hit": "Monte Carlo hitting probability (one direction or an angle sweep)",
    "fk": "Feynman-Kac amplitude and the spectral lower-bound functionals",
    "sweep": "mass of the sweeping measure by Monte Carlo",
    "carleman": "eigenvalue-profile upper bounds for a tube",
    "lower": "exponent of the expanding-tube lower bound",
    "series": "convergence verdict for the non-hitting series",
    "phi": "angular test series over a grid of directions",
    "content": "anisotropic Hausdorff content by a dyadic cover",
    "gen": "emit a generated set (fractal, annular example, slab)",
    "xcheck": "paired Monte Carlo versus LP or bound checks",
}


def _write(out, text):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _phi_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "phi", "tail"])
    for th, ph in zip(result["theta"], result["phi"]):
        w.writerow([repr(float(th)), repr(float(ph)), repr(float(result["tail"]))])
    return buf.getvalue()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            path = Path(args.config)
            doc = config.load_config(path)
            base_dir = path.parent
        else:
            if args.command not in ("gen", "xcheck"):
                raise SchemaError("this command needs a configuration file", "<config>")
            doc, base_dir = {}, Path.cwd()
        if doc.get("command") not in (None, args.command):
            raise SchemaError(f"config is for '{doc['command']}', not '{args.command}'", "command")
        if args.workers is not None and args.workers < 1:
            raise DomainError("--workers must be at least 1")
        ctx = Context(args, doc, base_dir)
        result = HANDLERS[args.command](ctx)
        if args.command == "gen":
            _write(args.out, _dump(result))
            return EXIT_OK
        if args.command == "phi" and args.out and args.out.endswith(".csv"):
            _write(args.out, _phi_csv(result))
            return EXIT_OK
        echo = ctx.echo()
        record = {"command": args.command, "version": __version__, "config": echo,
                  "content_hash": config.content_hash(_plain(echo)), "result": result}
        _write(args.out, _dump(record))
        return EXIT_OK
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        print(_dump({"diagnostics": exc.diagnostics}), file=sys.stderr, end="")
        return EXIT_NUMERICAL
    except DomainError as exc:
        print(f"invalid value: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
