"""Command-line interface to the hyperbolax toolkit.

Every run reads an optional flat ``key = value`` config file, applies
``--set key=value`` overrides, validates the merged parameters, and writes its
CSV outputs plus exactly one ``manifest.json`` into ``--out``. CSV files have
a fixed column order, a header row and a ``constants_version`` column;
complex values take two columns. Floats are written with ``repr`` so equal
runs give byte-identical files.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 acceptance
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .constants import ENV_VAR, ConstantsError, get_constants, parse_flat
from .extension import DegenerateInput, NyquistError

log = logging.getLogger("hyperbolax")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3


class UsageError(ValueError):
    """Invalid command-line input."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ config


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(kind):
    def parse(text):
        return None if str(text).strip().lower() in ("", "none", "auto") else kind(text)

    return parse


# name -> (parser, default)
FUNCTION_KEYS = {
    "preset": (str, "gaussian"),
    "input": (_opt(str), None),
    "center": (_floats, (0.0, 0.0, 0.6)),
    "width": (float, 0.3),
    "region": (_floats, (1.0, 1.0, 0.0, 0.0, 0.0)),
    "grid": (str, "sphere"),
    "grid_radius": (float, 2.0),
    "grid_N": (float, 1.0),
    "n_radial": (int, 6),
    "n_angular": (int, 4),
    "d": (int, 3),
}
LATTICE_KEYS = {
    "R": (float, 2.0),
    "oversample": (float, 1.25),
    "frame": (str, "rest"),
    "max_nodes": (float, 2e5),
    "t_max": (_opt(float), None),
}

SCHEMAS = {
    "regions": {
        "N": (float, 1.0), "r": (float, 1.0), "d": (int, 3), "j": (int, 0), "k": (_ints, (0, 0)),
        "samples": (int, 10_000), "n_max": (int, 64), "r_min": (float, 2.0**-6), "max_rows": (int, 1_000_000),
        "margin": (float, 1e-6),
    },
    "extend": {**FUNCTION_KEYS, **LATTICE_KEYS, "norms": (_floats, (3.6,)), "field": (_bool, True)},
    "inequality": {
        **FUNCTION_KEYS, **LATTICE_KEYS, "p": (float, 3.6), "N": (float, 1.0), "r_min": (float, 2.0**-6),
        "max_regions": (int, 400), "kappa": (_floats, (2.0, 0.125, 0.0, 0.0, 0.0)),
        "kappa_prime": (_floats, (2.0, 0.125, 0.0, 0.0, 8.0)), "s": (float, 2.0), "kind": (str, "decouple"),
    },
    "verify": {},
    "sweep": {"margin": (float, 1.25), "n_max": (int, 64), "r_min": (float, 2.0**-6), "alpha": (int, 2)},
}


def read_config(path, overrides):
    raw = parse_flat(Path(path).read_text()) if path else {}
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = value
    return raw


def typed_config(raw, schema, allow_prefix=()):
    """Parse ``raw`` strings against ``schema``; unknown keys are an error."""
    out = {k: default for k, (_, default) in schema.items()}
    for key, value in raw.items():
        if any(key.startswith(p) for p in allow_prefix):
            continue
        if key not in schema:
            raise UsageError(f"unknown config key {key!r}; expected one of {sorted(schema)}")
        try:
            out[key] = schema[key][0](value)
        except ValueError as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
    return out


def echo(cfg):
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ",".join(fmt(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    return {k: fmt(v) for k, v in sorted(cfg.items())}


# ----------------------------------------------------------------- outputs


def fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, tuple):
        return " ".join(fmt_cell(x) for x in v)
    return "" if v is None else str(v)


def write_csv(path, columns, rows):
    version = get_constants().version
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["constants_version", *columns])
    for row in rows:
        w.writerow([version, *(fmt_cell(row[c]) for c in columns)])
    Path(path).write_text(buf.getvalue())
    return str(path)


class Run:
    """Output directory, timings and the single manifest of one command."""

    def __init__(self, command, out, config):
        self.command = command
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.files, self.timings, self.summary = [], {}, {}
        self._t0 = time.perf_counter()

    def csv(self, name, columns, rows):
        self.files.append(write_csv(self.out / name, columns, rows))

    def timed(self, label, fn, *args, **kw):
        t = time.perf_counter()
        res = fn(*args, **kw)
        self.timings[label] = round(time.perf_counter() - t, 3)
        return res

    def finish(self, status):
        self.timings["total"] = round(time.perf_counter() - self._t0, 3)
        manifest = {
            "tool": "hyperbolax",
            "tool_version": __version__,
            "constants_version": get_constants().version,
            "command": self.command,
            "status": status,
            "config": echo(self.config),
            "files": [Path(f).name for f in self.files],
            "timings": self.timings,
            "summary": self.summary,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# --------------------------------------------------------------- functions


def _region_id(values, d):
    from .regions import RegionId

    if len(values) != d + 2:
        raise UsageError(f"region needs N,r,j followed by {d - 1} cube indices; got {values}")
    return RegionId(values[0], values[1], int(values[2]), tuple(int(x) for x in values[3:]))


def build_function(cfg):
    """The sampled input function described by a config."""
    from .functions import Gaussian, RegionIndicator, cap_grid, load_function, sample, sphere_grid
    from .regions import BaseCubeConfig

    if cfg["input"]:
        return load_function(cfg["input"])
    d = cfg["d"]
    bc = BaseCubeConfig.from_constants()
    if cfg["grid"] == "sphere":
        grid = sphere_grid(d, cfg["grid_radius"], cfg["n_radial"], cfg["n_angular"])
    elif cfg["grid"] == "cap":
        grid = cap_grid(cfg["grid_N"], d, None, cfg["n_radial"], cfg["n_angular"], bc)
    else:
        raise UsageError(f"grid must be 'sphere' or 'cap', got {cfg['grid']!r}")
    if cfg["preset"] == "gaussian":
        if len(cfg["center"]) != d:
            raise UsageError(f"center needs {d} coordinates")
        sym = Gaussian(cfg["center"], cfg["width"])
    elif cfg["preset"] == "region-indicator":
        sym = RegionIndicator(_region_id(cfg["region"], d), bc.ell)
    else:
        raise UsageError(f"preset must be 'gaussian' or 'region-indicator', got {cfg['preset']!r}")
    return sample(sym, grid)


def build_lattice(f, cfg):
    from .extension import default_grid

    return default_grid(f, R=cfg["R"], oversample=cfg["oversample"], frame=cfg["frame"],
                        max_nodes=cfg["max_nodes"], t_max=cfg["t_max"])


# ---------------------------------------------------------------- commands


def cmd_regions(args, cfg, run):
    from . import regions as rg

    d, N, r = cfg["d"], cfg["N"], cfg["r"]
    bc = rg.BaseCubeConfig.from_constants()
    if args.action == "enumerate":
        n = rg.count_regions(N, r, d)
        if n > cfg["max_rows"]:
            raise UsageError(f"level ({N}, {r}) has {n} regions, above max_rows={cfg['max_rows']}")
        rows = []
        for kid in rg.iter_region_ids(N, r, d):
            reg = rg.make_region(kid, bc)
            rows.append({"N": N, "r": r, "j": kid.j, "k": kid.k, "kind": kid.kind,
                         "radial_lo": reg.radial_lo, "radial_hi": reg.radial_hi,
                         **{f"c{i + 1}": float(x) for i, x in enumerate(reg.center.xi)}})
        run.csv("regions.csv", ["N", "r", "j", "k", "kind", "radial_lo", "radial_hi",
                                *[f"c{i + 1}" for i in range(d)]], rows)
        run.summary["regions"] = n
    elif args.action == "genealogy":
        kid = rg.RegionId(N, r, cfg["j"], cfg["k"])
        rel = [("self", kid)]
        if kid.r < kid.N:
            rel.append(("parent", rg.parent(kid)))
        rel += [("child", c) for c in rg.children(kid)]
        rows = [{"relation": name, "N": k.N, "r": k.r, "j": k.j, "k": k.k, "kind": k.kind,
                 "volume": rg.region_volume(rg.make_region(k, bc))} for name, k in rel]
        run.csv("genealogy.csv", ["relation", "N", "r", "j", "k", "kind", "volume"], rows)
        if rg.separable_level(N, r, d):
            run.summary["partners"] = int(rg.partner_counts(N, r, np.array([kid.j]), np.array([kid.k]), d)[0])
        run.summary["children"] = len(rel) - 1 - (kid.r < kid.N)
    elif args.action == "whitney-check":
        rng = np.random.default_rng(args.seed)
        A = rg.make_region(rg.RegionId(N, N, 0, (0,) * (d - 1)), bc)
        xi, eta = rg.sample_region(A, cfg["samples"], rng), rg.sample_region(A, cfg["samples"], rng)
        hits, finest = rg.whitney_hit_counts(xi, eta, N, bc)
        m = cfg["margin"]
        far = (rg.boundary_distance(xi, N, finest, bc) > m) & (rg.boundary_distance(eta, N, finest, bc) > m)
        far &= np.linalg.norm(xi - eta, axis=-1) > m
        rows = [{"N": N, "samples": int(far.sum()), "exact": int(np.sum(hits[far] == 1)),
                 "missed": int(np.sum(hits[far] == 0)), "multiple": int(np.sum(hits[far] > 1))}]
        run.csv("whitney.csv", ["N", "samples", "exact", "missed", "multiple"], rows)
        run.summary.update(rows[0])
        if rows[0]["exact"] != rows[0]["samples"]:
            return EXIT_NUMERIC
    elif args.action == "volume-sweep":
        from .calibration import volume_sweep

        rows = volume_sweep(d, cfg["n_max"], cfg["r_min"], bc)
        run.csv("volumes.csv", ["N", "r", "kind", "min", "max"], rows)
        run.summary["levels"] = len(rows)
    return EXIT_OK


def cmd_extend(args, cfg, run):
    from .extension import extend, norm_Lp_spacetime
    from .functions import norm_L2_hyperboloid

    f = run.timed("sample", build_function, cfg)
    lat = run.timed("lattice", build_lattice, f, cfg)
    F = run.timed("extend", extend, f, lat)
    l2 = norm_L2_hyperboloid(f)
    rows = []
    for p in cfg["norms"]:
        rep = norm_Lp_spacetime(F, p)
        rows.append({"p": p, "norm": rep.value, "l2": l2, "ratio": rep.value / l2,
                     "tail_ratio": rep.tail_ratio, "flagged": int(rep.flagged)})
    run.csv("norms.csv", ["p", "norm", "l2", "ratio", "tail_ratio", "flagged"], rows)
    if cfg["field"]:
        t_ax, x_ax = lat.axes()
        x, t = lat.lab_points(np.arange(lat.size))
        vals = F.values.reshape(-1)
        d = x.shape[1]
        cols = ["t", *[f"x{i + 1}" for i in range(d)], "re", "im"]
        frows = ({"t": t[i], **{f"x{a + 1}": x[i, a] for a in range(d)}, "re": vals[i].real, "im": vals[i].imag}
                 for i in range(lat.size))
        run.csv("field.csv", cols, frows)
    run.summary.update(nodes=f.grid.size, lattice=list(lat.shape), norms={repr(r["p"]): r["norm"] for r in rows})
    return EXIT_OK


def _inequality_rows(kind, f, cfg):
    from .inequalities import ExponentSet, bilinear_report, decoupling_report, refined_report, \
        whitney_reconstruction_check
    from .regions import BaseCubeConfig

    d, p = f.d, cfg["p"]
    lat = build_lattice(f, cfg)
    bc = BaseCubeConfig.from_constants()
    if kind == "decouple":
        reps = [decoupling_report(f, p, grid=lat)]
    elif kind == "refine":
        reps = [refined_report(f, cfg["N"], ExponentSet(d, p), grid=lat, r_min=cfg["r_min"],
                               max_regions=cfg["max_regions"], cfg=bc)]
    elif kind == "bilinear":
        reps = [bilinear_report(f, f, _region_id(cfg["kappa"], d), _region_id(cfg["kappa_prime"], d),
                                cfg["s"], p, grid=lat, cfg=bc)]
    elif kind == "whitney-reconstruct":
        res = whitney_reconstruction_check(f, cfg["N"], p, cfg=bc)
        return [{"kind": kind, "p": p, "lhs": res["lhs"], "rhs": res["rhs"], "ratio": res["lhs"] / res["rhs"],
                 "witness": "", "flags": "" if res["passed"] else "identity-deviation"}]
    else:
        raise UsageError(f"unknown inequality kind {kind!r}")
    return [{"kind": r.kind, "p": p, "lhs": r.lhs, "rhs": r.rhs, "ratio": r.ratio,
             "witness": json.dumps(r.witness, sort_keys=True, default=str), "flags": ";".join(r.flags)}
            for r in reps]


INEQ_COLUMNS = ["kind", "p", "lhs", "rhs", "ratio", "witness", "flags"]


def cmd_inequality(args, cfg, run, raw):
    if args.action != "sweep":
        f = run.timed("sample", build_function, cfg)
        rows = run.timed(args.action, _inequality_rows, args.action, f, cfg)
        run.csv("inequality.csv", INEQ_COLUMNS, rows)
        run.summary["ratios"] = [r["ratio"] for r in rows]
        return EXIT_OK
    # sweep: keys "sweep.<name> = v1 | v2 | ..." span a product lattice over base keys
    axes = {k[len("sweep."):]: [v.strip() for v in val.split("|")] for k, val in raw.items()
            if k.startswith("sweep.")}
    schema = SCHEMAS["inequality"]
    for name in axes:
        if name not in schema:
            raise UsageError(f"cannot sweep unknown key {name!r}")
    names = sorted(axes)
    rows = []
    for combo in product(*(axes[n] for n in names)):
        point = dict(cfg)
        point.update({n: schema[n][0](v) for n, v in zip(names, combo)})
        f = build_function(point)
        for row in _inequality_rows(point["kind"], f, point):
            rows.append({**row, "point": ";".join(f"{n}={v}" for n, v in zip(names, combo))})
    run.csv("inequality.csv", ["point", *INEQ_COLUMNS], rows)
    run.summary["points"] = len(rows)
    return EXIT_OK


def cmd_search(args, cfg_raw, run):
    from .functions import save_function
    from .search import SearchConfig, restart_spread, run_restarts

    mapping = dict(cfg_raw)
    mapping.setdefault("seed", str(args.seed))
    if args.jobs is not None:
        mapping["jobs"] = str(args.jobs)
    try:
        config = SearchConfig.from_mapping(mapping)
    except (TypeError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    run.config = config.to_mapping()
    results = run.timed("search", run_restarts, config)
    trace, recenter = [], []
    for seed, state, _, prov in results:
        trace += [{"seed": seed, "step": i, "quotient": q} for i, q in enumerate(state.quotient_history)]
        for rec in prov:
            recenter.append({k: rec.get(k) for k in RECENTER_COLUMNS})
    run.csv("trace.csv", ["seed", "step", "quotient"], trace)
    run.csv("epochs.csv", RECENTER_COLUMNS, recenter)
    seed, best = max(((s, st) for s, st, _, _ in results), key=lambda x: x[1].quotient)
    path = run.out / "candidate.hxf"
    save_function(best.f, path)
    run.files.append(str(path))
    run.summary.update(best_seed=seed, best_quotient=best.quotient, rescored=best.rescored,
                       spread=restart_spread(results),
                       flags={s: st.flags for s, st, _, _ in results})
    return EXIT_OK


RECENTER_COLUMNS = ["seed", "epoch", "iterations", "quotient", "sector", "N", "r", "region", "nu", "x0", "t0",
                    "mass_before", "mass_after", "quotient_tracked", "quotient_fresh"]


def cmd_verify(args, cfg, run):
    from .acceptance import criterion_summary, run_tier

    def show(res):
        print(res.line(), flush=True)

    results = run_tier(args.tier, only=set(args.only) if args.only else None, progress=show)
    run.csv("verify.csv", ["id", "criterion", "passed", "seconds", "detail"],
            [{"id": r.id, "criterion": r.criterion, "passed": int(r.passed), "seconds": round(r.seconds, 3),
              "detail": r.detail} for r in results])
    crit = criterion_summary(results)
    for k, ok in crit.items():
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}")
    run.summary.update(tier=args.tier, criteria={str(k): v for k, v in crit.items()},
                       failed=[r.id for r in results if not r.passed])
    return EXIT_OK if all(crit.values()) else EXIT_ACCEPTANCE


def aggregate(paths):
    """Concatenate CSV outputs that share a header and a constants version."""
    header, version, rows = None, None, []
    for p in paths:
        with open(p, newline="") as fh:
            rd = csv.reader(fh)
            h = next(rd, None)
            if h is None or h[0] != "constants_version":
                raise UsageError(f"{p}: not a hyperbolax CSV")
            if header is not None and h != header:
                raise UsageError(f"{p}: columns differ from {paths[0]}")
            header = h
            for row in rd:
                if version is not None and row[0] != version:
                    raise UsageError(f"{p}: constants version {row[0]} mixed with {version}")
                version = row[0]
                rows.append(row)
    return header, rows


def cmd_sweep(args, cfg, run):
    if args.action == "aggregate":
        if not args.files:
            raise UsageError("aggregate needs at least one CSV file")
        header, rows = aggregate(args.files)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        path = run.out / "aggregate.csv"
        path.write_text(buf.getvalue())
        run.files.append(str(path))
        run.summary["rows"] = len(rows)
        return EXIT_OK
    from .calibration import propose

    values = run.timed("calibrate", propose, cfg["margin"], cfg["n_max"], cfg["r_min"], cfg["alpha"], args.seed)
    run.csv("proposed.csv", ["key", "value"], [{"key": k, "value": float(v)} for k, v in values.items()])
    run.summary.update({k: float(v) for k, v in values.items()})
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    ap = _Parser(prog="hyperbolax", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"hyperbolax {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("--out", default="hyperbolax-out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=None, help="cap on worker processes")
    common.add_argument("--constants", help=f"constants file (default: ${ENV_VAR} or the packaged file)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("regions", parents=[common], help="dyadic region geometry")
    p.add_argument("action", choices=["enumerate", "genealogy", "whitney-check", "volume-sweep"])
    p = sub.add_parser("extend", parents=[common], help="extension field and norms of a function")
    p = sub.add_parser("inequality", parents=[common], help="inequality reports")
    p.add_argument("action", choices=["decouple", "bilinear", "refine", "whitney-reconstruct", "sweep"])
    p = sub.add_parser("search", parents=[common], help="extremizer search")
    p = sub.add_parser("verify", parents=[common], help="acceptance suite")
    p.add_argument("tier", nargs="?", default="quick", choices=["quick", "full"])
    p.add_argument("--only", nargs="*", help="restrict to these check IDs")
    p = sub.add_parser("sweep", parents=[common], help="constant calibration and CSV aggregation")
    p.add_argument("action", choices=["calibrate", "aggregate"])
    p.add_argument("files", nargs="*")
    return ap


def dispatch(args, run):
    raw = read_config(args.config, args.set)
    run.config = raw
    if args.command == "search":
        return cmd_search(args, raw, run)
    allow = ("sweep.",) if args.command == "inequality" else ()
    cfg = typed_config(raw, SCHEMAS[args.command], allow)
    run.config = cfg
    if args.command == "inequality":
        return cmd_inequality(args, cfg, run, raw)
    fn = {"regions": cmd_regions, "extend": cmd_extend, "verify": cmd_verify, "sweep": cmd_sweep}[args.command]
    return fn(args, cfg, run)


STATUS = {EXIT_OK: "ok", EXIT_INVALID: "invalid", EXIT_NUMERIC: "numerical-failure",
          EXIT_ACCEPTANCE: "acceptance-failure"}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"hyperbolax: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    # the environment carries the constants path into worker processes;
    # restore it so in-process callers are not affected
    saved = os.environ.get(ENV_VAR)
    if args.constants:
        os.environ[ENV_VAR] = args.constants
    try:
        return _run(args)
    finally:
        if saved is None:
            os.environ.pop(ENV_VAR, None)
        else:
            os.environ[ENV_VAR] = saved


def _run(args):
    try:
        get_constants()
    except ConstantsError as exc:
        print(f"hyperbolax: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run = Run(args.command, args.out, {})
    try:
        code = dispatch(args, run)
    except (NyquistError, DegenerateInput, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hyperbolax: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (ConstantsError, UsageError, ValueError, OSError) as exc:
        print(f"hyperbolax: error: {exc}", file=sys.stderr)
        code = EXIT_INVALID
    run.finish(STATUS[code])
    return code


if __name__ == "__main__":
    sys.exit(main())
