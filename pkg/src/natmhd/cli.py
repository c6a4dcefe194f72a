"""natmhd command line.

Exit codes: 0 success, 1 a check failed, 2 bad config or arguments, 3 I/O error.
Reports are JSON with sorted keys; artifacts are written atomically and
listed with their sha256 in ``manifest.json`` next to them.
"""

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__, _kernels
from .config import (
    ConfigError,
    build_solution,
    dump_config,
    load_config,
    number,
    pair,
    parse_config,
    read_text,
    state_function,
    triple,
)
from .diffgeo import DomainError
from .expr import ExpressionError
from .geometry import FMT, GeometryError, atomic_write

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
TWO_PI = 2 * math.pi


class UsageError(Exception):
    pass


def _json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (tuple, set)):
        return list(o)
    return str(o)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_artifacts(files, command):
    """Write ``{path: text}`` atomically, then update the manifest in each directory."""
    by_dir = {}
    for path, text in files.items():
        atomic_write(path, text)
        by_dir.setdefault(os.path.dirname(os.path.abspath(path)), []).append(path)
    for d, paths in sorted(by_dir.items()):
        mpath = os.path.join(d, "manifest.json")
        entries = {}
        if os.path.exists(mpath):
            try:
                with open(mpath) as fh:
                    entries = {e["path"]: e for e in json.load(fh).get("outputs", [])}
            except (ValueError, KeyError, TypeError):
                entries = {}
        for p in paths:
            name = os.path.basename(p)
            entries[name] = {"path": name, "sha256": _sha256(p), "bytes": os.path.getsize(p), "command": command}
        manifest = {"natmhd": __version__, "outputs": [entries[k] for k in sorted(entries)]}
        atomic_write(mpath, _json(manifest))


def _out_path(cfg, name, override=None):
    if override:
        return override
    return os.path.join(cfg.output_dir, name)


def _stem(path):
    return "stdin" if path == "-" else os.path.splitext(os.path.basename(path))[0]


def _floats(text, n, what):
    try:
        vals = [number(v.strip(), what) for v in text.split(",")]
    except ConfigError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} comma-separated numbers")
    return vals


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _run_checks(sol, cfg):
    from . import solution as S

    if cfg.grid is None:
        raise ConfigError("a grid is required for residual checks", "grid")
    try:
        cfg.grid.check_within(sol.domain)
    except DomainError as exc:
        raise ConfigError(str(exc), "grid") from None
    out = {}
    for c in cfg.checks:
        tol = cfg.tolerance(c)
        if c == "incompressible":
            out[c] = S.residual_incompressible(sol, cfg.grid, tol)
        elif c == "eulerian":
            out[c] = S.eulerian_residual(sol, cfg.grid, tol)
        elif c == "cauchy":
            out[c] = S.cauchy_check(sol, cfg.grid, tol)
        elif c == "wave":
            if not _constant_total_pressure(sol):
                print("[SKIP] wave: the relation needs constant total pressure")
                continue
            out[c] = S.wave_residual(sol, cfg.grid, tol)
        elif c == "compressible":
            out[c] = S.residual_compressible(sol, state_function(cfg), cfg.grid, tol)
    return out


def _constant_total_pressure(sol):
    exprs = getattr(sol.pressure.field, "exprs", None)
    return sol.pressure.kind == "total" and exprs is not None and not exprs[0].free_symbols


def cmd_verify(args):
    cfg = load_config(args.config)
    for item in args.tol or []:
        name, _, val = item.partition("=")
        cfg.tolerances[name.strip()] = number(val, f"--tol {name}")
    if args.perturb is not None:
        cfg.perturbation = {"amplitude": args.perturb, "expr": "sin(xi2)", "component": 0}
    if args.fd:
        from .diffgeo import StencilConfig

        cfg.stencil = StencilConfig(4, 1e-3, False)
    sol = build_solution(cfg)
    reports = _run_checks(sol, cfg)
    passed = all(r.passed for r in reports.values())
    for r in reports.values():
        print(r.summary())
    report = {
        "command": "verify",
        "natmhd": __version__,
        "backend": _kernels.BACKEND,
        "config": "<stdin>" if args.config == "-" else os.path.basename(args.config),
        "family": sol.family,
        "derivatives": sol.derivative_metadata,
        "grid": cfg.grid.to_dict(),
        "passed": passed,
        "max_residual": max(r.max_residual for r in reports.values()),
        "checks": {k: v.to_dict() for k, v in reports.items()},
    }
    path = _out_path(cfg, f"{_stem(args.config)}.verify.json", args.report)
    write_artifacts({path: _json(report)}, "verify")
    print(f"{'PASS' if passed else 'FAIL'} report: {path}")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def _initial_objects(cfg):
    from .fieldline import EulerianInitialData, FieldLineError, IntegratorConfig, SeedSurface

    ini = cfg.initial
    try:
        box = ini.get("box") or {}
        ranges = [pair(box.get(a), f"initial.box.{a}") for a in ("x", "y", "z")]
        data = EulerianInitialData.from_expressions(
            ini.get("B0"), ini.get("rho0", "1"), ini.get("u0", "0,0,0"), ranges
        )
        seed = SeedSurface.from_expressions(ini["seed"]) if "seed" in ini else None
        icfg = IntegratorConfig(**{k: (v if k == "method" else number(v, f"integrator.{k}"))
                                   for k, v in cfg.integrator.items()})
    except ExpressionError as exc:
        raise ConfigError(str(exc), f"initial.{exc.key}" if exc.key else "initial") from None
    except FieldLineError as exc:
        raise ConfigError(str(exc), "initial") from None
    except TypeError as exc:
        raise ConfigError(str(exc), "initial") from None
    return data, seed, icfg


def _samples_text(sol, grid):
    from .solution import eulerian_fields

    X = grid.points()
    st = eulerian_fields(sol, X)
    cols = [X, st.x, st.u, st.B, st.rho[:, None], np.asarray(st.p)[:, None], np.asarray(st.P)[:, None]]
    data = np.concatenate([np.broadcast_to(c, (len(X), c.shape[1])) for c in cols], axis=1)
    lines = ["# natmhd-samples 1"]
    for name, (lo, hi), n in zip(("t", "xi1", "xi2", "xi3"), grid.ranges, grid.counts):
        lines.append(f"axis {name} {FMT % lo} {FMT % hi} {n}")
    lines.append("fields t xi1 xi2 xi3 x y z u v w Bx By Bz rho p P")
    lines += [" ".join(FMT % v for v in row) for row in data]
    return "\n".join(lines) + "\n"


def _solution_summary(sol):
    from .expr import to_text

    d = {"family": sol.family, "domain": sol.domain.to_dict(), "params": sol.params}
    for name, m in (("gamma", sol.gamma), ("density", sol.density), ("cauchy_f", sol.cauchy_f),
                    ("pressure", sol.pressure.field)):
        exprs = getattr(m, "exprs", None)
        if exprs is not None:
            d[name] = [to_text(e) for e in exprs]
    d["pressure_kind"] = sol.pressure.kind
    return d


def cmd_generate(args):
    cfg = load_config(args.config)
    stem = _stem(args.config)
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    if cfg.initial is not None:
        from .fieldline import build_initial_map, build_initial_velocity, grid_text, incompressibility_check

        data, seed, icfg = _initial_objects(cfg)
        if seed is None:
            raise ConfigError("missing seed surface", "initial.seed")
        g = cfg.initial.get("grid") or {}
        axes = [triple(g.get(a), f"initial.grid.{a}") for a in ("xi1", "xi2", "xi3")]
        imap = build_initial_map(data, seed, axes, icfg)
        g1 = build_initial_velocity(data.u0, imap)
        rep = incompressibility_check(imap, None, cfg.initial.get("f"))
        print(rep.summary())
        files = {
            os.path.join(out_dir, f"{stem}.initial.grid"): grid_text(imap, g1),
            os.path.join(out_dir, f"{stem}.initial.json"): _json({"command": "generate", **rep.to_dict()}),
        }
        write_artifacts(files, "generate")
        return EXIT_OK if rep.passed else EXIT_FAIL
    sol = build_solution(cfg)
    if cfg.grid is None:
        raise ConfigError("a grid is required to sample the solution", "grid")
    try:
        cfg.grid.check_within(sol.domain)
    except DomainError as exc:
        raise ConfigError(str(exc), "grid") from None
    files = {
        os.path.join(out_dir, f"{stem}.solution.json"): _json(_solution_summary(sol)),
        os.path.join(out_dir, f"{stem}.samples.grid"): _samples_text(sol, cfg.grid),
    }
    write_artifacts(files, "generate")
    for p in files:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

def cmd_mesh(args):
    from .geometry import export, format_for, sample_surface

    cfg = load_config(args.config)
    m = cfg.mesh
    fix = args.fix or m.get("fix", "xi3=1")
    name, _, val = str(fix).partition("=")
    fixed = (name.strip(), number(val, "--fix"))
    if fixed[0] not in ("xi2", "xi3"):
        raise UsageError("--fix must be xi2=<value> or xi3=<value>")
    t0 = number(args.t0 if args.t0 is not None else m.get("t0", 0.0), "mesh.t0")
    a = triple(m.get("xi1", [0, TWO_PI, 64]), "mesh.xi1")
    b = triple(m.get("free", [0, TWO_PI, 64]), "mesh.free")
    if args.n:
        a, b = (a[0], a[1], args.n), (b[0], b[1], args.n)
    sol = build_solution(cfg)
    try:
        mesh = sample_surface(sol, t0, fixed, (a, b))
    except DomainError as exc:
        raise ConfigError(str(exc), "mesh") from None
    out = args.out or _out_path(cfg, f"{_stem(args.config)}.obj")
    fmt = args.format or format_for(out)
    from .geometry import obj_text, vtk_text

    text = obj_text(mesh) if fmt == "obj" else vtk_text(mesh) if fmt == "vtk" else None
    if text is None:
        raise UsageError("meshes export as obj or vtk")
    info = {
        "command": "mesh",
        "natmhd": __version__,
        "vertices": int(len(mesh.vertices)),
        "quads": int(len(mesh.quads)),
        "periodic": list(mesh.periodic),
        "watertight": mesh.is_watertight(),
        "euler_characteristic": int(mesh.euler_characteristic()),
        "provenance": mesh.provenance,
        "output": os.path.basename(out),
    }
    write_artifacts({out: text, os.path.splitext(out)[0] + ".mesh.json": _json(info)}, "mesh")
    print(f"{out}: {info['vertices']} vertices, {info['quads']} quads, watertight={info['watertight']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------

def cmd_trace(args):
    from .fieldline import EulerianInitialData, IntegratorConfig, trace_line
    from .geometry import CLOSED_GAP, csv_text, polyline_obj_text, vtk_text

    cfg = load_config(args.config)
    line = cfg.line
    if cfg.initial is not None:
        data, _, icfg = _initial_objects(cfg)
    else:
        sol = build_solution(cfg)
        t0 = number(line.get("t0", 0.0), "line.t0")
        data = EulerianInitialData.from_solution(sol, t0)
        icfg = IntegratorConfig(**{k: (v if k == "method" else number(v, f"integrator.{k}"))
                                   for k, v in cfg.integrator.items()})
    if args.method:
        icfg = IntegratorConfig(args.method, icfg.step, icfg.rtol, icfg.atol, icfg.max_arc, icfg.min_step)
    if args.start:
        start = _floats(args.start, 3, "--start")
    elif "start" in line:
        start = [number(v, f"line.start[{i}]") for i, v in enumerate(line["start"])]
    else:
        raise UsageError("trace needs --start x,y,z (or line.start in the config)")
    rng = _floats(args.range, 2, "--range") if args.range else pair(line.get("xi1", [0, TWO_PI]), "line.xi1")
    n = args.n or int(line.get("n", 1025))
    pl = trace_line(data, start, rng, icfg, n=n)
    pl.closed = bool(pl.gap <= CLOSED_GAP)
    out = args.out or _out_path(cfg, f"{_stem(args.config)}.trace.csv")
    ext = os.path.splitext(out)[1].lower()
    text = polyline_obj_text(pl) if ext == ".obj" else vtk_text(pl) if ext == ".vtk" else csv_text(pl)
    info = {
        "command": "trace",
        "natmhd": __version__,
        "start": start,
        "xi1_range": list(rng),
        "points": int(len(pl.points)),
        "closed": pl.closed,
        "gap": pl.gap,
        "truncated": pl.truncated,
        "integrator": icfg.to_dict(),
        "output": os.path.basename(out),
    }
    write_artifacts({out: text, os.path.splitext(out)[0] + ".trace.json": _json(info)}, "trace")
    print(f"{out}: {info['points']} points, closed={pl.closed}, gap={pl.gap:.3e}, truncated={pl.truncated}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------

def cmd_classify(args):
    from .classification import ClassificationError, table_row, verify_table_row

    if not 1 <= args.row <= 9:
        raise UsageError(f"--row must be in 1..9, got {args.row}")
    try:
        row = table_row(args.row, args.k)
    except ClassificationError as exc:
        raise UsageError(str(exc)) from None
    rep = verify_table_row(row, trials=args.trials, seed=args.seed, n_samples=args.samples)
    d = {"command": "classify", "natmhd": __version__, "seed": args.seed, **rep.to_dict()}
    status = "PASS" if rep.passed else "FAIL"
    print(f"[{status}] row {rep.row}: {rep.template}; constraint {rep.constraint}; "
          f"worst residual {rep.worst_residual:.3e}; control min {rep.min_negative:.3e}; "
          f"rank {rep.rank} (expected {rep.expected_rank})")
    if args.report:
        write_artifacts({args.report: _json(d)}, "classify")
    return EXIT_OK if rep.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# transform
# ---------------------------------------------------------------------------

def cmd_transform(args):
    import yaml

    from .symmetry import TransformError, transform_from_dict

    text, source = read_text(args.config)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError:
        raise ConfigError("not valid YAML/JSON", source) from None
    parse_config(raw, source)
    steps = []
    if args.time_shift is not None:
        steps.append({"type": "time_shift", "dt": args.time_shift})
    if args.rotation:
        v = _floats(args.rotation, 4, "--rotation")
        steps.append({"type": "rotation", "axis": v[:3], "angle": v[3]})
    if args.dilation1 is not None:
        steps.append({"type": "dilation1", "eps": args.dilation1})
    if args.dilation2 is not None:
        steps.append({"type": "dilation2", "eps": args.dilation2})
    if args.galilean:
        steps.append({"type": "galilean", "alpha": args.galilean})
    if args.pressure_shift is not None:
        steps.append({"type": "pressure_shift", "beta": args.pressure_shift})
    if args.pipeline:
        ptext, psrc = read_text(args.pipeline)
        extra = yaml.safe_load(ptext)
        if not isinstance(extra, list):
            raise ConfigError("expected a list of transforms", psrc)
        steps.extend(extra)
    if not steps:
        raise UsageError("no transform given")
    for i, s in enumerate(steps):
        try:
            transform_from_dict(s, f"transforms[{i}]")
        except TransformError as exc:
            raise ConfigError(str(exc)) from None
    raw = dict(raw)
    raw["transforms"] = list(raw.get("transforms") or []) + steps
    cfg = parse_config(raw, source)
    build_solution(cfg)  # the pipeline must apply cleanly
    out_text = dump_config(raw)
    if args.out and args.out != "-":
        write_artifacts({args.out: out_text}, "transform")
    else:
        sys.stdout.write(out_text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="natmhd", description="Exact MHD flows in natural coordinates.")
    p.add_argument("--version", action="version", version=f"natmhd {__version__}")
    p.add_argument("--threads", type=int, help="numba thread count (also NATMHD_NUM_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run residual checks on a configured solution")
    v.add_argument("config", help="config file, or - for stdin")
    v.add_argument("--report", help="report path (default <output.dir>/<name>.verify.json)")
    v.add_argument("--tol", action="append", metavar="CHECK=VALUE", help="tolerance override")
    v.add_argument("--fd", action="store_true", help="use finite differences instead of closed-form partials")
    v.add_argument("--perturb", type=float, metavar="AMP", help="inject amplitude*sin(xi2) into gamma_x")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("generate", help="sample a solution (or build initial data) to grid files")
    g.add_argument("config")
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("mesh", help="magnetic surface mesh (OBJ or VTK)")
    m.add_argument("config")
    m.add_argument("--fix", help="xi2=<c> or xi3=<c>")
    m.add_argument("--t0", type=float)
    m.add_argument("--n", type=int, help="samples per axis")
    m.add_argument("--out")
    m.add_argument("--format", choices=("obj", "vtk"))
    m.set_defaults(func=cmd_mesh)

    t = sub.add_parser("trace", help="trace a magnetic line of the initial field")
    t.add_argument("config")
    t.add_argument("--start", help="x,y,z")
    t.add_argument("--range", help="xi1 range lo,hi (default 0,2*pi)")
    t.add_argument("--n", type=int, help="output points")
    t.add_argument("--method", choices=("rk4", "rk45"))
    t.add_argument("--out", help="CSV (default), .obj or .vtk")
    t.set_defaults(func=cmd_trace)

    c = sub.add_parser("classify", help="check a row of the state-equation classification")
    c.add_argument("--row", type=int, required=True)
    c.add_argument("--k", type=float)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--report")
    c.set_defaults(func=cmd_classify)

    x = sub.add_parser("transform", help="append symmetry transforms to a config")
    x.add_argument("config")
    x.add_argument("--time-shift", type=float)
    x.add_argument("--rotation", help="ax,ay,az,angle")
    x.add_argument("--dilation1", type=float)
    x.add_argument("--dilation2", type=float)
    x.add_argument("--galilean", help="alpha(t) components, e.g. 't^2,0,0'")
    x.add_argument("--pressure-shift", type=float)
    x.add_argument("--pipeline", help="YAML list of transform mappings")
    x.add_argument("--out", help="output config path (default stdout)")
    x.set_defaults(func=cmd_transform)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads:
        _kernels.set_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GeometryError as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        # remaining domain errors from the library (line escape, transversality, ...)
        print(f"failed: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
