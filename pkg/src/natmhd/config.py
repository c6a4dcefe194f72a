"""Run configuration shared by every CLI subcommand.

A config is a YAML (or JSON) mapping.  Free functions are expression
strings; numeric fields also accept constant expressions such as ``2*pi``.

Top-level keys::

    family        sol13 | sol14 | torus_knot | jet | dim3 | dim2 | field_aligned | custom
    params        family parameters (expression strings)
    domain        {t: [lo, hi], xi1: [..], xi2: [..], xi3: [..]}   (default: family preset)
    grid          {t: {range: [lo, hi], count: n}, xi1: ..., xi2: ..., xi3: ...}
    checks        list of: incompressible, eulerian, cauchy, wave, compressible
    tolerances    per-check overrides of the default tolerances
    derivatives   {mode: closed-form | fd, order: 4, step: 1e-3, richardson: false}
    state         {h: "<expr in p, rho>"}   (compressible check only)
    perturbation  {amplitude: 0.01, expr: "sin(xi2)", component: 0}   (negative control)
    transforms    list of transform mappings (see natmhd.symmetry.transform_from_dict)
    mesh          {t0: 0, fix: "xi3=1", xi1: [lo, hi, n], free: [lo, hi, n]}
    line          {t0: 0, xi2: 0, xi3: 1, xi1: [lo, hi], n: 1025, start: [x, y, z]}
    initial       {B0, rho0, u0, box: {x: [..], y: [..], z: [..]}, seed, grid: {xi1: [lo, hi, n], ...}}
    integrator    {method: rk45 | rk4, step, rtol, atol, max_arc}
    output        {dir: "."}
    seed          integer
"""

import io
import json
import math
import sys
from dataclasses import dataclass, field

import yaml

from .diffgeo import DomainBox, StencilConfig
from .expr import COORDS, ExpressionError, parse, parse_vector
from .solution import DEFAULT_TOL, GridSpec, PressureModel, Solution, perturb

TOP_KEYS = (
    "family", "params", "domain", "grid", "checks", "tolerances", "derivatives", "state",
    "perturbation", "transforms", "mesh", "line", "initial", "integrator", "output", "seed",
)
FAMILIES = ("sol13", "sol14", "torus_knot", "jet", "dim3", "dim2", "field_aligned", "custom")
CHECKS = ("incompressible", "eulerian", "cauchy", "wave", "compressible")
AXES = ("t", "xi1", "xi2", "xi3")
DEFAULT_CHECKS = ("incompressible", "eulerian", "cauchy")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def number(v, key):
    """A float from a number or a constant expression string."""
    if isinstance(v, bool):
        raise ConfigError("expected a number", key)
    if isinstance(v, (int, float)):
        out = float(v)
    elif isinstance(v, str):
        try:
            out = float(parse(v, (), key))
        except (ExpressionError, TypeError) as exc:
            raise ConfigError(f"expected a constant expression ({exc})", key) from None
    else:
        raise ConfigError(f"expected a number, got {type(v).__name__}", key)
    if not math.isfinite(out):
        raise ConfigError("value is not finite", key)
    return out


def pair(v, key):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError("expected [lo, hi]", key)
    lo, hi = number(v[0], f"{key}[0]"), number(v[1], f"{key}[1]")
    if hi < lo:
        raise ConfigError(f"range [{lo}, {hi}] has hi < lo", key)
    return lo, hi


def triple(v, key):
    """[lo, hi, n] for a sampled axis."""
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError("expected [lo, hi, count]", key)
    lo, hi = pair(v[:2], key)
    n = v[2]
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        raise ConfigError("count must be an integer >= 2", key)
    return lo, hi, n


def _mapping(v, key):
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"expected a mapping, got {type(v).__name__}", key)
    return v


def _known(d, allowed, key):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key (allowed: {', '.join(allowed)})", f"{key}.{k}" if key else k)


def domain_from_dict(d, key="domain"):
    d = _mapping(d, key)
    _known(d, AXES, key)
    missing = [a for a in AXES if a not in d]
    if missing:
        raise ConfigError(f"missing axes {', '.join(missing)}", key)
    ranges = [pair(d[a], f"{key}.{a}") for a in AXES]
    return DomainBox.from_ranges(ranges)


def grid_from_dict(d, key="grid"):
    d = _mapping(d, key)
    _known(d, AXES, key)
    ranges, counts = [], []
    for a in AXES:
        if a not in d:
            raise ConfigError("missing axis", f"{key}.{a}")
        ax = d[a]
        if isinstance(ax, (list, tuple)):
            lo, hi, n = triple(ax, f"{key}.{a}") if len(ax) == 3 else (*pair(ax, f"{key}.{a}"), 1)
        else:
            ax = _mapping(ax, f"{key}.{a}")
            _known(ax, ("range", "count"), f"{key}.{a}")
            lo, hi = pair(ax.get("range"), f"{key}.{a}.range")
            n = ax.get("count", 1)
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ConfigError("count must be a positive integer", f"{key}.{a}.count")
        ranges.append((lo, hi))
        counts.append(n)
    try:
        return GridSpec(tuple(ranges), tuple(counts))
    except ValueError as exc:
        raise ConfigError(str(exc), key) from None


@dataclass
class RunConfig:
    raw: dict
    family: str
    params: dict
    domain: DomainBox = None
    grid: GridSpec = None
    checks: tuple = DEFAULT_CHECKS
    tolerances: dict = field(default_factory=dict)
    stencil: StencilConfig = None
    state: dict = None
    perturbation: dict = None
    transforms: list = field(default_factory=list)
    mesh: dict = field(default_factory=dict)
    line: dict = field(default_factory=dict)
    initial: dict = None
    integrator: dict = field(default_factory=dict)
    output_dir: str = "."
    seed: int = 0

    def tolerance(self, check):
        return float(self.tolerances.get(check, DEFAULT_TOL.get(check, 1e-8)))


def parse_config(raw, source="config"):
    """Validate a config mapping and return a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", source)
    _known(raw, TOP_KEYS, "")
    initial = raw.get("initial")
    family = raw.get("family")
    if family is None and initial is None:
        raise ConfigError("either 'family' or 'initial' is required", "family")
    if family is not None and family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r} (known: {', '.join(FAMILIES)})", "family")
    params = _mapping(raw.get("params"), "params")
    domain = domain_from_dict(raw["domain"]) if raw.get("domain") is not None else None
    grid = grid_from_dict(raw["grid"]) if raw.get("grid") is not None else None

    checks = raw.get("checks", list(DEFAULT_CHECKS))
    if isinstance(checks, str):
        checks = [checks]
    if not isinstance(checks, list) or not checks:
        raise ConfigError("expected a non-empty list", "checks")
    for i, c in enumerate(checks):
        if c not in CHECKS:
            raise ConfigError(f"unknown check {c!r} (known: {', '.join(CHECKS)})", f"checks[{i}]")

    tols = _mapping(raw.get("tolerances"), "tolerances")
    _known(tols, CHECKS, "tolerances")
    tols = {k: number(v, f"tolerances.{k}") for k, v in tols.items()}
    for k, v in tols.items():
        if not v > 0:
            raise ConfigError("tolerance must be positive", f"tolerances.{k}")

    der = _mapping(raw.get("derivatives"), "derivatives")
    _known(der, ("mode", "order", "step", "richardson"), "derivatives")
    stencil = None
    mode = der.get("mode", "closed-form")
    if mode not in ("closed-form", "fd"):
        raise ConfigError("mode must be closed-form or fd", "derivatives.mode")
    if mode == "fd":
        try:
            stencil = StencilConfig(int(der.get("order", 4)), number(der.get("step", 1e-3), "derivatives.step"),
                                    bool(der.get("richardson", False)))
        except ValueError as exc:
            raise ConfigError(str(exc), "derivatives") from None

    state = raw.get("state")
    if state is not None:
        state = _mapping(state, "state")
        _known(state, ("h", "p_range", "rho_range"), "state")
        if "h" not in state:
            raise ConfigError("missing state function", "state.h")
    if "compressible" in checks and state is None:
        raise ConfigError("the compressible check needs a state function", "state.h")

    pert = raw.get("perturbation")
    if pert is not None:
        pert = _mapping(pert, "perturbation")
        _known(pert, ("amplitude", "expr", "component"), "perturbation")
        pert = {
            "amplitude": number(pert.get("amplitude", 0.01), "perturbation.amplitude"),
            "expr": str(pert.get("expr", "sin(xi2)")),
            "component": int(pert.get("component", 0)),
        }

    transforms = raw.get("transforms") or []
    if not isinstance(transforms, list):
        raise ConfigError("expected a list of transforms", "transforms")

    output = _mapping(raw.get("output"), "output")
    _known(output, ("dir",), "output")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", "seed")

    cfg = RunConfig(
        raw=raw, family=family, params=params, domain=domain, grid=grid, checks=tuple(checks),
        tolerances=tols, stencil=stencil, state=state, perturbation=pert, transforms=transforms,
        mesh=_mapping(raw.get("mesh"), "mesh"), line=_mapping(raw.get("line"), "line"),
        initial=_mapping(initial, "initial") if initial is not None else None,
        integrator=_mapping(raw.get("integrator"), "integrator"),
        output_dir=str(output.get("dir", ".")), seed=seed,
    )
    _known(cfg.mesh, ("t0", "fix", "xi1", "free"), "mesh")
    _known(cfg.line, ("t0", "xi2", "xi3", "xi1", "n", "start"), "line")
    _known(cfg.integrator, ("method", "step", "rtol", "atol", "max_arc", "min_step"), "integrator")
    if cfg.initial is not None:
        _known(cfg.initial, ("B0", "rho0", "u0", "box", "seed", "grid", "f"), "initial")
    return cfg


def read_text(path):
    """Config text from a file, or from stdin when ``path`` is ``-``."""
    if path == "-":
        return sys.stdin.read(), "<stdin>"
    with open(path, encoding="utf-8") as fh:
        return fh.read(), path


def load_config(path):
    text, source = read_text(path)
    try:
        raw = yaml.safe_load(io.StringIO(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML/JSON ({exc.__class__.__name__})", source) from None
    return parse_config(raw, source)


def dump_config(raw):
    """Canonical YAML text of a config mapping (sorted keys, stable)."""
    return yaml.safe_dump(json.loads(json.dumps(raw)), sort_keys=True, default_flow_style=None)


# ---------------------------------------------------------------------------
# building solutions
# ---------------------------------------------------------------------------

def _p(params, allowed, key="params"):
    _known(params, allowed, key)
    return params


def _custom(params, domain):
    _p(params, ("gamma", "density", "P", "f"))
    if "gamma" not in params:
        raise ConfigError("missing map components", "params.gamma")
    g = parse_vector(params["gamma"], COORDS, key="params.gamma")
    rho = parse(params.get("density", "1"), COORDS, key="params.density")
    P = parse(params.get("P", "1"), COORDS, key="params.P")
    f = parse(params.get("f", "1"), COORDS, key="params.f")
    from .diffgeo import SymbolicMap

    return Solution(
        gamma=SymbolicMap(g, domain),
        density=SymbolicMap([rho], domain),
        pressure=PressureModel("total", SymbolicMap([P], domain)),
        cauchy_f=SymbolicMap([f], domain),
        domain=domain,
        family="custom",
        params={k: str(v) for k, v in params.items()},
    )


def build_family(cfg):
    from . import families as F

    dom = cfg.domain or F.PRESET_DOMAIN
    p = cfg.params
    try:
        if cfg.family in ("sol13", "sol14"):
            _p(p, ("u",))
            builder = F.sol13 if cfg.family == "sol13" else F.sol14
            return builder(u=p.get("u", "0"), domain=dom)
        if cfg.family == "torus_knot":
            _p(p, ("A", "B", "phi", "a", "b", "k", "u", "delta", "P0"))
            kw = dict(p)
            for name in ("k", "delta", "P0"):
                if name in kw:
                    kw[name] = number(kw[name], f"params.{name}")
            return F.build_torus_knot(F.TorusKnotParams(**kw), dom)
        if cfg.family == "jet":
            _p(p, ("A", "B", "alpha", "beta", "a", "b", "phi", "u1", "u2", "P0"))
            need = ("A", "B", "alpha", "beta", "a", "b", "phi")
            for name in need:
                if name not in p:
                    raise ConfigError("missing parameter", f"params.{name}")
            P0 = number(p.get("P0", 1.0), "params.P0")
            return F.build_jet(*(p[n] for n in need), dom, p.get("u1", "0"), p.get("u2", "0"), P0)
        if cfg.family == "dim3":
            _p(p, ("tau1", "tau2", "tau3", "u1", "u2", "f", "P0"))
            return F.build_dim3(p.get("tau1"), p.get("tau2"), p.get("tau3"), dom, p.get("u1", "0"),
                                p.get("u2", "0"), p.get("f"), number(p.get("P0", 1.0), "params.P0"))
        if cfg.family == "dim2":
            _p(p, ("tau1", "tau2", "tau3", "lam", "u", "f", "P0"))
            return F.build_dim2(p.get("tau1"), p.get("tau2"), p.get("tau3"), p.get("lam"), dom,
                                p.get("u", "0"), p.get("f"), number(p.get("P0", 1.0), "params.P0"))
        if cfg.family == "field_aligned":
            _p(p, ("tau", "P0"))
            tau = p.get("tau")
            if isinstance(tau, str):
                tau = [s.strip() for s in tau.split(",")]
            return F.build_field_aligned(tau, dom, number(p.get("P0", 1.0), "params.P0"))
        return _custom(p, dom)
    except (ExpressionError, F.FamilyError, TypeError) as exc:
        key = getattr(exc, "key", None)
        raise ConfigError(str(exc), f"params.{key}" if key and not str(key).startswith("params") else "params") from None


def build_solution(cfg):
    """Family, then perturbation, then the transform pipeline, then FD if requested."""
    from .symmetry import TransformError, transform_from_dict

    sol = build_family(cfg)
    if cfg.perturbation is not None:
        sol = perturb(sol, **cfg.perturbation)
    for i, t in enumerate(cfg.transforms):
        try:
            sol = transform_from_dict(t, f"transforms[{i}]").apply(sol)
        except TransformError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.stencil is not None:
        sol = sol.with_fd(cfg.stencil)
    return sol


def state_function(cfg):
    from .classification import ClassificationError, StateFunction

    st = cfg.state
    kw = {}
    if "p_range" in st:
        kw["p_range"] = pair(st["p_range"], "state.p_range")
    if "rho_range" in st:
        kw["rho_range"] = pair(st["rho_range"], "state.rho_range")
    try:
        return StateFunction.parse(st["h"], **kw)
    except (ExpressionError, ClassificationError) as exc:
        raise ConfigError(str(exc), "state.h") from None
