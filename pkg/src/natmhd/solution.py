"""Candidate flows in natural coordinates and their residual checks.

A :class:`Solution` bundles the map gamma(t, xi), the density, a pressure
model and the Cauchy function f(xi2, xi3).  The checks evaluate

* the reduced incompressible system (vector wave equation + mixed product),
* the reduced compressible system (adds p_t = h rho_t and the total pressure),
* the Cauchy integral rho * det(d gamma / d xi) = f,
* the Eulerian MHD equations, via the chain rule grad_x = J^{-T} grad_xi.

Norms are accumulated chunk by chunk in a fixed order, so reports are
reproducible bit for bit.
"""

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import sympy as sp

from . import _kernels
from .diffgeo import (
    SINGULAR_RTOL,
    CallableMap,
    DomainBox,
    DomainError,
    SymbolicMap,
    as_fd,
    as_points,
    spatial_jacobian,
)
from .expr import COORDS, parse

CHUNK = 16384
MAX_EXCLUDED_FRACTION = 0.01

DEFAULT_TOL = {"incompressible": 1e-6, "compressible": 1e-6, "cauchy": 1e-8, "eulerian": 1e-6}


def constant_map(value, domain=None):
    return SymbolicMap([sp.nsimplify(value) if float(value).is_integer() else sp.Float(value)], domain)


@dataclass(frozen=True)
class PressureModel:
    """Either the total pressure P or the gas pressure p, as a scalar map of (t, xi).

    ``kind`` is ``"total"`` or ``"gas"``.  A gas model may carry the entropy
    S(xi) (reported, not used by the checks) and, optionally, an independently
    given total pressure that the compressible check compares against.
    """

    kind: str
    field: object
    entropy: object = None
    total: object = None

    def __post_init__(self):
        if self.kind not in ("total", "gas"):
            raise ValueError(f"pressure kind must be 'total' or 'gas', got {self.kind!r}")

    @classmethod
    def constant_total(cls, P0=1.0):
        return cls("total", constant_map(P0))


@dataclass(frozen=True)
class Solution:
    gamma: object
    density: object
    pressure: PressureModel
    cauchy_f: object
    domain: DomainBox
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    @property
    def closed_form(self):
        maps = (self.gamma, self.density, self.pressure.field, self.cauchy_f)
        return all(isinstance(m, SymbolicMap) for m in maps)

    @property
    def derivative_metadata(self):
        if self.closed_form:
            return {"mode": "closed-form"}
        st = getattr(self.gamma, "stencil", None)
        return st.metadata() if st is not None else {"mode": "finite-difference"}

    def constant_density(self):
        """The constant density value, or None if rho varies."""
        d = self.density
        if isinstance(d, SymbolicMap) and not d.exprs[0].free_symbols:
            return float(d.exprs[0])
        return None

    def with_fd(self, stencil=None):
        """Same flow with every closed-form channel replaced by finite differences."""
        p = self.pressure
        pm = PressureModel(
            p.kind,
            as_fd(p.field, stencil),
            p.entropy,
            None if p.total is None else as_fd(p.total, stencil),
        )
        return replace(
            self,
            gamma=as_fd(self.gamma, stencil),
            density=as_fd(self.density, stencil),
            pressure=pm,
            cauchy_f=as_fd(self.cauchy_f, stencil),
        )


@dataclass(frozen=True)
class EulerianState:
    x: np.ndarray
    u: np.ndarray
    b: np.ndarray
    B: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid over (t, xi1, xi2, xi3); a count of 1 pins that axis to its lower end."""

    ranges: tuple
    counts: tuple

    def __post_init__(self):
        ranges = tuple((float(a), float(b)) for a, b in self.ranges)
        counts = tuple(int(c) for c in self.counts)
        if len(ranges) != 4 or len(counts) != 4:
            raise ValueError("grid needs 4 ranges and 4 counts (t, xi1, xi2, xi3)")
        for (a, b), c in zip(ranges, counts):
            if c < 1:
                raise ValueError(f"grid count must be >= 1, got {c}")
            if c >= 2 and not b > a:
                raise ValueError(f"active grid axis needs lo < hi, got [{a}, {b}]")
            if c == 1 and b < a:
                raise ValueError(f"invalid grid range [{a}, {b}]")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, ranges, n):
        return cls(ranges, (n,) * 4)

    def axes(self):
        return [np.linspace(a, b, c) if c > 1 else np.array([a]) for (a, b), c in zip(self.ranges, self.counts)]

    @property
    def shape(self):
        return self.counts

    @property
    def size(self):
        return math.prod(self.counts)

    def points(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def check_within(self, domain):
        for (a, b), (lo, hi), name in zip(self.ranges, domain.ranges, ("t", "xi1", "xi2", "xi3")):
            if a < lo - 1e-12 or b > hi + 1e-12:
                raise DomainError(f"grid range {name} = [{a}, {b}] leaves the domain [{lo}, {hi}]")

    def to_dict(self):
        names = ("t", "xi1", "xi2", "xi3")
        return {n: {"range": list(r), "count": c} for n, r, c in zip(names, self.ranges, self.counts)}


@dataclass
class EquationNorm:
    max: float
    l2: float
    worst: tuple

    def to_dict(self):
        return {"max": self.max, "l2": self.l2, "worst_point": list(self.worst)}


@dataclass
class ResidualReport:
    """Per-equation residual norms over a grid.

    ``l2`` is the root-mean-square over the included points; pass/fail is
    keyed to ``max``.
    """

    check: str
    equations: dict
    tolerance: float
    n_points: int
    n_excluded: int = 0
    derivative: dict = field(default_factory=lambda: {"mode": "closed-form"})
    notes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def max_residual(self):
        vals = [e.max for e in self.equations.values()]
        if any(math.isnan(v) for v in vals):
            return float("nan")
        return max(vals) if vals else 0.0

    @property
    def excluded_fraction(self):
        return self.n_excluded / self.n_points if self.n_points else 0.0

    @property
    def passed(self):
        finite = all(np.isfinite(e.max) for e in self.equations.values())
        return (
            finite
            and self.max_residual <= self.tolerance
            and self.excluded_fraction <= MAX_EXCLUDED_FRACTION
        )

    def to_dict(self):
        return {
            "check": self.check,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_residual": self.max_residual,
            "n_points": self.n_points,
            "n_excluded": self.n_excluded,
            "derivative": dict(self.derivative),
            "backend": _kernels.BACKEND,
            "equations": {k: v.to_dict() for k, v in self.equations.items()},
            "notes": list(self.notes),
            **({"extras": self.extras} if self.extras else {}),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary(self):
        parts = [f"{k}: max={v.max:.3e} l2={v.l2:.3e}" for k, v in self.equations.items()]
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.check} (tol {self.tolerance:g}) " + "; ".join(parts)


class _Accumulator:
    """Deterministic max / sum-of-squares reduction over chunks."""

    def __init__(self, names):
        self.names = names
        self.max = {n: -1.0 for n in names}
        self.sq = {n: 0.0 for n in names}
        self.worst = {n: None for n in names}
        self.count = 0

    def add(self, X, values, mask):
        n_in = int(mask.sum())
        self.count += n_in
        if n_in == 0:
            return
        Xm = X[mask]
        for n in self.names:
            v = values[n][mask]
            if not np.all(np.isfinite(v)):
                # a non-finite residual at an included point fails loudly
                self.max[n] = float("nan")
                self.worst[n] = tuple(float(c) for c in Xm[int(np.argmin(np.isfinite(v)))])
                continue
            self.sq[n] += float(np.sum(v * v))
            i = int(np.argmax(v))
            if v[i] > self.max[n]:
                self.max[n] = float(v[i])
                self.worst[n] = tuple(float(c) for c in Xm[i])

    def result(self):
        out = {}
        for n in self.names:
            l2 = math.sqrt(self.sq[n] / self.count) if self.count else 0.0
            mx = self.max[n] if self.max[n] >= 0 or math.isnan(self.max[n]) else 0.0
            out[n] = EquationNorm(mx, l2, self.worst[n] or ())
        return out


def _scalar_jet(m, X):
    v, d1, d2 = m.jet(X)
    return v[:, 0], d1[:, :, 0], d2[:, :, :, 0]


def _gamma_jet(sol, X):
    return sol.gamma.jet(X)


def _chunks(X):
    for s in range(0, X.shape[0], CHUNK):
        yield X[s : s + CHUNK]


def _grid_points(sol, grid):
    grid.check_within(sol.domain)
    return grid.points()


def _exclusion(d1):
    J = spatial_jacobian(d1)
    det = _kernels.det3(np.ascontiguousarray(J))
    scale = np.max(np.linalg.norm(J, axis=1), axis=-1)
    return det, np.abs(det) > SINGULAR_RTOL * np.maximum(scale, 1e-300) ** 3


def _total_pressure_jet(sol, X, g1, gd, rho_v, rho_d1):
    """Total pressure value and first partials from the pressure model."""
    pm = sol.pressure
    if pm.kind == "total":
        P, dP, _ = _scalar_jet(pm.field, X)
        return P, dP, None, None
    p, dp, _ = _scalar_jet(pm.field, X)
    b2 = np.einsum("ni,ni->n", g1, g1)
    P = p + 0.5 * rho_v ** 2 * b2
    # d_a (rho^2 |g1|^2 / 2) = rho rho_a |g1|^2 + rho^2 g1 . g1_a
    dP = dp + rho_v[:, None] * rho_d1 * b2[:, None] + rho_v[:, None] ** 2 * np.einsum("ni,nai->na", g1, gd)
    return P, dP, p, dp


# ---------------------------------------------------------------------------
# point evaluation
# ---------------------------------------------------------------------------

def eulerian_fields(sol, at):
    """Eulerian state at a point (or batch): x, u, b, B = rho b, rho, p, P."""
    X, single = as_points(at)
    sol.domain.check(X)
    val, d1, d2 = _gamma_jet(sol, X)
    rho, rho_d1, _ = _scalar_jet(sol.density, X)
    b = d1[:, 1]
    B = rho[:, None] * b
    P, _, p, _ = _total_pressure_jet(sol, X, b, d2[:, 1], rho, rho_d1)
    half_b2 = 0.5 * np.einsum("ni,ni->n", B, B)
    if p is None:
        p = P - half_b2
    st = EulerianState(val, d1[:, 0], b, B, rho, p, P)
    if single:
        return EulerianState(*(getattr(st, k)[0] for k in ("x", "u", "b", "B", "rho", "p", "P")))
    return st


# ---------------------------------------------------------------------------
# residual checks
# ---------------------------------------------------------------------------

def residual_incompressible(sol, grid, tol=None):
    """Wave-momentum equation and mixed-product constraint of the reduced system.

    A constant density rho0 != 1 is handled by the general (rho-weighted) form
    and reported in the notes.
    """
    tol = DEFAULT_TOL["incompressible"] if tol is None else tol
    X = _grid_points(sol, grid)
    notes = []
    rho0 = sol.constant_density()
    if rho0 is None:
        notes.append("density is not constant; using the variable-density form")
    elif rho0 != 1.0:
        notes.append(f"constant density rho0 = {rho0:g} (not normalized to 1)")
    acc = _Accumulator(["momentum", "constraint"])
    excluded = 0
    for Xc in _chunks(X):
        _, d1, d2 = _gamma_jet(sol, Xc)
        rho, rho_d1, _ = _scalar_jet(sol.density, Xc)
        _, dP, _, _ = _total_pressure_jet(sol, Xc, d1[:, 1], d2[:, 1], rho, rho_d1)
        f = sol.cauchy_f.value(Xc)[:, 0]
        _, ok = _exclusion(d1)
        excluded += int((~ok).sum())
        mom, con = _kernels.natural_residual(d1, d2, rho, np.ascontiguousarray(rho_d1), np.ascontiguousarray(dP), f)
        acc.add(Xc, {"momentum": np.linalg.norm(mom, axis=1), "constraint": np.abs(con)}, ok)
    return ResidualReport("incompressible", acc.result(), tol, X.shape[0], excluded, sol.derivative_metadata, notes)


def residual_compressible(sol, h, grid, tol=None):
    """Reduced compressible system with state function ``h(p, rho)``.

    Requires a gas-pressure model.  The total-pressure relation is checked
    against ``sol.pressure.total`` when one is supplied (otherwise it holds by
    construction and is reported as zero).
    """
    tol = DEFAULT_TOL["compressible"] if tol is None else tol
    if sol.pressure.kind != "gas":
        raise ValueError("residual_compressible needs a gas-pressure model (p, S, h)")
    X = _grid_points(sol, grid)
    acc = _Accumulator(["momentum", "constraint", "state", "total_pressure"])
    excluded = 0
    for Xc in _chunks(X):
        _, d1, d2 = _gamma_jet(sol, Xc)
        rho, rho_d1, _ = _scalar_jet(sol.density, Xc)
        P, dP, p, dp = _total_pressure_jet(sol, Xc, d1[:, 1], d2[:, 1], rho, rho_d1)
        f = sol.cauchy_f.value(Xc)[:, 0]
        _, ok = _exclusion(d1)
        excluded += int((~ok).sum())
        mom, con = _kernels.natural_residual(d1, d2, rho, np.ascontiguousarray(rho_d1), np.ascontiguousarray(dP), f)
        try:
            hv = np.asarray(h.value(p, rho), dtype=float)
        except Exception as exc:
            raise ValueError(f"state function evaluation failed: {exc}") from exc
        state = np.abs(dp[:, 0] - hv * rho_d1[:, 0])
        if sol.pressure.total is not None:
            Pg = sol.pressure.total.value(Xc)[:, 0]
            tp = np.abs(Pg - P)
        else:
            tp = np.zeros_like(P)
        acc.add(
            Xc,
            {"momentum": np.linalg.norm(mom, axis=1), "constraint": np.abs(con), "state": state, "total_pressure": tp},
            ok,
        )
    return ResidualReport("compressible", acc.result(), tol, X.shape[0], excluded, sol.derivative_metadata)


def cauchy_check(sol, grid, tol=None):
    """|rho det(d gamma/d xi) - f| and the spread of rho det along (t, xi1)."""
    tol = DEFAULT_TOL["cauchy"] if tol is None else tol
    X = _grid_points(sol, grid)
    acc = _Accumulator(["cauchy"])
    excluded = 0
    rd = np.empty(X.shape[0])
    s = 0
    for Xc in _chunks(X):
        if isinstance(sol.gamma, CallableMap):
            _, d1, _ = sol.gamma.jet(Xc, need_second=False)
        else:
            _, d1, _ = sol.gamma.jet(Xc)
        rho = sol.density.value(Xc)[:, 0]
        det, ok = _exclusion(d1)
        excluded += int((~ok).sum())
        f = sol.cauchy_f.value(Xc)[:, 0]
        acc.add(Xc, {"cauchy": np.abs(rho * det - f)}, ok)
        rd[s : s + Xc.shape[0]] = np.where(ok, rho * det, np.nan)
        s += Xc.shape[0]
    eqs = acc.result()
    # f must not depend on t or xi1: spread of rho*det over those two axes
    nt, n1, n2, n3 = grid.counts
    cube = rd.reshape(nt * n1, n2 * n3).T
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns: every point excluded
        spread = np.nanmax(cube, axis=1) - np.nanmin(cube, axis=1)
    spread = np.nan_to_num(spread, nan=0.0)
    k = int(np.argmax(spread))
    worst = tuple(float(c) for c in X.reshape(nt * n1, n2 * n3, 4)[0, k])
    eqs["t_xi1_variation"] = EquationNorm(float(spread[k]), float(np.sqrt(np.mean(spread ** 2))), worst)
    return ResidualReport("cauchy", eqs, tol, X.shape[0], excluded, sol.derivative_metadata)


def eulerian_residual(sol, grid, tol=None):
    """Continuity, momentum, induction and div B in Cartesian form, pointwise.

    Spatial gradients come from the chain rule grad_x F = (dF/dxi) J^{-1};
    time derivatives at fixed x are d_t F - (grad_x F) u.  The map is never
    inverted globally.
    """
    tol = DEFAULT_TOL["eulerian"] if tol is None else tol
    X = _grid_points(sol, grid)
    names = ["continuity", "momentum", "induction", "divergence"]
    acc = _Accumulator(names)
    excluded = 0
    total = sol.pressure.kind == "total"
    for Xc in _chunks(X):
        _, d1, d2 = _gamma_jet(sol, Xc)
        rho, rho_d1, _ = _scalar_jet(sol.density, Xc)
        _, dpress, _ = _scalar_jet(sol.pressure.field, Xc)
        _, ok = _exclusion(d1)
        excluded += int((~ok).sum())
        cont, mom, ind, divb = _kernels.eulerian_residual(
            np.ascontiguousarray(d1), np.ascontiguousarray(d2), np.ascontiguousarray(rho),
            np.ascontiguousarray(rho_d1), np.ascontiguousarray(dpress), total,
        )
        vals = {
            "continuity": np.abs(cont),
            "momentum": np.linalg.norm(mom, axis=1),
            "induction": np.linalg.norm(ind, axis=1),
            "divergence": np.abs(divb),
        }
        acc.add(Xc, vals, ok)
    return ResidualReport("eulerian", acc.result(), tol, X.shape[0], excluded, sol.derivative_metadata)


def wave_residual(sol, grid, tol=1e-8):
    """Pointwise |gamma_tt - gamma_xi1xi1| (constant total pressure families)."""
    X = _grid_points(sol, grid)
    acc = _Accumulator(["wave"])
    for Xc in _chunks(X):
        _, _, d2 = _gamma_jet(sol, Xc)
        acc.add(Xc, {"wave": np.linalg.norm(d2[:, 0, 0] - d2[:, 1, 1], axis=1)}, np.ones(Xc.shape[0], bool))
    return ResidualReport("wave", acc.result(), tol, X.shape[0], 0, sol.derivative_metadata)


def verify_all(sol, grid, tols=None, h=None):
    """Run the standard suite; returns a list of reports."""
    tols = {**DEFAULT_TOL, **(tols or {})}
    reports = []
    if sol.pressure.kind == "gas" and h is not None:
        reports.append(residual_compressible(sol, h, grid, tols["compressible"]))
    else:
        reports.append(residual_incompressible(sol, grid, tols["incompressible"]))
    reports.append(cauchy_check(sol, grid, tols["cauchy"]))
    reports.append(eulerian_residual(sol, grid, tols["eulerian"]))
    return reports


def perturb(sol, amplitude=0.01, expr="sin(xi2)", component=0):
    """Add ``amplitude * expr`` to one component of gamma (a negative control)."""
    if not isinstance(sol.gamma, SymbolicMap):
        raise TypeError("perturb needs a closed-form gamma")
    e = parse(expr, COORDS, key="perturbation")
    comps = list(sol.gamma.exprs)
    comps[component] = comps[component] + sp.Float(amplitude) * e
    params = dict(sol.params)
    params["perturbation"] = {"amplitude": amplitude, "expr": expr, "component": component}
    return replace(sol, gamma=SymbolicMap(comps, sol.domain), family=sol.family + "+perturbed", params=params)


def default_grid(sol, n=17):
    return GridSpec.uniform(sol.domain.ranges, n)


__all__ = [
    "EulerianState",
    "GridSpec",
    "PressureModel",
    "ResidualReport",
    "Solution",
    "cauchy_check",
    "constant_map",
    "eulerian_fields",
    "eulerian_residual",
    "perturb",
    "residual_compressible",
    "residual_incompressible",
    "verify_all",
    "wave_residual",
]
