"""Finite symmetry and equivalence transformations of closed-form Solutions.

Every transform acts by substitution (pull-back): the new solution at
(t, xi) is built from the old one at the preimage point, so derivatives of
the image stay closed-form.

Finite actions (epsilon is the group parameter)::

    TimeShift(d)            gamma'(t, xi) = gamma(t - d, xi)
    Rotation(n, theta)      gamma' = R gamma
    Dilation1(eps)          gamma'(t, xi) = e^eps gamma(e^-eps t, e^-eps xi)
    Dilation2(eps)          gamma'(t, xi) = e^2eps gamma(t, xi1, e^-3eps xi2, e^-3eps xi3),
                            P' = e^4eps P
    GeneralizedGalilean(a)  gamma' = gamma + a(t),  P' = P - rho0 (gamma . a'' + a . a'' / 2)
    PressureShift(b)        P' = P + b(t)
    Reparametrization       xi1 -> xi1 + a(xi2, xi3), (xi2, xi3) -> unit-Jacobian relabelling
    CauchyEquivalence       (xi2, xi3) relabelling with Jacobian D != 0,  f' = f / D

Relabellings are given through the inverse map (old coordinates as
functions of the new ones); a forward map is inverted symbolically when
possible.
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import sympy as sp

from .diffgeo import DomainBox, SymbolicMap
from .expr import COORDS, P, RHO, T, XI1, XI2, XI3, lambdify, parse, parse_vector
from .solution import PressureModel

JACOBIAN_TOL = 1e-10


class TransformError(ValueError):
    pass


def _parts(sol):
    if not sol.closed_form:
        raise TransformError("transforms need a closed-form Solution (symbolic gamma, rho, pressure, f)")
    total = sol.pressure.total.exprs[0] if sol.pressure.total is not None else None
    return list(sol.gamma.exprs), sol.density.exprs[0], sol.pressure.field.exprs[0], total, sol.cauchy_f.exprs[0]


def _rebuild(sol, gamma, rho, press, total, f, domain, record):
    d = domain
    pm = PressureModel(
        sol.pressure.kind,
        SymbolicMap([press], d),
        sol.pressure.entropy,
        None if total is None else SymbolicMap([total], d),
    )
    params = dict(sol.params)
    params["transforms"] = list(params.get("transforms", [])) + [record]
    return replace(
        sol,
        gamma=SymbolicMap(gamma, d),
        density=SymbolicMap([rho], d),
        pressure=pm,
        cauchy_f=SymbolicMap([f], d),
        domain=d,
        params=params,
    )


def _subs_all(parts, mapping):
    gamma, rho, press, total, f = parts
    s = lambda e: None if e is None else sp.sympify(e).subs(mapping, simultaneous=True)
    return [s(g) for g in gamma], s(rho), s(press), s(total), s(f)


def _scale_ranges(domain, factors, shifts=(0, 0, 0, 0)):
    lo, hi = [], []
    for (a, b), c, s in zip(domain.ranges, factors, shifts):
        x, y = a * c + s, b * c + s
        lo.append(min(x, y))
        hi.append(max(x, y))
    return DomainBox(tuple(lo), tuple(hi))


def _num(value, key):
    e = parse(value, (), key)
    return e


def _constant_rho(rho):
    if rho.free_symbols:
        return None
    return rho


class Transform:
    """Base class; subclasses implement :meth:`apply` and :meth:`to_dict`."""

    kind = "transform"

    def apply(self, sol):
        raise NotImplementedError

    def __call__(self, sol):
        return self.apply(sol)

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Identity(Transform):
    kind = "identity"

    def apply(self, sol):
        return sol

    def to_dict(self):
        return {"type": self.kind}


@dataclass(frozen=True)
class TimeShift(Transform):
    dt: object = 0
    kind = "time_shift"

    def apply(self, sol):
        d = _num(self.dt, "time_shift.dt")
        parts = _subs_all(_parts(sol), {T: T - d})
        dom = _scale_ranges(sol.domain, (1, 1, 1, 1), (float(d), 0, 0, 0))
        return _rebuild(sol, *parts, dom, self.to_dict())

    def to_dict(self):
        return {"type": self.kind, "dt": str(self.dt)}


@dataclass(frozen=True)
class Rotation(Transform):
    axis: tuple = (0, 0, 1)
    angle: object = 0
    kind = "rotation"

    def matrix(self):
        n = sp.Matrix([_num(c, f"rotation.axis[{i}]") for i, c in enumerate(self.axis)])
        norm = sp.sqrt(sum(c ** 2 for c in n))
        if float(norm) == 0:
            raise TransformError("rotation axis must be nonzero")
        n = n / norm
        th = _num(self.angle, "rotation.angle")
        K = sp.Matrix([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
        return sp.eye(3) * sp.cos(th) + K * sp.sin(th) + (1 - sp.cos(th)) * (n * n.T)

    def apply(self, sol):
        gamma, rho, press, total, f = _parts(sol)
        R = self.matrix()
        g = list(R * sp.Matrix(gamma))
        return _rebuild(sol, g, rho, press, total, f, sol.domain, self.to_dict())

    def to_dict(self):
        return {"type": self.kind, "axis": [str(c) for c in self.axis], "angle": str(self.angle)}


@dataclass(frozen=True)
class Dilation1(Transform):
    """Uniform dilation of (t, xi, gamma); rho and P are carried along unchanged."""

    eps: object = 0
    kind = "dilation1"

    def apply(self, sol):
        e = _num(self.eps, "dilation1.eps")
        k = sp.exp(-e)
        gamma, rho, press, total, f = _subs_all(_parts(sol), {c: k * c for c in COORDS})
        gamma = [sp.exp(e) * g for g in gamma]
        s = math.exp(float(e))
        dom = _scale_ranges(sol.domain, (s, s, s, s))
        return _rebuild(sol, gamma, rho, press, total, f, dom, self.to_dict())

    def to_dict(self):
        return {"type": self.kind, "eps": str(self.eps)}


@dataclass(frozen=True)
class Dilation2(Transform):
    eps: object = 0
    kind = "dilation2"

    def apply(self, sol):
        e = _num(self.eps, "dilation2.eps")
        parts = _parts(sol)
        if _constant_rho(parts[1]) is None or sol.pressure.kind != "total":
            raise TransformError("Dilation2 needs the incompressible form (constant rho, total pressure)")
        k = sp.exp(-3 * e)
        gamma, rho, press, total, f = _subs_all(parts, {XI2: k * XI2, XI3: k * XI3})
        gamma = [sp.exp(2 * e) * g for g in gamma]
        press = sp.exp(4 * e) * press
        s = math.exp(3 * float(e))
        dom = _scale_ranges(sol.domain, (1, 1, s, s))
        return _rebuild(sol, gamma, rho, press, total, f, dom, self.to_dict())

    def to_dict(self):
        return {"type": self.kind, "eps": str(self.eps)}


@dataclass(frozen=True)
class GeneralizedGalilean(Transform):
    """gamma' = gamma + alpha(t); the total pressure absorbs the inertial force.

    With constant density rho0 the pressure correction is
    -rho0 (gamma . alpha'' + alpha . alpha'' / 2).  For a gas-pressure model
    only alpha'' = 0 (uniform motion) is admitted.
    """

    alpha: tuple = (0, 0, 0)
    kind = "galilean"

    def vector(self):
        return parse_vector(list(self.alpha), (T,), key="galilean.alpha")

    def apply(self, sol):
        gamma, rho, press, total, f = _parts(sol)
        al = self.vector()
        acc = [sp.diff(a, T, 2) for a in al]
        accel = any(sp.simplify(a) != 0 for a in acc)
        if accel:
            rho0 = _constant_rho(rho)
            if rho0 is None or sol.pressure.kind != "total":
                raise TransformError(
                    "an accelerated Galilean transform needs constant density and a total-pressure model"
                )
            dot = sum(g * a for g, a in zip(gamma, acc))
            half = sum(a * b for a, b in zip(al, acc)) / 2
            press = press - rho0 * (dot + half)
        new_gamma = [g + a for g, a in zip(gamma, al)]
        return _rebuild(sol, new_gamma, rho, press, total, f, sol.domain, self.to_dict())

    def to_dict(self):
        return {"type": self.kind, "alpha": [str(a) for a in self.alpha]}


@dataclass(frozen=True)
class PressureShift(Transform):
    beta: object = 0
    kind = "pressure_shift"

    def apply(self, sol):
        if sol.pressure.kind != "total":
            raise TransformError("PressureShift applies to the total pressure of the incompressible form")
        gamma, rho, press, total, f = _parts(sol)
        b = parse(self.beta, (T,), key="pressure_shift.beta")
        return _rebuild(sol, gamma, rho, press + b, total, f, sol.domain, self.to_dict())

    def to_dict(self):
        return {"type": self.kind, "beta": str(self.beta)}


def _relabel_inverse(inverse, forward, key):
    """Old (xi2, xi3) as expressions in the new (xi2, xi3)."""
    if inverse is not None:
        return parse_vector(list(inverse), (XI2, XI3), key=f"{key}.inverse", n=2)
    if forward is None:
        raise TransformError(f"{key}: give the relabelling as 'inverse' (or a solvable 'forward')")
    fw = parse_vector(list(forward), (XI2, XI3), key=f"{key}.forward", n=2)
    n2, n3 = sp.symbols("n2 n3", real=True)
    sols = sp.solve([fw[0] - n2, fw[1] - n3], [XI2, XI3], dict=True)
    if len(sols) != 1:
        raise TransformError(f"{key}: cannot invert the forward relabelling uniquely; pass 'inverse'")
    s = sols[0]
    return [s[XI2].subs({n2: XI2, n3: XI3}, simultaneous=True), s[XI3].subs({n2: XI2, n3: XI3}, simultaneous=True)]


def _relabel_jacobian(psi):
    return sp.diff(psi[0], XI2) * sp.diff(psi[1], XI3) - sp.diff(psi[0], XI3) * sp.diff(psi[1], XI2)


def _sample_23(domain, n=33):
    a = np.linspace(domain.lo[2], domain.hi[2], n)
    b = np.linspace(domain.lo[3], domain.hi[3], n)
    return np.meshgrid(a, b, indexing="ij")


@dataclass(frozen=True)
class Reparametrization(Transform):
    """xi1' = xi1 + a(xi2, xi3) with a unit-Jacobian relabelling of (xi2, xi3).

    ``a`` is a function of the old labels.  ``inverse`` gives the old labels
    in terms of the new ones; ``domain`` optionally replaces the domain box.
    """

    a: object = 0
    inverse: tuple = None
    forward: tuple = None
    domain: object = None
    kind = "reparametrization"

    def apply(self, sol):
        psi = _relabel_inverse(self.inverse, self.forward, "reparametrization")
        jac = _relabel_jacobian(psi)
        dom = self.domain or sol.domain
        M2, M3 = _sample_23(dom)
        jv = lambdify([XI2, XI3], [jac])(M2, M3)[0]
        worst = float(np.max(np.abs(jv - 1.0)))
        if not worst <= JACOBIAN_TOL:
            raise TransformError(f"reparametrization Jacobian deviates from 1 by {worst:.3e}")
        a = parse(self.a, (XI2, XI3), key="reparametrization.a")
        old1 = XI1 - a.subs({XI2: psi[0], XI3: psi[1]}, simultaneous=True)
        parts = _subs_all(_parts(sol), {XI1: old1, XI2: psi[0], XI3: psi[1]})
        return _rebuild(sol, *parts, dom, self.to_dict())

    def to_dict(self):
        d = {"type": self.kind, "a": str(self.a)}
        if self.inverse is not None:
            d["inverse"] = [str(c) for c in self.inverse]
        if self.forward is not None:
            d["forward"] = [str(c) for c in self.forward]
        if self.domain is not None:
            d["domain"] = self.domain.to_dict()
        return d


@dataclass(frozen=True)
class CauchyEquivalence(Transform):
    """Relabelling of (xi2, xi3) with Jacobian D != 0; f' = f / D."""

    inverse: tuple = None
    forward: tuple = None
    domain: object = None
    kind = "cauchy_equivalence"

    def apply(self, sol):
        psi = _relabel_inverse(self.inverse, self.forward, "cauchy_equivalence")
        jac = _relabel_jacobian(psi)  # = 1 / D at the image point
        dom = self.domain or sol.domain
        M2, M3 = _sample_23(dom)
        jv = lambdify([XI2, XI3], [jac])(M2, M3)[0]
        if not np.all(np.isfinite(jv)) or np.any(jv == 0) or (jv.min() < 0 < jv.max()):
            raise TransformError("CauchyEquivalence needs a nonvanishing Jacobian")
        gamma, rho, press, total, f = _subs_all(_parts(sol), {XI2: psi[0], XI3: psi[1]})
        return _rebuild(sol, gamma, rho, press, total, f * jac, dom, self.to_dict())

    def to_dict(self):
        d = {"type": self.kind}
        if self.inverse is not None:
            d["inverse"] = [str(c) for c in self.inverse]
        if self.forward is not None:
            d["forward"] = [str(c) for c in self.forward]
        if self.domain is not None:
            d["domain"] = self.domain.to_dict()
        return d


@dataclass(frozen=True)
class Pipeline(Transform):
    steps: tuple = field(default_factory=tuple)
    kind = "pipeline"

    def apply(self, sol):
        for st in self.steps:
            sol = st.apply(sol)
        return sol

    def to_dict(self):
        return {"type": self.kind, "steps": [s.to_dict() for s in self.steps]}


def compose(transforms):
    """Pipeline applying ``transforms`` left to right."""
    transforms = list(transforms)
    if not transforms:
        raise TransformError("compose needs at least one transform")
    flat = []
    for tr in transforms:
        flat.extend(tr.steps if isinstance(tr, Pipeline) else [tr])
    return Pipeline(tuple(flat))


def apply(tr, sol):
    return tr.apply(sol)


# ---------------------------------------------------------------------------
# compressible equivalence group
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompressibleEquivalence:
    """Scalings (alpha, beta) and pressure shift kappa of the compressible system.

    Acting on solutions::

        t' = alpha t,  xi1' = alpha^-2 xi1,  (xi2, xi3)' = alpha^-2 beta^3 (xi2, xi3),
        gamma' = beta^2 gamma,  rho' = alpha^-6 rho,  p' = alpha^-8 beta^4 p + kappa,

    and on the state function
    h'(p', rho') = alpha^-2 beta^4 h(alpha^8 beta^-4 (p' - kappa), alpha^6 rho').
    """

    alpha: float = 1.0
    beta: float = 1.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.alpha == 0 or self.beta == 0:
            raise TransformError("alpha and beta must be nonzero")

    def _sym(self):
        # exact rationals of the decimal parameters, so h and c map consistently
        return tuple(sp.Rational(str(v)) for v in (self.alpha, self.beta, self.kappa))

    def _frac(self):
        return tuple(Fraction(str(v)) for v in (self.alpha, self.beta, self.kappa))

    def pressure_scale(self):
        a, b, _ = self._frac()
        return a ** -8 * b ** 4

    def apply_h(self, h):
        from .classification import StateFunction

        a, b, k = self._sym()
        expr = a ** -2 * b ** 4 * h.expr.subs({P: a ** 8 * b ** -4 * (P - k), RHO: a ** 6 * RHO}, simultaneous=True)
        s = float(self.pressure_scale())
        plo, phi = sorted((s * h.p_range[0] + self.kappa, s * h.p_range[1] + self.kappa))
        r = self.alpha ** -6
        return StateFunction(expr, (plo, phi), (r * h.rho_range[0], r * h.rho_range[1]), name=f"{h.name}'")

    def map_c(self, c):
        """Image of the extension-operator constants (c1, c2, c3), exact for rational input."""
        c1, c2, c3 = (Fraction(v) if not isinstance(v, float) else Fraction(str(v)) for v in c)
        kappa = self._frac()[2]
        return (c1, c2, self.pressure_scale() * c3 - kappa * (4 * c2 - 8 * c1))

    def apply(self, sol):
        if sol.pressure.kind != "gas":
            raise TransformError("CompressibleEquivalence acts on gas-pressure Solutions")
        a, b, k = self._sym()
        mapping = {T: T / a, XI1: a ** 2 * XI1, XI2: a ** 2 * b ** -3 * XI2, XI3: a ** 2 * b ** -3 * XI3}
        gamma, rho, press, total, f = _subs_all(_parts(sol), mapping)
        gamma = [b ** 2 * g for g in gamma]
        rho = a ** -6 * rho
        press = a ** -8 * b ** 4 * press + k
        if total is not None:
            total = a ** -8 * b ** 4 * total + k
        al, be = float(self.alpha), float(self.beta)
        dom = _scale_ranges(sol.domain, (al, al ** -2, al ** -2 * be ** 3, al ** -2 * be ** 3))
        rec = {"type": "compressible_equivalence", "alpha": al, "beta": be, "kappa": float(self.kappa)}
        return _rebuild(sol, gamma, rho, press, total, f, dom, rec)

    def residual_scales(self):
        """Factors by which (momentum, constraint, state) residuals scale under the map."""
        a, b = float(self.alpha), float(self.beta)
        return b ** 2 / a ** 2, 1.0, b ** 4 / a ** 9


def apply_equiv_h(tr, h):
    return tr.apply_h(h)


# ---------------------------------------------------------------------------
# construction from plain dicts (config files)
# ---------------------------------------------------------------------------

def transform_from_dict(d, key="transform"):
    if not isinstance(d, dict) or "type" not in d:
        raise TransformError(f"{key}: expected a mapping with a 'type' field")
    kind = d["type"]

    def dom():
        if d.get("domain") is None:
            return None
        from .config import domain_from_dict

        return domain_from_dict(d["domain"], f"{key}.domain")

    try:
        if kind == "identity":
            return Identity()
        if kind == "time_shift":
            return TimeShift(d.get("dt", 0))
        if kind == "rotation":
            return Rotation(tuple(d.get("axis", (0, 0, 1))), d.get("angle", 0))
        if kind == "dilation1":
            return Dilation1(d.get("eps", 0))
        if kind == "dilation2":
            return Dilation2(d.get("eps", 0))
        if kind == "galilean":
            al = d.get("alpha", (0, 0, 0))
            if isinstance(al, str):
                al = parse_vector(al, (T,), key=f"{key}.alpha")
            return GeneralizedGalilean(tuple(al))
        if kind == "pressure_shift":
            return PressureShift(d.get("beta", 0))
        if kind == "reparametrization":
            return Reparametrization(
                d.get("a", 0), _tup(d.get("inverse")), _tup(d.get("forward")), dom()
            )
        if kind == "cauchy_equivalence":
            return CauchyEquivalence(_tup(d.get("inverse")), _tup(d.get("forward")), dom())
        if kind == "pipeline":
            return compose([transform_from_dict(s, f"{key}.steps[{i}]") for i, s in enumerate(d.get("steps", []))])
    except TransformError:
        raise
    except (TypeError, ValueError) as exc:
        raise TransformError(f"{key}: {exc}") from None
    raise TransformError(f"{key}.type: unknown transform {kind!r}")


def _tup(v):
    if v is None:
        return None
    if isinstance(v, str):
        return tuple(s.strip() for s in v.split(","))
    return tuple(v)
