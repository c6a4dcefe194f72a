"""Exact constant-total-pressure families.

All builders assemble gamma(t, xi) symbolically from the free functions, so
every Solution they return has closed-form first and second partials.  Free
functions of one argument use ``mu = t + xi1`` (stationary part) or
``s = t - xi1`` (disturbances); functions of two arguments use (xi2, xi3).

Families
--------
field-aligned   gamma = tau(mu, xi2, xi3), det(d tau) = 1
dim3            gamma = (u1(s) + tau1, u2(s) + tau2, tau3(mu))
jet             dim3 with tau1, tau2 rotating/stretching a planar family (A, B)
dim2            gamma = (u(s) + tau1, tau2(mu, lam), tau3(mu, lam)), lam = lam(mu, xi2, xi3)
torus-knot      dim2 with lam = sqrt(b + B cos(phi + A)), tau2 + i tau3 = lam e^{i k mu}
"""

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import sympy as sp
from scipy.interpolate import CubicHermiteSpline

from .diffgeo import DomainBox, SymbolicMap
from .expr import COORDS, LAM, MU, S, T, XI1, XI2, XI3, lambdify, parse
from .solution import PressureModel, Solution, constant_map

MU_OF = T + XI1
S_OF = T - XI1
ARGS_MU = (MU,)
ARGS_S = (S,)
ARGS_23 = (XI2, XI3)
ARGS_3 = (MU, XI2, XI3)

CONSTRAINT_TOL = 1e-8
DEFAULT_DELTA = 1e-3
QUAD_TOL = 1e-10


class FamilyError(ValueError):
    """Family parameters violate the family's constraint."""


def _fn(value, args, key):
    return parse(value, args, key)


def _mu_range(domain):
    return domain.lo[0] + domain.lo[1], domain.hi[0] + domain.hi[1]


def _sample_box(domain, n=9):
    axes = [np.linspace(a, b, n) if b > a else np.array([a]) for a, b in domain.ranges]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _eval(expr, X):
    return lambdify(COORDS, [expr])(*(X[:, i] for i in range(4)))[0]


def _check_identity(lhs, rhs, domain, what, tol=CONSTRAINT_TOL):
    """Numerically check lhs == rhs over a sample of the domain box."""
    X = _sample_box(domain)
    diff = np.abs(_eval(lhs - rhs, X))
    if not np.all(np.isfinite(diff)):
        bad = X[~np.isfinite(diff)][0]
        raise FamilyError(f"{what}: non-finite value at {tuple(np.round(bad, 6))}")
    i = int(np.argmax(diff))
    if diff[i] > tol:
        raise FamilyError(
            f"{what}: violated by {diff[i]:.3e} (tol {tol:g}) at (t, xi1, xi2, xi3) = {tuple(np.round(X[i], 6))}"
        )
    return float(diff[i])


def _solution(gamma, f, domain, family, params, P0=1.0):
    return Solution(
        gamma=SymbolicMap(gamma, domain),
        density=constant_map(1, domain),
        pressure=PressureModel("total", constant_map(P0, domain)),
        cauchy_f=SymbolicMap([sp.sympify(f)], domain),
        domain=domain,
        family=family,
        params=params,
    )


def _depends_only_on_23(expr, domain, what):
    """Return expr as a function of (xi2, xi3) alone, checking t/xi1 independence."""
    e = sp.simplify(expr)
    if not e.free_symbols & {T, XI1}:
        return e
    frozen = e.subs({T: 0, XI1: 0})
    _check_identity(e, frozen, domain, what + " (must not depend on t or xi1)")
    return frozen


# ---------------------------------------------------------------------------
# field-aligned
# ---------------------------------------------------------------------------

def build_field_aligned(tau, domain, P0=1.0):
    """gamma(t, xi) = tau(t + xi1, xi2, xi3) with unit Jacobian; rho = 1, P = P0, f = 1."""
    comps = [_fn(c, ARGS_3, f"tau[{i}]") for i, c in enumerate(tau)]
    if len(comps) != 3:
        raise FamilyError("tau needs 3 components")
    jac = sp.Matrix([[sp.diff(c, v) for v in ARGS_3] for c in comps]).det()
    gamma = [c.subs(MU, MU_OF) for c in comps]
    _check_identity(jac.subs(MU, MU_OF), sp.Integer(1), domain, "unit Jacobian det(d tau/d(mu, xi2, xi3)) = 1")
    params = {"tau": [str(c) for c in comps], "P0": P0}
    return _solution(gamma, 1, domain, "field-aligned", params, P0)


# ---------------------------------------------------------------------------
# dim{sigma} = 3: tau3 depends on mu only
# ---------------------------------------------------------------------------

def build_dim3(tau1, tau2, tau3, domain, u1=0, u2=0, f=None, P0=1.0, family="dim3", params=None):
    """gamma = (u1(s) + tau1, u2(s) + tau2, tau3(mu)).

    The Cauchy function is f = tau3'(mu) * d(tau1, tau2)/d(xi2, xi3); that
    product must not depend on mu.  If ``f`` is given it is checked against it.
    """
    t1 = _fn(tau1, ARGS_3, "tau1")
    t2 = _fn(tau2, ARGS_3, "tau2")
    t3 = tau3 if isinstance(tau3, sp.Basic) and tau3.atoms(sp.Function) else _fn(tau3, ARGS_MU, "tau3")
    w1 = _fn(u1, ARGS_S, "u1")
    w2 = _fn(u2, ARGS_S, "u2")
    if t3.free_symbols - {MU}:
        raise FamilyError("tau3 may depend on mu only")
    prod = sp.diff(t3, MU) * (sp.diff(t1, XI2) * sp.diff(t2, XI3) - sp.diff(t1, XI3) * sp.diff(t2, XI2))
    prod = prod.subs(MU, MU_OF)
    f_expr = _depends_only_on_23(prod, domain, "tau3' * d(tau1, tau2)/d(xi2, xi3)")
    if f is not None:
        f_given = _fn(f, ARGS_23, "f")
        _check_identity(prod, f_given, domain, "Cauchy function f")
        f_expr = f_given
    gamma = [
        w1.subs(S, S_OF) + t1.subs(MU, MU_OF),
        w2.subs(S, S_OF) + t2.subs(MU, MU_OF),
        t3.subs(MU, MU_OF),
    ]
    _check_nonzero(f_expr, domain, "f")
    if params is None:
        params = {"tau1": str(t1), "tau2": str(t2), "tau3": str(t3), "u1": str(w1), "u2": str(w2), "P0": P0}
    return _solution(gamma, f_expr, domain, family, params, P0)


def _check_nonzero(f_expr, domain, what):
    X = _sample_box(domain)
    v = _eval(f_expr, X)
    if not np.all(np.isfinite(v)):
        raise FamilyError(f"{what} is not finite on the domain")
    if np.all(v == 0):
        raise FamilyError(f"{what} vanishes identically on the domain")


# ---------------------------------------------------------------------------
# jet: tau3 = integral of 1/(alpha beta)
# ---------------------------------------------------------------------------

def adaptive_simpson(fn, a, b, tol=QUAD_TOL, max_depth=50):
    """Vectorized adaptive Simpson rule for integrals of ``fn`` over intervals [a_i, b_i]."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = np.zeros(a.shape)
    # work items: (index, lo, hi, f(lo), f(mid), f(hi), whole, tol, depth)
    lo, hi = a.copy(), b.copy()
    mid = 0.5 * (lo + hi)
    flo, fmid, fhi = fn(lo), fn(mid), fn(hi)
    whole = (hi - lo) / 6.0 * (flo + 4 * fmid + fhi)
    idx = np.arange(a.size)
    tols = np.full(a.size, tol)
    depth = 0
    while idx.size:
        if depth > max_depth:
            raise FloatingPointError("adaptive Simpson: maximum recursion depth exceeded")
        m = 0.5 * (lo + hi)
        lm = 0.5 * (lo + m)
        rm = 0.5 * (m + hi)
        flm, frm = fn(lm), fn(rm)
        left = (m - lo) / 6.0 * (flo + 4 * flm + fmid)
        right = (hi - m) / 6.0 * (fmid + 4 * frm + fhi)
        err = left + right - whole
        done = np.abs(err) <= 15.0 * tols
        np.add.at(out, idx[done], (left + right + err / 15.0)[done])
        keep = ~done
        idx = np.concatenate([idx[keep], idx[keep]])
        lo, hi = np.concatenate([lo[keep], m[keep]]), np.concatenate([m[keep], hi[keep]])
        flo, fhi = np.concatenate([flo[keep], fmid[keep]]), np.concatenate([fmid[keep], fhi[keep]])
        fmid = np.concatenate([flm[keep], frm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        tols = np.concatenate([tols[keep], tols[keep]]) * 0.5
        depth += 1
    return out


_QUAD_COUNTER = itertools.count()


def quadrature_primitive(integrand, mu_lo, mu_hi, anchor=0.0, nodes=4097, tol=QUAD_TOL):
    """A sympy function F(mu) with F' = integrand(mu) exactly and F(anchor) = 0.

    Values come from adaptive Simpson on a dense node table, interpolated with
    cubic Hermite splines (the derivatives at nodes are exact).  Derivatives
    of F are symbolic, so residual checks never see the interpolation.
    """
    fn = lambdify([MU], [integrand])

    def g(m):
        return np.asarray(fn(m)[0], dtype=float)

    lo, hi = min(mu_lo, anchor), max(mu_hi, anchor)
    grid = np.linspace(lo, hi, nodes)
    gv = g(grid)
    if not np.all(np.isfinite(gv)):
        raise FamilyError("1/(alpha*beta) is not finite on the mu range (alpha or beta vanishes)")
    pieces = adaptive_simpson(g, grid[:-1], grid[1:], tol / nodes)
    vals = np.concatenate([[0.0], np.cumsum(pieces)])
    vals -= np.interp(anchor, grid, vals) if anchor not in grid else vals[int(np.searchsorted(grid, anchor))]
    spline = CubicHermiteSpline(grid, vals, gv, extrapolate=False)
    # re-anchor exactly
    vals -= float(spline(anchor))
    spline = CubicHermiteSpline(grid, vals, gv, extrapolate=False)
    name = f"tau3q{next(_QUAD_COUNTER)}"

    def fdiff(self, argindex=1):
        return integrand.subs(MU, self.args[0])

    cls = type(name, (sp.Function,), {"nargs": 1, "fdiff": fdiff, "_imp_": staticmethod(lambda m: spline(m))})
    cls.mu_range = (lo, hi)
    return cls(MU)


def _tau3_from(alpha, beta, domain):
    integrand = sp.simplify(1 / (alpha * beta))
    if not integrand.free_symbols:
        return integrand * MU, "closed-form"
    if integrand.is_rational_function(MU):
        prim = sp.integrate(integrand, MU)
        if not prim.has(sp.Integral) and prim.is_real is not False:
            return prim - prim.subs(MU, 0), "closed-form"
    lo, hi = _mu_range(domain)
    margin = 0.05 * (hi - lo) + 0.5
    return quadrature_primitive(integrand, lo - margin, hi + margin), "quadrature"


def build_jet(A, B, alpha, beta, a, b, phi, domain, u1=0, u2=0, P0=1.0):
    """Plasma jet: the planar family (A, B) rotated by phi(mu), stretched by alpha, beta, shifted by a, b.

    tau3 solves tau3'(mu) alpha beta = 1; f = d(A, B)/d(xi2, xi3).
    """
    A_, B_ = _fn(A, ARGS_23, "A"), _fn(B, ARGS_23, "B")
    al, be = _fn(alpha, ARGS_MU, "alpha"), _fn(beta, ARGS_MU, "beta")
    a_, b_, ph = _fn(a, ARGS_MU, "a"), _fn(b, ARGS_MU, "b"), _fn(phi, ARGS_MU, "phi")
    lo, hi = _mu_range(domain)
    mus = np.linspace(lo, hi, 2049)
    ab = lambdify([MU], [al * be])(mus)[0]
    if not np.all(np.isfinite(ab)) or np.any(ab == 0) or (ab.min() < 0 < ab.max()):
        raise FamilyError("alpha and beta must not vanish on the mu range")
    tau1 = a_ + al * (A_ * sp.cos(ph) + B_ * sp.sin(ph))
    tau2 = b_ - be * (A_ * sp.sin(ph) - B_ * sp.cos(ph))
    tau3, how = _tau3_from(al, be, domain)
    f = sp.simplify(sp.diff(A_, XI2) * sp.diff(B_, XI3) - sp.diff(A_, XI3) * sp.diff(B_, XI2))
    params = {
        "A": str(A_), "B": str(B_), "alpha": str(al), "beta": str(be), "a": str(a_), "b": str(b_),
        "phi": str(ph), "u1": str(u1), "u2": str(u2), "P0": P0, "tau3": how,
    }
    return build_dim3(tau1, tau2, tau3, domain, u1, u2, f=f, P0=P0, family="jet", params=params)


# ---------------------------------------------------------------------------
# dim{sigma} = 2: tau2, tau3 functions of (mu, lam)
# ---------------------------------------------------------------------------

def dim2_jacobian_product(tau1, tau2, tau3, lam):
    """|tau2_mu tau2_lam; tau3_mu tau3_lam| * |lam_2 lam_3; tau1_2 tau1_3| as an expression in (mu, xi2, xi3)."""
    j1 = sp.diff(tau2, MU) * sp.diff(tau3, LAM) - sp.diff(tau2, LAM) * sp.diff(tau3, MU)
    j1 = j1.subs(LAM, lam)
    j2 = sp.diff(lam, XI2) * sp.diff(tau1, XI3) - sp.diff(lam, XI3) * sp.diff(tau1, XI2)
    return j1 * j2


def build_dim2(tau1, tau2, tau3, lam, domain, u=0, f=None, P0=1.0, family="dim2", params=None):
    """gamma = (u(s) + tau1(mu, xi2, xi3), tau2(mu, lam), tau3(mu, lam)), lam = lam(mu, xi2, xi3).

    The product of the two Jacobians is f(xi2, xi3); it must not depend on mu.
    """
    t1 = _fn(tau1, ARGS_3, "tau1")
    t2 = _fn(tau2, (MU, LAM), "tau2")
    t3 = _fn(tau3, (MU, LAM), "tau3")
    lm = _fn(lam, ARGS_3, "lambda")
    w = _fn(u, ARGS_S, "u")
    if sp.diff(lm, XI2) == 0 and sp.diff(lm, XI3) == 0:
        raise FamilyError("lambda has zero gradient in (xi2, xi3): the second Jacobian vanishes")
    prod = dim2_jacobian_product(t1, t2, t3, lm).subs(MU, MU_OF)
    if f is not None:
        f_expr = _fn(f, ARGS_23, "f")
        _check_identity(prod, f_expr, domain, "Jacobian product = f")
    else:
        f_expr = _depends_only_on_23(prod, domain, "Jacobian product")
    if sp.simplify(f_expr) == 0:
        raise FamilyError("Jacobian product vanishes identically; f must be nonzero")
    _check_nonzero(f_expr, domain, "f")
    gamma = [
        w.subs(S, S_OF) + t1.subs(MU, MU_OF),
        t2.subs(LAM, lm).subs(MU, MU_OF),
        t3.subs(LAM, lm).subs(MU, MU_OF),
    ]
    if params is None:
        params = {"tau1": str(t1), "tau2": str(t2), "tau3": str(t3), "lambda": str(lm), "u": str(w), "P0": P0}
    return _solution(gamma, f_expr, domain, family, params, P0)


# ---------------------------------------------------------------------------
# torus / knot
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusKnotParams:
    A: object = "xi2"
    B: object = "xi3"
    phi: object = "3*mu"
    a: object = "0"
    b: object = "2"
    k: float = 2
    u: object = "0"
    delta: float = DEFAULT_DELTA
    P0: float = 1.0

    def __post_init__(self):
        if self.k == 0:
            raise FamilyError("k must be nonzero")
        if not self.delta > 0:
            raise FamilyError("margin delta must be positive")


def _margin_check(b_, B_, domain, delta):
    lo, hi = _mu_range(domain)
    mus = np.linspace(lo, hi, 513)
    x2 = np.linspace(domain.lo[2], domain.hi[2], 41)
    x3 = np.linspace(domain.lo[3], domain.hi[3], 41)
    bmin = float(np.min(lambdify([MU], [b_])(mus)[0]))
    M2, M3 = np.meshgrid(x2, x3, indexing="ij")
    Bmax = float(np.max(np.abs(lambdify([XI2, XI3], [B_])(M2, M3)[0])))
    if bmin - Bmax < delta:
        raise FamilyError(
            f"torus margin violated: min b(mu) - max |B| = {bmin - Bmax:.4g} < delta = {delta:g} "
            "(lambda^2 = b + B cos(phi + A) would vanish or go negative)"
        )


def build_torus_knot(params, domain):
    """Nested toroidal / knotted magnetic surfaces (stationary part plus disturbance u(t - xi1))."""
    A_, B_ = _fn(params.A, ARGS_23, "A"), _fn(params.B, ARGS_23, "B")
    ph = _fn(params.phi, ARGS_MU, "phi")
    a_, b_ = _fn(params.a, ARGS_MU, "a"), _fn(params.b, ARGS_MU, "b")
    k = sp.nsimplify(params.k)
    _margin_check(b_, B_, domain, params.delta)
    tau1 = a_ + B_ * sp.sin(ph + A_)
    lam = sp.sqrt(b_ + B_ * sp.cos(ph + A_))
    tau2 = LAM * sp.cos(k * MU)
    tau3 = LAM * sp.sin(k * MU)
    f = k * B_ / 2 * (sp.diff(A_, XI2) * sp.diff(B_, XI3) - sp.diff(A_, XI3) * sp.diff(B_, XI2))
    meta = {
        "A": str(A_), "B": str(B_), "phi": str(ph), "a": str(a_), "b": str(b_), "k": str(k),
        "u": str(params.u), "delta": params.delta, "P0": params.P0,
    }
    return build_dim2(tau1, tau2, tau3, lam, domain, u=params.u, f=f, P0=params.P0, family="torus-knot", params=meta)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

TWO_PI = 2 * math.pi
PRESET_DOMAIN = DomainBox((-TWO_PI, -TWO_PI, -TWO_PI, 0.0), (TWO_PI, 2 * TWO_PI, 2 * TWO_PI, 1.5))

SOL13 = TorusKnotParams(A="xi2", B="xi3", phi="3*mu", a="0", b="2", k=2)
SOL14 = TorusKnotParams(A="xi2", B="xi3", phi="3*mu", a="sin(3*mu)", b="3 + cos(3*mu)", k=2)


def sol13(u="0", domain=PRESET_DOMAIN):
    p = TorusKnotParams(**{**SOL13.__dict__, "u": u})
    sol = build_torus_knot(p, domain)
    return _retag(sol, "sol13")


def sol14(u="0", domain=PRESET_DOMAIN):
    p = TorusKnotParams(**{**SOL14.__dict__, "u": u})
    return _retag(build_torus_knot(p, domain), "sol14")


def _retag(sol, tag):
    from dataclasses import replace

    return replace(sol, family=f"torus-knot:{tag}")


# ---------------------------------------------------------------------------
# periods
# ---------------------------------------------------------------------------

def _as_pi_fraction(period):
    """period / pi as a Fraction, or None if not a rational multiple of pi."""
    if period is None:
        return None
    r = sp.nsimplify(period / sp.pi)
    if r.is_Rational:
        return Fraction(int(r.p), int(r.q))
    return None


def _lcm_fraction(x, y):
    num = math.lcm(x.numerator * y.denominator, y.numerator * x.denominator)
    return Fraction(num, x.denominator * y.denominator)


def minimal_period(sol, variable=XI1):
    """Least common period of gamma in ``variable`` (a rational multiple of pi), or None.

    None means the components are not jointly periodic over rational
    multiples of pi (quasi-periodic or aperiodic); closure is then not claimed.
    """
    if not isinstance(sol.gamma, SymbolicMap):
        return None
    total = None
    for e in sol.gamma.exprs:
        if variable not in e.free_symbols:
            continue
        per = _as_pi_fraction(sp.periodicity(e, variable))
        if per is None:
            return None
        total = per if total is None else _lcm_fraction(total, per)
    if total is None:
        return None
    return float(total) * math.pi
