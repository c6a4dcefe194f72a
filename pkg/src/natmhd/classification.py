"""Group classification of the compressible system with respect to h(p, rho).

The kernel symmetry algebra extends by

    Y = c1 Y1 + c2 Y2 + c3 Y3

exactly when the classifying equation

    2 c1 (h + 4 p h_p + 5 rho h_rho) - 4 c2 (p h_p + rho h_rho) - c3 h_p = 0

holds identically in (p, rho).  Rows 1..9 below are the canonical classes;
each carries the c-vectors spanning its admitted extension.

Sample evaluation is done in extended precision (``np.longdouble``) so the
absolute 1e-10 cancellation check is meaningful for fast-growing templates.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import sympy as sp

from .expr import P, RHO, lambdify, parse

SAMPLE_BOX = ((0.1, 10.0), (0.1, 10.0))
N_SAMPLES = 1000
RESIDUAL_TOL = 1e-10
NEGATIVE_MIN = 1e-2
RANK_RTOL = 1e-9


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True)
class StateFunction:
    """Squared sound speed h(p, rho) with closed-form partials."""

    expr: sp.Expr
    p_range: tuple = SAMPLE_BOX[0]
    rho_range: tuple = SAMPLE_BOX[1]
    name: str = "h"

    def __post_init__(self):
        if self.rho_range[0] <= 0:
            raise ClassificationError("state function domain must have rho > 0")
        if self.expr.free_symbols - {P, RHO}:
            raise ClassificationError(f"h may depend on p and rho only, got {self.expr}")

    @classmethod
    def parse(cls, text, p_range=SAMPLE_BOX[0], rho_range=SAMPLE_BOX[1], name="h", key="h"):
        return cls(parse(text, (P, RHO), key), tuple(p_range), tuple(rho_range), name)

    @property
    def h_p(self):
        return sp.diff(self.expr, P)

    @property
    def h_rho(self):
        return sp.diff(self.expr, RHO)

    def _fn(self):
        fn = self.__dict__.get("_lam")
        if fn is None:
            fn = lambdify([P, RHO], [self.expr, self.h_p, self.h_rho])
            object.__setattr__(self, "_lam", fn)
        return fn

    def check_domain(self, p, rho):
        p = np.asarray(p)
        rho = np.asarray(rho)
        lo_p, hi_p = self.p_range
        lo_r, hi_r = self.rho_range
        eps = 1e-12 * max(1.0, abs(hi_p), abs(hi_r))
        if np.any(p < lo_p - eps) or np.any(p > hi_p + eps) or np.any(rho < lo_r - eps) or np.any(rho > hi_r + eps):
            raise ClassificationError(
                f"(p, rho) outside the state-function domain p in {self.p_range}, rho in {self.rho_range}"
            )

    def evaluate(self, p, rho):
        """(h, h_p, h_rho) in the dtype of the inputs."""
        return tuple(self._fn()(p, rho))

    def value(self, p, rho):
        return self.evaluate(p, rho)[0]

    def __call__(self, p, rho):
        return self.value(p, rho)


def class_vector(h, p, rho):
    """V = (h + 4 p h_p + 5 rho h_rho, p h_p + rho h_rho, h_p)."""
    hv, hp, hr = h.evaluate(p, rho)
    return np.stack([hv + 4 * p * hp + 5 * rho * hr, p * hp + rho * hr, hp * np.ones_like(hv)], axis=-1)


def _weights(V):
    # residual = W . c with W = (2 V1, -4 V2, -V3)
    return V * np.array([2, -4, -1], dtype=V.dtype)


def classifying_residual(h, c, p, rho):
    h.check_domain(p, rho)
    c1, c2, c3 = c
    V = class_vector(h, p, rho)
    return 2 * c1 * V[..., 0] - 4 * c2 * V[..., 1] - c3 * V[..., 2]


def classifying_expr(h_expr, c):
    c1, c2, c3 = c
    hp, hr = sp.diff(h_expr, P), sp.diff(h_expr, RHO)
    return 2 * c1 * (h_expr + 4 * P * hp + 5 * RHO * hr) - 4 * c2 * (P * hp + RHO * hr) - c3 * hp


def _normalized_svd(M):
    M = np.asarray(M, dtype=float)
    norms = np.linalg.norm(M, axis=1)
    keep = norms > 0
    if not keep.any():
        return np.zeros(M.shape[1]), np.eye(M.shape[1])
    Mn = M[keep] / norms[keep, None]
    _, s, vt = np.linalg.svd(Mn, full_matrices=True)
    sv = np.zeros(M.shape[1])
    sv[: s.size] = s
    return sv, vt


def numerical_rank(M, rtol=RANK_RTOL):
    sv, _ = _normalized_svd(M)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def rank_V(h, samples):
    """Numerical rank of the sample matrix of the classifying vector."""
    samples = np.asarray(samples, dtype=np.longdouble)
    if samples.ndim != 2 or samples.shape[0] < 3:
        raise ClassificationError("rank_V needs at least 3 (p, rho) samples")
    h.check_domain(samples[:, 0], samples[:, 1])
    return numerical_rank(class_vector(h, samples[:, 0], samples[:, 1]))


def sample_points(h, n=N_SAMPLES, seed=0):
    """Seeded uniform samples over the state-function domain, in extended precision."""
    rng = np.random.default_rng(seed)
    u = rng.random((n, 2))
    p = np.longdouble(h.p_range[0]) + u[:, 0].astype(np.longdouble) * np.longdouble(h.p_range[1] - h.p_range[0])
    r = np.longdouble(h.rho_range[0]) + u[:, 1].astype(np.longdouble) * np.longdouble(h.rho_range[1] - h.rho_range[0])
    return np.stack([p, r], axis=-1)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

SLOTS = ("t", "xi1", "xi2", "xi3", "gamma1", "gamma2", "gamma3", "p", "rho")


def operator_Y(c):
    """Coefficients of the admitted-symmetry operator Y(c), slot by slot.

    Each slot maps to {monomial: coefficient} where the monomial is the slot
    variable itself (linear part) or "1" (constant part, only for p).
    """
    c1, c2, c3 = (Fraction(v) for v in c)
    out = {s: {} for s in SLOTS}
    out["t"]["t"] = c1
    out["xi1"]["xi1"] = -4 * c1 + 2 * c2
    out["xi2"]["xi2"] = c2
    out["xi3"]["xi3"] = c2
    for j in (1, 2, 3):
        out[f"gamma{j}"][f"gamma{j}"] = 2 * c1
    out["p"]["1"] = c3
    out["p"]["p"] = 4 * c2 - 8 * c1
    out["rho"]["rho"] = 4 * c2 - 10 * c1
    return out


def basis_operators():
    Y1 = {s: {} for s in SLOTS}
    Y1["t"]["t"] = Fraction(1)
    Y1["xi1"]["xi1"] = Fraction(-4)
    for j in (1, 2, 3):
        Y1[f"gamma{j}"][f"gamma{j}"] = Fraction(2)
    Y1["p"]["p"] = Fraction(-8)
    Y1["rho"]["rho"] = Fraction(-10)
    Y2 = {s: {} for s in SLOTS}
    Y2["xi1"]["xi1"] = Fraction(2)
    Y2["xi2"]["xi2"] = Fraction(1)
    Y2["xi3"]["xi3"] = Fraction(1)
    Y2["p"]["p"] = Fraction(4)
    Y2["rho"]["rho"] = Fraction(4)
    Y3 = {s: {} for s in SLOTS}
    Y3["p"]["1"] = Fraction(1)
    return Y1, Y2, Y3


def combine(coeffs, ops):
    out = {s: {} for s in SLOTS}
    for a, op in zip(coeffs, ops):
        a = Fraction(a)
        for s in SLOTS:
            for mono, v in op[s].items():
                out[s][mono] = out[s].get(mono, Fraction(0)) + a * v
    return {s: {m: v for m, v in d.items() if v != 0} for s, d in out.items()}


def operator_identity(c):
    """True when Y(c) == c1 Y1 + c2 Y2 + c3 Y3 on all nine slots (exact rationals)."""
    lhs = {s: {m: v for m, v in d.items() if v != 0} for s, d in operator_Y(c).items()}
    return lhs == combine(c, basis_operators())


# ---------------------------------------------------------------------------
# Table rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Table1Row:
    index: int
    template: str
    constraint: str
    extension: str
    expected_rank: int
    k: object = None
    h_expr: sp.Expr = None
    basis: tuple = field(default_factory=tuple)  # c-vectors spanning the admitted extension

    def state_function(self, p_range=SAMPLE_BOX[0], rho_range=SAMPLE_BOX[1]):
        return StateFunction(self.h_expr, p_range, rho_range, name=f"row{self.index}")


def _frac(v):
    return Fraction(str(v)) if not isinstance(v, Fraction) else v


def table_row(index, k=None):
    """Instantiate classification row ``index`` (1..9) with a concrete template."""
    if index not in range(1, 10):
        raise ClassificationError(f"row must be in 1..9, got {index}")
    if index == 1:
        return Table1Row(1, "h = 0", "none", "Y1, Y2, Y3", 0, None, sp.Integer(0),
                         ((1, 0, 0), (0, 1, 0), (0, 0, 1)))
    if index == 2:
        k = _frac(1 if k is None else k)
        if k == -1:
            raise ClassificationError("row 2 needs k != -1 (k = -1 is row 3)")
        return Table1Row(2, f"h = rho^{k}", "c1 (1 + 5k) = 2k c2", "2k Y1 + (1+5k) Y2, Y3", 1, k,
                         RHO ** sp.Rational(k.numerator, k.denominator),
                         ((2 * k, 1 + 5 * k, 0), (0, 0, 1)))
    if index == 3:
        return Table1Row(3, "h = 1/rho", "c2 = 2 c1", "Y1 + 2 Y2, Y3", 1, None, 1 / RHO,
                         ((1, 2, 0), (0, 0, 1)))
    if index == 4:
        k = _frac(1 if k is None else k)
        if k == 0:
            raise ClassificationError("row 4 needs k != 0")
        return Table1Row(4, f"h = {k} p/rho", "c3 = 0", "Y1, Y2", 1, k,
                         sp.Rational(k.numerator, k.denominator) * P / RHO, ((1, 0, 0), (0, 1, 0)))
    if index == 5:
        k = _frac(2 if k is None else k)
        kk = sp.Rational(k.numerator, k.denominator)
        z = RHO * P ** (kk - 1)
        return Table1Row(5, f"h = p^{k} f(rho p^({k}-1)), f(z) = exp(-z) + z",
                         "c1 (1 + 4k) = 2k c2, c3 = 0", "2k Y1 + (1+4k) Y2", 2, k,
                         P ** kk * (sp.exp(-z) + z), ((2 * k, 1 + 4 * k, 0),))
    if index == 6:
        return Table1Row(6, "h = f(rho e^p)/rho, f = identity (h = e^p)", "c2 = c3 = 2 c1",
                         "Y1 + 2 Y2 + 2 Y3", 2, None, sp.exp(P), ((1, 2, 2),))
    if index == 7:
        return Table1Row(7, "h = f(rho), f = rho + rho^2", "c1 = c2 = 0", "Y3", 2, None,
                         RHO + RHO ** 2, ((0, 0, 1),))
    if index == 8:
        return Table1Row(8, "h = f(p)/rho, f = p + p^2", "c2 = 2 c1, c3 = 0", "Y1 + 2 Y2", 2, None,
                         (P + P ** 2) / RHO, ((1, 2, 0),))
    return Table1Row(9, "h = p^2 + rho^3 (generic)", "c = 0", "none", 3, None, P ** 2 + RHO ** 3, ())


def _orthonormal_complement(basis, dim=3):
    if not basis:
        return np.eye(dim)
    B = np.array([[float(x) for x in b] for b in basis])
    _, s, vt = np.linalg.svd(B, full_matrices=True)
    r = int(np.sum(s > 1e-12 * s[0]))
    return vt[r:]


@dataclass
class RowReport:
    row: int
    template: str
    constraint: str
    extension: str
    passed: bool
    worst_residual: float
    min_negative: float
    negative_control: str
    expected_null_dim: int
    null_dim: int
    rank: int
    expected_rank: int
    symbolic_zero: bool
    operator_identity: bool
    n_samples: int
    trials: int
    equivalence: dict = None

    def to_dict(self):
        d = dict(self.__dict__)
        if d["equivalence"] is None:
            d.pop("equivalence")
        return d


def verify_table_row(row, trials=20, seed=0, n_samples=N_SAMPLES, equiv=None,
                     tol=RESIDUAL_TOL, negative_min=NEGATIVE_MIN):
    """Check a classification row numerically (and symbolically where sympy can).

    (i) random c in the admitted span annihilate the classifying equation on
    seeded samples (max |residual| <= tol); (ii) random c outside the span do
    not (max |residual| >= negative_min; for row 1, whose span is everything,
    the control perturbs h by rho instead); (iii) Y(c) == c1 Y1 + c2 Y2 + c3 Y3
    exactly for each spanning c.  The sample-matrix rank and null-space
    dimension are compared with the row's expectation.

    With ``equiv`` (a CompressibleEquivalence) the row's h and c-vectors are
    pushed through the equivalence map first.
    """
    if isinstance(row, int):
        row = table_row(row)
    h = row.state_function()
    basis = [tuple(_frac(x) for x in b) for b in row.basis]
    eq_info = None
    if equiv is not None:
        h = equiv.apply_h(h)
        basis = [tuple(equiv.map_c(b)) for b in basis]
        eq_info = {"alpha": equiv.alpha, "beta": equiv.beta, "kappa": equiv.kappa}

    seq = np.random.SeedSequence(seed)
    s_samples, s_pos, s_neg = seq.spawn(3)
    pts = sample_points(h, n_samples, s_samples)
    pp, rr = pts[:, 0], pts[:, 1]
    V = class_vector(h, pp, rr)
    W = _weights(V)

    # (i) admitted c
    rng = np.random.default_rng(s_pos)
    worst = 0.0
    Bf = np.array([[float(x) for x in b] for b in basis], dtype=np.longdouble) if basis else None
    if basis:
        for _ in range(trials):
            coef = rng.standard_normal(len(basis))
            c = (coef.astype(np.longdouble)[:, None] * Bf).sum(axis=0)
            c /= np.sqrt(np.sum(c * c))
            res = W @ c
            worst = max(worst, float(np.max(np.abs(res))))

    # (ii) negative controls
    rng = np.random.default_rng(s_neg)
    comp = _orthonormal_complement(basis)
    min_neg = np.inf
    if comp.shape[0]:
        control = "c outside the admitted span"
        for _ in range(trials):
            coef = rng.standard_normal(comp.shape[0])
            c = coef @ comp
            c /= np.linalg.norm(c)
            res = W @ c.astype(np.longdouble)
            min_neg = min(min_neg, float(np.max(np.abs(res))))
    else:
        control = "h perturbed by +rho, random c"
        hp = StateFunction(h.expr + RHO, h.p_range, h.rho_range, name=h.name + "+rho")
        Wp = _weights(class_vector(hp, pp, rr))
        for _ in range(trials):
            c = rng.standard_normal(3)
            c /= np.linalg.norm(c)
            res = Wp @ c.astype(np.longdouble)
            min_neg = min(min_neg, float(np.max(np.abs(res))))

    # (iii) operator identity for the spanning c (exact)
    ident = all(operator_identity(b) for b in basis) and operator_identity((1, 1, 1))

    # symbolic cancellation
    sym_ok = True
    for b in basis:
        e = classifying_expr(h.expr, tuple(sp.Rational(x.numerator, x.denominator) for x in b))
        if sp.simplify(e) != 0:
            sym_ok = False

    rank = numerical_rank(V)
    null_dim = 3 - numerical_rank(W)
    expected_null = len(basis)
    passed = (
        worst <= tol
        and min_neg >= negative_min
        and ident
        and sym_ok
        and null_dim == expected_null
        and rank == row.expected_rank
    )
    return RowReport(
        row=row.index, template=row.template, constraint=row.constraint, extension=row.extension,
        passed=bool(passed), worst_residual=worst, min_negative=float(min_neg), negative_control=control,
        expected_null_dim=expected_null, null_dim=null_dim, rank=rank, expected_rank=row.expected_rank,
        symbolic_zero=sym_ok, operator_identity=ident, n_samples=n_samples, trials=trials, equivalence=eq_info,
    )
