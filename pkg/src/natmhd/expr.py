"""Expression grammar for free functions.

Free functions (the arbitrary functions of the exact families, transform
parameters, initial fields, state functions) are written as strings and
parsed with sympy into closed-form expressions.  Only a fixed set of
elementary functions and named variables is accepted; anything else raises
:class:`ExpressionError` naming the offending config key.
"""

from dataclasses import dataclass

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

# natural coordinates, xi^0 = t
T, XI1, XI2, XI3 = sp.symbols("t xi1 xi2 xi3", real=True)
COORDS = (T, XI1, XI2, XI3)

# arguments used by the free functions
MU = sp.Symbol("mu", real=True)  # t + xi1
S = sp.Symbol("s", real=True)  # t - xi1
LAM = sp.Symbol("lam", real=True)
X, Y, Z = sp.symbols("x y z", real=True)
P, RHO = sp.symbols("p rho", real=True)

VARIABLES = {s.name: s for s in (T, XI1, XI2, XI3, MU, S, LAM, X, Y, Z, P, RHO)}

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "tanh": sp.tanh,
    "asin": sp.asin,
    "acos": sp.acos,
    "atan": sp.atan,
    "atan2": sp.atan2,
    "abs": sp.Abs,
}
CONSTANTS = {"pi": sp.pi, "E": sp.E}

_TRANSFORMS = standard_transformations + (convert_xor,)


class ExpressionError(ValueError):
    """An expression string could not be parsed or uses a disallowed name."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def parse(text, allowed=None, key=None):
    """Parse ``text`` into a sympy expression over the ``allowed`` variables.

    ``text`` may also be a number or an existing sympy expression.  ``^`` is
    accepted as power.
    """
    if isinstance(text, sp.Basic):
        expr = text
    elif isinstance(text, bool):
        raise ExpressionError("booleans are not expressions", key)
    elif isinstance(text, (int, float)):
        expr = sp.nsimplify(text) if float(text).is_integer() else sp.Float(text)
    elif isinstance(text, str):
        local = dict(FUNCTIONS)
        local.update(CONSTANTS)
        local.update(VARIABLES)
        try:
            expr = parse_expr(text, local_dict=local, transformations=_TRANSFORMS, evaluate=True)
        except Exception as exc:  # sympy raises a zoo of types here
            raise ExpressionError(f"cannot parse {text!r} ({exc.__class__.__name__})", key) from None
    else:
        raise ExpressionError(f"expected an expression string, got {type(text).__name__}", key)

    if not isinstance(expr, sp.Expr):
        raise ExpressionError(f"{text!r} is not a scalar expression", key)
    undefined = expr.atoms(AppliedUndef)
    if undefined:
        names = sorted(str(u.func) for u in undefined)
        raise ExpressionError(f"unknown function(s) {', '.join(names)}", key)
    if allowed is not None:
        allowed = set(allowed)
        extra = {s for s in expr.free_symbols if s not in allowed}
        if extra:
            names = ", ".join(sorted(s.name for s in extra))
            ok = ", ".join(sorted(s.name for s in allowed)) or "none"
            raise ExpressionError(f"unknown symbol(s) {names} (allowed: {ok})", key)
    if expr.has(sp.zoo, sp.nan, sp.oo, -sp.oo):
        raise ExpressionError(f"{text!r} is not finite", key)
    return expr


def parse_vector(items, allowed=None, key=None, n=3):
    if isinstance(items, str):
        items = [s.strip() for s in _split_top_level(items)]
    if len(items) != n:
        raise ExpressionError(f"expected {n} components, got {len(items)}", key)
    return [parse(it, allowed, f"{key}[{i}]" if key else None) for i, it in enumerate(items)]


def _split_top_level(text):
    """Split on commas that are not nested inside parentheses."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def to_text(expr):
    """Render an expression back to grammar text (round-trips through :func:`parse`)."""
    return sp.sstr(expr, full_prec=False).replace("**", "^")


def lambdify(args, exprs, modules="numpy"):
    """Vectorized evaluator returning one array per expression, broadcast to the input shape."""
    fn = sp.lambdify(args, list(exprs), modules=modules, cse=True)

    def call(*arrays):
        arrays = [np.asarray(a) for a in arrays]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        dtype = np.result_type(*arrays, np.float64) if arrays else np.float64
        out = fn(*arrays)
        return [np.broadcast_to(np.asarray(o, dtype=dtype), shape) for o in out]

    return call


@dataclass(frozen=True)
class ScalarFn:
    """A smooth scalar function of named arguments with closed-form derivatives."""

    expr: sp.Expr
    args: tuple

    @classmethod
    def parse(cls, text, args, key=None):
        args = tuple(args)
        return cls(parse(text, args, key), args)

    def __call__(self, *values):
        fn = lambdify(self.args, [self.expr])
        return fn(*values)[0]

    def diff(self, i=0):
        return ScalarFn(sp.diff(self.expr, self.args[i]), self.args)

    def at(self, *exprs):
        """Compose: substitute argument expressions and return a sympy expression."""
        return self.expr.subs(dict(zip(self.args, exprs)), simultaneous=True)

    @property
    def text(self):
        return to_text(self.expr)

    def is_constant(self):
        return not (self.expr.free_symbols & set(self.args))
