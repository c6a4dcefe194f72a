"""Differential-geometry kernel for maps (t, xi1, xi2, xi3) -> R^3.

Index convention: Greek indices run over 0..3 with xi^0 = t; the spatial
Jacobian uses xi^1..xi^3.  Basis vectors are e_0 = (1, gamma_t) and
e_i = (0, gamma_{xi^i}) in R^4(t, x).

Maps come in two flavours.  :class:`SymbolicMap` carries sympy expressions
and returns exact partials.  :class:`CallableMap` wraps a black-box function
and differentiates it with central stencils (:class:`StencilConfig`).
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import sympy as sp

from . import _kernels
from .expr import COORDS, lambdify

SINGULAR_RTOL = 1e-12


class DomainError(ValueError):
    """A point lies outside the declared domain (or too close to its edge)."""


class SingularMetricError(ValueError):
    """The spatial Jacobian is (numerically) singular."""


class Point4(NamedTuple):
    t: float
    xi1: float
    xi2: float
    xi3: float


@dataclass(frozen=True)
class StencilConfig:
    order: int = 4
    step: float = 1e-3
    richardson: bool = False

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ValueError(f"stencil order must be 2 or 4, got {self.order}")
        if not self.step > 0:
            raise ValueError(f"stencil step must be positive, got {self.step}")

    @property
    def width(self):
        """Stencil half-width in units of the step."""
        return self.order // 2

    def steps(self, X):
        # relative step, floored at the absolute step for coordinates near 0
        return self.step * np.maximum(1.0, np.abs(X))

    def metadata(self):
        return {"mode": "finite-difference", "order": self.order, "step": self.step,
                "richardson": self.richardson}


CLOSED_FORM = {"mode": "closed-form"}


@dataclass(frozen=True)
class DomainBox:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 4 or len(hi) != 4:
            raise ValueError("domain box needs 4 ranges (t, xi1, xi2, xi3)")
        if any(not np.isfinite(v) for v in lo + hi) or any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid domain box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_ranges(cls, ranges):
        return cls(tuple(r[0] for r in ranges), tuple(r[1] for r in ranges))

    @property
    def ranges(self):
        return tuple(zip(self.lo, self.hi))

    def contains(self, X, margin=0.0):
        X = np.asarray(X, dtype=float)
        lo = np.asarray(self.lo) + margin
        hi = np.asarray(self.hi) - margin
        return np.all((X >= lo) & (X <= hi), axis=-1)

    def check(self, X, margin=0.0):
        inside = self.contains(X, margin)
        if not np.all(inside):
            bad = np.asarray(X, dtype=float).reshape(-1, 4)[~np.asarray(inside).reshape(-1)][0]
            raise DomainError(
                f"point {tuple(np.round(bad, 12))} is outside the domain box "
                f"{self.ranges}" + (f" shrunk by the stencil margin" if np.any(margin) else "")
            )

    def to_dict(self):
        names = ("t", "xi1", "xi2", "xi3")
        return {n: [a, b] for n, a, b in zip(names, self.lo, self.hi)}


def as_points(X):
    """Return ``(points (N, 4), single)`` for a point or a batch of points."""
    X = np.asarray(X, dtype=float)
    if X.shape == (4,):
        return X[None, :], True
    if X.ndim != 2 or X.shape[1] != 4:
        raise ValueError(f"expected points of shape (4,) or (N, 4), got {X.shape}")
    return X, False


class AnalyticMap:
    """Smooth map of (t, xi) with value, first and second partial access."""

    dim = 3
    domain = None

    @property
    def derivative_mode(self):
        raise NotImplementedError

    def value(self, X):
        """Values with shape (N, dim)."""
        raise NotImplementedError

    def jet(self, X):
        """Return (value (N, dim), d1 (N, 4, dim), d2 (N, 4, 4, dim))."""
        raise NotImplementedError

    def __call__(self, X):
        P, single = as_points(X)
        v = self.value(P)
        return v[0] if single else v


class SymbolicMap(AnalyticMap):
    """Closed-form map; components are sympy expressions in (t, xi1, xi2, xi3)."""

    def __init__(self, exprs, domain=None):
        if isinstance(exprs, sp.Basic):
            exprs = [exprs]
        self.exprs = tuple(sp.sympify(e) for e in exprs)
        self.dim = len(self.exprs)
        self.domain = domain
        self._value_fn = None
        self._jet_fn = None

    @property
    def derivative_mode(self):
        return "closed-form"

    def subs(self, mapping, domain=None):
        return SymbolicMap([e.subs(mapping, simultaneous=True) for e in self.exprs],
                           domain if domain is not None else self.domain)

    def value(self, X):
        if self._value_fn is None:
            self._value_fn = lambdify(COORDS, self.exprs)
        out = self._value_fn(*(X[..., i] for i in range(4)))
        return np.stack(out, axis=-1)

    def jet(self, X):
        if self._jet_fn is None:
            flat = list(self.exprs)
            for a in range(4):
                flat += [sp.diff(e, COORDS[a]) for e in self.exprs]
            for a in range(4):
                for b in range(a, 4):
                    flat += [sp.diff(e, COORDS[a], COORDS[b]) for e in self.exprs]
            self._jet_fn = lambdify(COORDS, flat)
        n, d = X.shape[0], self.dim
        out = np.stack(self._jet_fn(*(X[:, i] for i in range(4))), axis=-1)
        val = out[:, :d]
        d1 = out[:, d : 5 * d].reshape(n, 4, d)
        d2 = np.empty((n, 4, 4, d))
        k = 5 * d
        for a in range(4):
            for b in range(a, 4):
                d2[:, a, b] = d2[:, b, a] = out[:, k : k + d]
                k += d
        return val, d1, d2

    def __repr__(self):
        return f"SymbolicMap({list(self.exprs)})"


def _first_weights(order):
    if order == 2:
        return (-1, 1), (-0.5, 0.5)
    return (-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12)


def _second_weights(order):
    if order == 2:
        return (-1, 0, 1), (1.0, -2.0, 1.0)
    return (-2, -1, 0, 1, 2), (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12)


class CallableMap(AnalyticMap):
    """Black-box map differentiated by central finite differences.

    ``func`` takes points of shape (N, 4) and returns (N, dim).
    """

    def __init__(self, func, dim=3, domain=None, stencil=None):
        self.func = func
        self.dim = dim
        self.domain = domain
        self.stencil = stencil or StencilConfig()

    @property
    def derivative_mode(self):
        return "finite-difference"

    def _eval(self, X):
        v = np.asarray(self.func(X), dtype=float).reshape(X.shape[0], self.dim)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("map evaluation returned non-finite values")
        return v

    def value(self, X):
        return self._eval(X)

    def check_margin(self, X, cfg=None):
        cfg = cfg or self.stencil
        if self.domain is None:
            return
        H = cfg.steps(X) * cfg.width
        lo = np.asarray(self.domain.lo)
        hi = np.asarray(self.domain.hi)
        ok = np.all((X - H >= lo) & (X + H <= hi), axis=-1)
        if not np.all(ok):
            bad = X[~ok][0]
            raise DomainError(
                f"point {tuple(np.round(bad, 12))} is closer than the stencil width "
                f"to the domain boundary {self.domain.ranges}"
            )

    def _raw_jet(self, X, H, order, need_second=True):
        n, d = X.shape[0], self.dim
        f0 = self._eval(X)
        d1 = np.empty((n, 4, d))
        d2 = np.empty((n, 4, 4, d))
        offs, w = _first_weights(order)
        cache = {}

        def shifted(a, k):
            key = (a, k)
            if key not in cache:
                Y = X.copy()
                Y[:, a] += k * H[:, a]
                cache[key] = self._eval(Y)
            return cache[key]

        for a in range(4):
            acc = np.zeros((n, d))
            for k, wk in zip(offs, w):
                acc += wk * shifted(a, k)
            d1[:, a] = acc / H[:, a, None]
        if not need_second:
            return f0, d1, None
        soffs, sw = _second_weights(order)
        for a in range(4):
            acc = np.zeros((n, d))
            for k, wk in zip(soffs, sw):
                acc += wk * (f0 if k == 0 else shifted(a, k))
            d2[:, a, a] = acc / (H[:, a, None] ** 2)
        for a in range(4):
            for b in range(a + 1, 4):
                acc = np.zeros((n, d))
                for ka, wa in zip(offs, w):
                    for kb, wb in zip(offs, w):
                        Y = X.copy()
                        Y[:, a] += ka * H[:, a]
                        Y[:, b] += kb * H[:, b]
                        acc += wa * wb * self._eval(Y)
                d2[:, a, b] = d2[:, b, a] = acc / (H[:, a, None] * H[:, b, None])
        return f0, d1, d2

    def jet(self, X, cfg=None, need_second=True):
        cfg = cfg or self.stencil
        self.check_margin(X, cfg)
        H = cfg.steps(X)
        f0, d1, d2 = self._raw_jet(X, H, cfg.order, need_second)
        if cfg.richardson:
            _, e1, e2 = self._raw_jet(X, 0.5 * H, cfg.order, need_second)
            c = 2.0 ** cfg.order
            d1 = (c * e1 - d1) / (c - 1.0)
            if need_second:
                d2 = (c * e2 - d2) / (c - 1.0)
        return f0, d1, d2


def as_fd(m, stencil=None):
    """Strip closed-form derivatives: the same map seen as a black box."""
    if isinstance(m, CallableMap):
        return m if stencil is None else CallableMap(m.func, m.dim, m.domain, stencil)
    return CallableMap(m.value, m.dim, m.domain, stencil)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def partial(m, at, direction, order=1, cfg=None):
    """Partial derivative of ``m`` along coordinate ``direction`` (0 = t).

    ``order`` is 1 or 2.  Closed-form maps bypass the stencil entirely.
    """
    if direction not in (0, 1, 2, 3):
        raise ValueError(f"direction must be 0..3, got {direction}")
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    X, single = as_points(at)
    if isinstance(m, CallableMap):
        _, d1, d2 = m.jet(X, cfg, need_second=(order == 2))
    else:
        if m.domain is not None:
            m.domain.check(X)
        _, d1, d2 = m.jet(X)
    out = d1[:, direction] if order == 1 else d2[:, direction, direction]
    return out[0] if single else out


def map_jet(m, X):
    X, _ = as_points(X)
    if m.domain is not None and not isinstance(m, CallableMap):
        m.domain.check(X)
    return m.jet(X)


def spatial_jacobian(d1):
    """Columns are d gamma / d xi^1..3."""
    return np.stack([d1[:, 1], d1[:, 2], d1[:, 3]], axis=-1)


def singular_mask(J):
    det = _kernels.det3(np.ascontiguousarray(J))
    scale = np.max(np.linalg.norm(J, axis=1), axis=-1)
    return det, np.abs(det) <= SINGULAR_RTOL * scale ** 3


def jacobian(m, at):
    """Spatial Jacobian matrix and determinant at ``at``."""
    X, single = as_points(at)
    _, d1, _ = map_jet(m, X) if not isinstance(m, CallableMap) else m.jet(X, need_second=False)
    J = spatial_jacobian(d1)
    det = _kernels.det3(np.ascontiguousarray(J))
    return (J[0], det[0]) if single else (J, det)


@dataclass(frozen=True)
class MetricTensor:
    g: np.ndarray
    g_inv: np.ndarray
    det_g: np.ndarray


@dataclass(frozen=True)
class ChristoffelField:
    # gamma[..., c, a, b] = Gamma^c_ab
    gamma: np.ndarray

    def trace(self):
        """Gamma^b_ab for each a."""
        return np.einsum("...bab->...a", self.gamma)


def _basis(d1):
    n = d1.shape[0]
    E = np.zeros((n, 4, 4))
    E[:, 0, 0] = 1.0
    E[:, :, 1:] = d1
    return E


def _basis_inverse(d1):
    J = spatial_jacobian(d1)
    Ji = _kernels.inv3(np.ascontiguousarray(J))
    JiT = np.transpose(Ji, (0, 2, 1))
    n = d1.shape[0]
    Ei = np.zeros((n, 4, 4))
    Ei[:, 0, 0] = 1.0
    Ei[:, 0, 1:] = -np.einsum("ni,nij->nj", d1[:, 0], JiT)
    Ei[:, 1:, 1:] = JiT
    return Ei


def _metric_from_d1(d1):
    J = spatial_jacobian(d1)
    det, sing = singular_mask(J)
    if np.any(sing):
        raise SingularMetricError(f"|det J| below {SINGULAR_RTOL:g} * scale^3 at {int(sing.sum())} point(s)")
    E = _basis(d1)
    g = np.einsum("nai,nbi->nab", E, E)
    Ei = _basis_inverse(d1)
    g_inv = np.einsum("nia,nib->nab", Ei, Ei)
    return MetricTensor(g, g_inv, det ** 2)


def metric(m, at):
    """Covariant/contravariant metric and its determinant at ``at``."""
    X, single = as_points(at)
    if isinstance(m, CallableMap):
        _, d1, _ = m.jet(X, need_second=False)
    else:
        _, d1, _ = map_jet(m, X)
    mt = _metric_from_d1(d1)
    if single:
        return MetricTensor(mt.g[0], mt.g_inv[0], mt.det_g[0])
    return mt


def metric_derivatives(d1, d2):
    """dg[:, l, a, b] = d g_ab / d xi^l from the first and second partials."""
    E = _basis(d1)
    n = d1.shape[0]
    dE = np.zeros((n, 4, 4, 4))  # dE[:, l, a, :] = d e_a / d xi^l
    dE[:, :, :, 1:] = np.transpose(d2, (0, 2, 1, 3))
    return np.einsum("nlai,nbi->nlab", dE, E) + np.einsum("nai,nlbi->nlab", E, dE)


def christoffel(m, at):
    """Christoffel symbols of the second kind from the metric formula."""
    X, single = as_points(at)
    _, d1, d2 = m.jet(X) if isinstance(m, CallableMap) else map_jet(m, X)
    mt = _metric_from_d1(d1)
    dg = metric_derivatives(d1, d2)
    G = _kernels.christoffel(np.ascontiguousarray(mt.g_inv), np.ascontiguousarray(dg))
    return ChristoffelField(G[0] if single else G)
