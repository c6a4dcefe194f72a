"""Natural-coordinate initial data from Eulerian initial fields.

Magnetic lines of b0 = B0/rho0 are traced from a transverse seed surface
s(xi2, xi3): dx/dxi1 = b0(x), x(xi1 = a) = s(xi2, xi3).  The tabulated map
gamma0 then gives f = rho0(gamma0) * det(d gamma0 / d xi), which should not
depend on xi1 when div B0 = 0.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from . import _kernels
from .expr import COORDS, XI2, XI3, X, Y, Z, lambdify, parse, parse_vector
from .geometry import FMT, Polyline, atomic_write
from .solution import EquationNorm, GridSpec, ResidualReport

DIV_TOL = 1e-6
TRANSVERSAL_MIN = 0.1
CHECK_TOL = 1e-5
XYZ = (X, Y, Z)


class FieldLineError(ValueError):
    pass


class DivergenceError(FieldLineError):
    pass


class TransversalityError(FieldLineError):
    pass


class LineEscapeError(FieldLineError):
    pass


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

_C_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_C_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_C_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def grid_derivative(arr, axis, spacing):
    """Fourth-order first derivative of samples on a uniform axis (one-sided at the ends)."""
    a = np.moveaxis(np.asarray(arr, dtype=float), axis, 0)
    n = a.shape[0]
    if n < 5:
        raise FieldLineError(f"FD needs at least 5 points per axis, got {n}")
    out = np.empty_like(a)
    out[2:-2] = sum(c * a[k : n - 4 + k] for k, c in enumerate(_C_CENTRAL))
    out[0] = sum(c * a[k] for k, c in enumerate(_C_EDGE0))
    out[1] = sum(c * a[k] for k, c in enumerate(_C_EDGE1))
    out[-1] = -sum(c * a[n - 1 - k] for k, c in enumerate(_C_EDGE0))
    out[-2] = -sum(c * a[n - 1 - k] for k, c in enumerate(_C_EDGE1))
    return np.moveaxis(out / spacing, 0, axis)


def _fd_divergence(F, pts, h):
    div = np.zeros(len(pts))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        div += (8 * (F(pts + e)[:, i] - F(pts - e)[:, i]) - (F(pts + 2 * e)[:, i] - F(pts - 2 * e)[:, i])) / (12 * h)
    return div


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def _box(box):
    box = tuple((float(a), float(b)) for a, b in box)
    if len(box) != 3 or any(not b > a for a, b in box):
        raise FieldLineError(f"x-domain needs 3 ranges with lo < hi, got {box}")
    return box


def _box_grid(box, n=9):
    axes = [np.linspace(a, b, n) for a, b in box]
    return np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=-1)


def _vector_fn(exprs):
    fn = lambdify(XYZ, exprs)

    def call(P):
        P = np.asarray(P, dtype=float)
        return np.stack(fn(P[:, 0], P[:, 1], P[:, 2]), axis=-1)

    return call


def _scalar_fn(expr):
    fn = lambdify(XYZ, [expr])

    def call(P):
        P = np.asarray(P, dtype=float)
        return fn(P[:, 0], P[:, 1], P[:, 2])[0].copy()

    return call


@dataclass
class EulerianInitialData:
    """B0, rho0, u0 as batch callables (N, 3) -> arrays, plus an x-domain box.

    ``samples`` are the points where div B0 and rho0 > 0 are checked
    (default: a 9^3 grid over the box).
    """

    B0: object
    rho0: object
    u0: object
    box: tuple
    samples: np.ndarray = None
    exprs: dict = None
    check: bool = True
    b0_func: object = None
    max_divergence: float = field(default=None, init=False)

    def __post_init__(self):
        self.box = _box(self.box)
        if self.samples is None:
            self.samples = _box_grid(self.box)
        self.max_divergence = self.divergence()
        if not self.check:
            return
        if not self.max_divergence <= DIV_TOL:
            raise DivergenceError(f"max |div B0| = {self.max_divergence:.3e} exceeds {DIV_TOL:g}")
        r = self.rho0(self.samples)
        if not np.all(np.isfinite(r) & (r > 0)):
            raise FieldLineError("rho0 must be positive on the sample grid")

    @classmethod
    def from_expressions(cls, B0, rho0="1", u0="0,0,0", box=((-1, 1),) * 3, check=True):
        B = parse_vector(B0, XYZ, key="B0")
        r = parse(rho0, XYZ, key="rho0")
        u = parse_vector(u0, XYZ, key="u0")
        exprs = {"B0": B, "rho0": r, "u0": u}
        return cls(_vector_fn(B), _scalar_fn(r), _vector_fn(u), box, exprs=exprs, check=check)

    def divergence(self):
        pts = self.samples
        if self.exprs is not None:
            div = sum(sp.diff(self.exprs["B0"][i], XYZ[i]) for i in range(3))
            vals = _scalar_fn(div)(pts)
        else:
            scale = max(1.0, max(abs(v) for r in self.box for v in r))
            vals = _fd_divergence(self.B0, pts, 1e-3 * scale)
        vals = np.abs(vals)
        return float(np.max(vals)) if np.all(np.isfinite(vals)) else float("nan")

    def b0(self, P):
        if self.b0_func is not None:
            return self.b0_func(P)
        return self.B0(P) / self.rho0(P)[:, None]

    def inside(self, P):
        lo = np.array([a for a, _ in self.box])
        hi = np.array([b for _, b in self.box])
        return np.all((P >= lo) & (P <= hi), axis=-1)

    @classmethod
    def from_solution(cls, sol, t0=0.0, xi_box=None, n=9, margin=0.25):
        """The Eulerian fields of a Solution at time t0, x -> xi by Newton inversion."""
        inv = InverseMap(sol, t0, xi_box)
        xs = inv.sample_points(n)
        lo, hi = xs.min(axis=0), xs.max(axis=0)
        pad = margin * (hi - lo).max()
        box = tuple(zip(lo - pad, hi + pad))
        return cls(inv.B, inv.rho, inv.u, box, samples=xs, b0_func=inv.b)


class InverseMap:
    """x -> xi for gamma(t0, .) by Newton's method with warm starts."""

    def __init__(self, sol, t0=0.0, xi_box=None, tol=1e-13, max_iter=40):
        exprs = sol.gamma.exprs
        dens = sol.density.exprs[0]
        flat = list(exprs) + [sp.diff(e, c) for c in COORDS for e in exprs] + [dens]
        self._fn = lambdify(COORDS, flat)
        self.t0 = float(t0)
        ranges = xi_box if xi_box is not None else sol.domain.ranges[1:]
        self.xi_box = tuple((float(a), float(b)) for a, b in ranges)
        self.tol = tol
        self.max_iter = max_iter
        self._guess = None
        self._tree = None
        self._last = (None, None)

    def _eval(self, xi):
        t = np.full(len(xi), self.t0)
        out = np.stack(self._fn(t, xi[:, 0], xi[:, 1], xi[:, 2]), axis=-1)
        val = out[:, :3]
        d1 = out[:, 3:15].reshape(-1, 4, 3)
        return val, d1, out[:, 15]

    def sample_points(self, n=9, shrink=0.1):
        axes = []
        for a, b in self.xi_box:
            d = shrink * (b - a)
            axes.append(np.linspace(a + d, b - d, n))
        xi = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
        return self._eval(xi)[0]

    def _initial(self, P):
        if self._tree is None:
            axes = [np.linspace(a, b, 40) for a, b in self.xi_box]
            xi = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
            x = self._eval(xi)[0]
            ok = np.all(np.isfinite(x), axis=1)
            self._tree = (cKDTree(x[ok]), xi[ok])
        tree, xi = self._tree
        _, idx = tree.query(P)
        return xi[idx].copy()

    def solve(self, P):
        P = np.asarray(P, dtype=float)
        if self._guess is not None and self._guess.shape == P.shape:
            xi = self._guess.copy()
        else:
            xi = self._initial(P)
        scale = max(1.0, float(np.max(np.abs(P))))
        for _ in range(self.max_iter):
            val, d1, _ = self._eval(xi)
            r = val - P
            if np.max(np.abs(r)) <= self.tol * scale:
                break
            J = np.transpose(d1[:, 1:4, :], (0, 2, 1))
            xi = xi - np.linalg.solve(J, r[..., None])[..., 0]
        else:
            val = self._eval(xi)[0]
            bad = np.max(np.abs(val - P), axis=1) > 1e-9 * scale
            xi[bad] = np.nan
        self._guess = xi.copy()
        return xi

    def _at(self, P):
        P = np.asarray(P, dtype=float)
        key, out = self._last
        if key is None or key.shape != P.shape or not np.array_equal(key, P):
            out = self._eval(self.solve(P))
            self._last = (P.copy(), out)
        return out

    def B(self, P):
        _, d1, rho = self._at(P)
        return rho[:, None] * d1[:, 1]

    def b(self, P):
        return self._at(P)[1][:, 1].copy()

    def rho(self, P):
        return self._at(P)[2].copy()

    def u(self, P):
        return self._at(P)[1][:, 0].copy()


@dataclass
class SeedSurface:
    """x = s(xi2, xi3); ``func`` maps arrays (xi2, xi3) -> points (N, 3)."""

    func: object
    threshold: float = TRANSVERSAL_MIN
    exprs: list = None

    @classmethod
    def from_expressions(cls, exprs, threshold=TRANSVERSAL_MIN):
        e = parse_vector(exprs, (XI2, XI3), key="seed")
        fn = lambdify((XI2, XI3), e)

        def func(a, b):
            return np.stack(fn(np.asarray(a, float), np.asarray(b, float)), axis=-1)

        return cls(func, threshold, e)

    def __call__(self, a, b):
        return self.func(np.asarray(a, float), np.asarray(b, float))

    def normal(self, a, b, h=1e-6):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        da = (self(a + h, b) - self(a - h, b)) / (2 * h)
        db = (self(a, b + h) - self(a, b - h)) / (2 * h)
        n = np.cross(da, db)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def check_transversal(self, data, a, b):
        x = self(a, b)
        bv = data.b0(x)
        bhat = bv / np.linalg.norm(bv, axis=-1, keepdims=True)
        c = np.abs(np.einsum("ni,ni->n", bhat, self.normal(a, b)))
        worst = float(np.min(c)) if np.all(np.isfinite(c)) else float("nan")
        if not worst >= self.threshold:
            raise TransversalityError(f"seed surface not transverse to b0: min |b.n| = {worst:.3g} < {self.threshold:g}")
        return worst


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    step: float = 1e-2
    rtol: float = 1e-11
    atol: float = 1e-12
    max_arc: float = 1e4
    min_step: float = 1e-12

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise FieldLineError(f"unknown integrator {self.method!r} (rk4, rk45)")
        for name in ("step", "rtol", "atol", "max_arc", "min_step"):
            if not getattr(self, name) > 0:
                raise FieldLineError(f"integrator {name} must be positive")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("method", "step", "rtol", "atol", "max_arc", "min_step")}


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _rhs(data):
    def f(P):
        v = data.b0(P)
        if not np.all(np.isfinite(v)):
            raise FieldLineError("b0 is not finite along the line")
        return v

    return f


def _rk4_leg(f, x, s_from, s_to, h_max, inside=None):
    """Fixed-step RK4 from s_from to s_to; returns (x, reached)."""
    span = s_to - s_from
    n = max(1, int(math.ceil(abs(span) / h_max - 1e-12)))
    h = span / n
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FieldLineError("RK4 blow-up (non-finite state)")
        if inside is not None and not np.all(inside(x)):
            return x, False
    return x, True


def _flow(data, X0, s0, targets, cfg, stop_on_exit=False, f=None):
    """Positions (len(targets), M, 3) of the lines through X0 at s0.

    With ``stop_on_exit`` the result is truncated at the first target after
    which a line left the x-domain; otherwise leaving raises.
    """
    f = f or _rhs(data)
    targets = np.asarray(targets, dtype=float)
    if np.max(np.abs(targets - s0)) > cfg.max_arc:
        raise FieldLineError(f"requested arc exceeds max_arc = {cfg.max_arc:g}")
    M = X0.shape[0]
    out = np.full((len(targets), M, 3), np.nan)
    ok = np.ones(len(targets), dtype=bool)
    fwd = np.where(targets >= s0)[0]
    bwd = np.where(targets < s0)[0][::-1]
    for order in (fwd, bwd):
        if not len(order):
            continue
        s_vals = targets[order]
        if cfg.method == "rk4":
            x, s = X0.copy(), s0
            for j, sv in zip(order, s_vals):
                x, fine = _rk4_leg(f, x, s, sv, cfg.step, data.inside)
                s = sv
                if not fine:
                    ok[j] = False
                    break
                out[j] = x
        else:
            res = _rk45(f, data, X0, s0, s_vals, cfg, stop_on_exit)
            out[order[: res.shape[0]]] = res
            if res.shape[0] < len(order):
                ok[order[res.shape[0] :]] = False
    for j in range(len(targets)):
        if ok[j] and not np.all(data.inside(out[j])):
            ok[j] = False
    if not np.all(ok):
        if not stop_on_exit:
            raise LineEscapeError("a field line leaves the x-domain in the requested xi1 range")
        # keep the contiguous run around s0
        keep = np.zeros_like(ok)
        for order in (fwd, bwd):
            for j in order:
                if not ok[j]:
                    break
                keep[j] = True
        return out, keep
    return out, ok


def _rk45(f, data, X0, s0, s_vals, cfg, stop_on_exit):
    M = X0.shape[0]

    def rhs(s, y):
        return f(y.reshape(M, 3)).reshape(-1)

    events = None
    if stop_on_exit:
        lo = np.array([a for a, _ in data.box])
        hi = np.array([b for _, b in data.box])

        def leave(s, y):
            P = y.reshape(M, 3)
            return float(min(np.min(P - lo), np.min(hi - P)))

        leave.terminal = True
        events = leave
    span = (s0, float(s_vals[-1]))
    if span[0] == span[1]:
        return np.repeat(X0[None], len(s_vals), axis=0)
    sol = solve_ivp(rhs, span, X0.reshape(-1), method="RK45", t_eval=s_vals, rtol=cfg.rtol,
                    atol=cfg.atol, max_step=max(cfg.step * 10, abs(span[1] - span[0]) / 4), events=events)
    if sol.status == -1:
        raise FieldLineError(f"adaptive integration failed (step underflow or blow-up): {sol.message}")
    return sol.y.T.reshape(-1, M, 3)


def trace_line(data, x0, xi1_range, cfg=None, n=None):
    """The magnetic line through x0 = x(xi1_range[0]), sampled at n parameter values.

    The polyline is truncated (``truncated=True``) where it leaves the x-domain.
    """
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float).reshape(1, 3)
    if not np.all(data.inside(x0)):
        raise FieldLineError(f"start point {tuple(x0[0])} is outside the x-domain")
    a, b = map(float, xi1_range)
    if n is None:
        n = max(2, int(math.ceil(abs(b - a) / cfg.step)) + 1)
    s = np.linspace(a, b, n)
    pts, keep = _flow(data, x0, a, s, cfg, stop_on_exit=True)
    pts = pts[keep, 0]
    s = s[keep]
    if len(s) < 2:
        raise LineEscapeError("the line leaves the x-domain immediately")
    return Polyline(pts, s, truncated=not bool(np.all(keep)),
                    meta={"integrator": cfg.to_dict(), "backend": _kernels.BACKEND})


# ---------------------------------------------------------------------------
# the initial map
# ---------------------------------------------------------------------------

@dataclass
class InitialMap:
    """gamma0 tabulated on a (xi1, xi2, xi3) grid with f = rho0(gamma0) det(d gamma0/d xi)."""

    axes: tuple
    gamma0: np.ndarray
    f: np.ndarray
    det: np.ndarray
    seed_xi1: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def fold_over(self):
        s = np.sign(self.det[np.isfinite(self.det)])
        return bool(np.any(s > 0) and np.any(s < 0))

    @property
    def xi1_variation(self):
        return float(np.max(np.ptp(self.f, axis=0)))


def tabulated_det(gamma0, axes):
    """det(d gamma0 / d xi) by fourth-order differences on the grid."""
    cols = [grid_derivative(gamma0, k, axes[k][1] - axes[k][0]) for k in range(3)]
    J = np.stack(cols, axis=-1)
    return _kernels.det3(J.reshape(-1, 3, 3)).reshape(gamma0.shape[:3])


def _map_axes(grid):
    if isinstance(grid, GridSpec):
        if grid.counts[0] != 1:
            raise FieldLineError("the initial map lives at one time; use a t count of 1")
        axes = grid.axes()[1:]
    else:
        axes = [np.linspace(a, b, int(c)) for (a, b), c in grid]
    for ax in axes:
        if len(ax) < 5:
            raise FieldLineError("FD on the tabulated map needs at least 5 points per axis")
        if not np.allclose(np.diff(ax), ax[1] - ax[0], rtol=1e-12, atol=0):
            raise FieldLineError("map grid axes must be uniform")
    return tuple(np.asarray(a, dtype=float) for a in axes)


def build_initial_map(data, seed, grid, cfg=None, seed_xi1=0.0, offset=None):
    """Trace from seed points s(xi2, xi3) at xi1 = seed_xi1 (+ offset(xi2, xi3)).

    ``grid`` is a GridSpec with a single t value or ``((lo, hi, n),) * 3``
    over (xi1, xi2, xi3).  Returns an :class:`InitialMap`.
    """
    cfg = cfg or IntegratorConfig()
    if not isinstance(grid, GridSpec):
        grid = [((a, b), c) for a, b, c in grid]
    a1, a2, a3 = axes = _map_axes(grid)
    A2, A3 = np.meshgrid(a2, a3, indexing="ij")
    a2f, a3f = A2.reshape(-1), A3.reshape(-1)
    seed.check_transversal(data, a2f, a3f)
    X0 = seed(a2f, a3f)
    if offset is not None:
        # gamma0(xi1) = flow_{xi1 - a}(s) = flow_{xi1}(flow_{-a}(s)): move each
        # seed by -a first, integrating dx/dsigma = -a b0(x) over sigma in [0, 1]
        shift = np.broadcast_to(np.asarray(offset(a2f, a3f), dtype=float), a2f.shape)
        base = _rhs(data)

        def scaled(P):
            return -shift[:, None] * base(P)

        moved, _ = _flow(data, X0, 0.0, np.array([1.0]), cfg, f=scaled)
        X0 = moved[0]
    pts, _ = _flow(data, X0, float(seed_xi1), a1, cfg)
    gamma0 = pts.reshape(len(a1), len(a2), len(a3), 3)
    det = tabulated_det(gamma0, axes)
    rho = data.rho0(gamma0.reshape(-1, 3)).reshape(det.shape)
    meta = {"integrator": cfg.to_dict(), "backend": _kernels.BACKEND, "offset": offset is not None}
    return InitialMap(axes, gamma0, rho * det, det, float(seed_xi1), meta)


def _reference_f(imap, f):
    shape = imap.f.shape
    if f is None:
        j = int(np.argmin(np.abs(imap.axes[0] - imap.seed_xi1)))
        return np.broadcast_to(imap.f[j], shape)
    if callable(f):
        A2, A3 = np.meshgrid(imap.axes[1], imap.axes[2], indexing="ij")
        return np.broadcast_to(np.asarray(f(A2, A3), dtype=float), shape[1:])[None].repeat(shape[0], 0)
    if isinstance(f, (str, sp.Basic)):
        e = parse(f, (XI2, XI3), key="f")
        fn = lambdify((XI2, XI3), [e])
        return _reference_f(imap, lambda a, b: fn(a, b)[0])
    return np.broadcast_to(np.asarray(f, dtype=float), shape)


def incompressibility_check(imap, rho0=None, f=None, tol=CHECK_TOL):
    """max |rho0(gamma0) det(d gamma0/d xi) - f(xi2, xi3)| over the grid.

    The xi1-variation and max |d/dxi1| of the left side are reported in
    ``extras`` (the derivative of tabulated data is FD-noise dominated, so it
    does not gate the result).

    ``imap`` is an :class:`InitialMap` or ``(axes, gamma0)``; ``rho0`` maps
    points (N, 3) to densities (default 1); ``f`` is a callable of
    (xi2, xi3), an expression string, an array, or None (compare against the
    seed row).
    """
    if not isinstance(imap, InitialMap):
        axes, g0 = imap
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        g0 = np.asarray(g0, dtype=float)
        det = tabulated_det(g0, axes)
        r = np.ones_like(det) if rho0 is None else rho0(g0.reshape(-1, 3)).reshape(det.shape)
        imap = InitialMap(axes, g0, r * det, det, float(axes[0][0]))
    elif rho0 is not None:
        r = rho0(imap.gamma0.reshape(-1, 3)).reshape(imap.det.shape)
        imap = InitialMap(imap.axes, imap.gamma0, r * imap.det, imap.det, imap.seed_xi1, imap.meta)
    ref = _reference_f(imap, f)
    diff = np.abs(imap.f - ref)
    slope = np.abs(grid_derivative(imap.f, 0, imap.axes[0][1] - imap.axes[0][0]))
    k = int(np.nanargmax(diff)) if np.any(np.isfinite(diff)) else 0
    idx = np.unravel_index(k, diff.shape)
    worst = tuple(float(imap.axes[d][idx[d]]) for d in range(3))
    m = float(np.max(diff)) if np.all(np.isfinite(diff)) else float("nan")
    eqs = {"incompressibility": EquationNorm(m, float(np.sqrt(np.mean(diff**2))), worst)}
    extras = {"xi1_variation": imap.xi1_variation, "max_df_dxi1": float(np.max(slope))}
    notes = []
    if imap.fold_over:
        notes.append("det(d gamma0/d xi) changes sign on the grid (fold-over)")
    return ResidualReport("initial-incompressibility", eqs, tol, int(imap.f.size),
                          derivative={"mode": "finite-difference", "order": 4, "tabulated": True},
                          notes=notes, extras=extras)


def build_initial_velocity(u0, gamma0):
    """gamma1(xi) = u0(gamma0(xi)) pointwise on the grid."""
    g = gamma0.gamma0 if isinstance(gamma0, InitialMap) else np.asarray(gamma0, dtype=float)
    try:
        out = np.asarray(u0(g.reshape(-1, 3)), dtype=float)
    except Exception as exc:
        raise FieldLineError(f"u0 evaluation failed: {exc}") from exc
    out = np.broadcast_to(out, (g.reshape(-1, 3).shape[0], 3)).reshape(g.shape)
    if not np.all(np.isfinite(out)):
        raise FieldLineError("u0 is not finite on gamma0")
    return out.copy()


# ---------------------------------------------------------------------------
# grid file
# ---------------------------------------------------------------------------

GRID_MAGIC = "# natmhd-grid 1"


def grid_text(imap, gamma1=None):
    """Text grid file: header with axis ranges and counts, then row-major records.

    Layout::

        # natmhd-grid 1
        axis xi1 <lo> <hi> <count>
        axis xi2 <lo> <hi> <count>
        axis xi3 <lo> <hi> <count>
        fields x y z f [u v w]
        <one line per grid point, xi1 slowest, xi3 fastest>
    """
    lines = [GRID_MAGIC]
    for name, ax in zip(("xi1", "xi2", "xi3"), imap.axes):
        lines.append(f"axis {name} {FMT % ax[0]} {FMT % ax[-1]} {len(ax)}")
    cols = [imap.gamma0.reshape(-1, 3), imap.f.reshape(-1, 1)]
    names = "x y z f"
    if gamma1 is not None:
        cols.append(np.asarray(gamma1).reshape(-1, 3))
        names += " u v w"
    lines.append("fields " + names)
    data = np.concatenate(cols, axis=1)
    lines += [" ".join(FMT % v for v in row) for row in data]
    return "\n".join(lines) + "\n"


def write_grid(path, imap, gamma1=None):
    atomic_write(path, grid_text(imap, gamma1))
    return path


def read_grid(path):
    """Return (axes, fields dict name -> array of shape (n1, n2, n3))."""
    with open(path) as fh:
        if fh.readline().strip() != GRID_MAGIC:
            raise FieldLineError(f"{path}: not a natmhd grid file")
        axes = []
        for _ in range(3):
            _, _, lo, hi, n = fh.readline().split()
            axes.append(np.linspace(float(lo), float(hi), int(n)))
        names = fh.readline().split()[1:]
        data = np.loadtxt(fh, ndmin=2)
    shape = tuple(len(a) for a in axes)
    return axes, {name: data[:, i].reshape(shape) for i, name in enumerate(names)}
