"""Magnetic surfaces and lines: sampling, topology checks and file export.

Exports are deterministic: fixed ordering, ``%.8e`` formatting (9
significant digits), ``\\n`` line endings, written to a temporary file and
renamed into place.
"""

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .solution import eulerian_fields

FMT = "%.8e"
STITCH_TOL = 1e-9
CLOSED_GAP = 1e-6
MIN_SEGMENTS = 256
MAX_SEGMENTS = 8192
LINK_CHANGE_TOL = 1e-3
LINK_INTEGER_TOL = 1e-2
MIN_DISTANCE = 1e-3

COORD_INDEX = {"t": 0, "xi1": 1, "xi2": 2, "xi3": 3}


class GeometryError(ValueError):
    pass


@dataclass
class Polyline:
    """Ordered points x(s) with their parameter values.

    ``closed`` is set when the end point returns to the start (gap <= tol)
    and, if a period is known, the parameter range is a whole number of
    periods.  ``sampler`` (optional) re-evaluates the curve at new
    parameters and is used for refinement.
    """

    points: np.ndarray
    params: np.ndarray
    closed: bool = False
    gap: float = 0.0
    period: float = None
    truncated: bool = False
    sampler: object = field(default=None, repr=False, compare=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 2:
            raise GeometryError("a polyline needs at least 2 points in R^3")
        if self.params.shape != (self.points.shape[0],):
            raise GeometryError("one parameter value per point required")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("polyline has non-finite points")
        self.gap = float(np.linalg.norm(self.points[-1] - self.points[0]))

    @property
    def loop(self):
        """Vertices of the closed polygon (repeated end point dropped)."""
        if self.gap <= CLOSED_GAP:
            return self.points[:-1]
        return self.points

    def resample(self, n):
        """A closed polygon with n distinct vertices."""
        if self.sampler is not None:
            s = np.linspace(self.params[0], self.params[-1], n + 1)[:-1]
            return np.asarray(self.sampler(s), dtype=float)
        pts = self.loop
        m = pts.shape[0]
        if n <= m:
            return pts
        k = int(math.ceil(n / m))
        nxt = np.roll(pts, -1, axis=0)
        w = (np.arange(k) / k)[None, :, None]
        return (pts[:, None, :] * (1 - w) + nxt[:, None, :] * w).reshape(-1, 3)


@dataclass
class SurfaceMesh:
    vertices: np.ndarray
    quads: np.ndarray
    scalars: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    shape: tuple = ()
    periodic: tuple = (False, False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.quads = np.asarray(self.quads, dtype=np.int64).reshape(-1, 4)
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("mesh has non-finite vertices")
        if self.quads.size and (self.quads.min() < 0 or self.quads.max() >= len(self.vertices)):
            raise GeometryError("mesh has out-of-range vertex indices")

    def edges(self):
        q = self.quads
        e = np.concatenate([q[:, [0, 1]], q[:, [1, 2]], q[:, [2, 3]], q[:, [3, 0]]])
        return np.sort(e, axis=1)

    def edge_counts(self):
        e = self.edges()
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self):
        return bool(self.quads.size) and bool(np.all(self.edge_counts() == 2))

    def euler_characteristic(self):
        ne = np.unique(self.edges(), axis=0).shape[0]
        return len(self.vertices) - ne + len(self.quads)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _parse_fix(fix):
    if isinstance(fix, str):
        name, _, val = fix.partition("=")
        fix = (name.strip(), float(val))
    name, val = fix
    if name not in ("xi2", "xi3"):
        raise GeometryError(f"magnetic surfaces fix xi2 or xi3, got {name!r}")
    return name, float(val)


def _points4(t0, fixed_name, fixed_val, a_vals, b_vals):
    """Points (t0, xi1=a, free=b, fixed) on an (a, b) grid, row-major in a."""
    A, Bv = np.meshgrid(a_vals, b_vals, indexing="ij")
    X = np.empty((A.size, 4))
    X[:, 0] = t0
    X[:, 1] = A.reshape(-1)
    free = 3 if fixed_name == "xi2" else 2
    X[:, free] = Bv.reshape(-1)
    X[:, COORD_INDEX[fixed_name]] = fixed_val
    return X


def _axis_samples(sol, t0, fixed, axis, lo, hi, n, other_vals):
    """Sample an axis; periodic when the hi end reproduces the lo end."""
    ends = []
    for v in (lo, hi):
        if axis == 0:
            X = _points4(t0, *fixed, [v], other_vals)
        else:
            X = _points4(t0, *fixed, other_vals, [v])
        ends.append(eulerian_fields(sol, X).x)
    periodic = float(np.max(np.linalg.norm(ends[0] - ends[1], axis=1))) <= STITCH_TOL
    if periodic:
        return np.linspace(lo, hi, n + 1)[:-1], True
    return np.linspace(lo, hi, n), False


def sample_surface(sol, t0, fix, grid, orient=True):
    """Quad mesh of the magnetic surface ``fix`` (e.g. ``("xi3", 1.0)``) at time t0.

    ``grid`` is ``((xi1_lo, xi1_hi, n1), (free_lo, free_hi, n2))`` where the
    free coordinate is whichever of xi2/xi3 is not fixed.  An axis whose two
    ends coincide (within 1e-9) is stitched periodically and sampled at n
    distinct values; otherwise n values including both ends.
    """
    name, val = _parse_fix(fix)
    (a0, a1, na), (b0, b1, nb) = grid
    if na < 2 or nb < 2:
        raise GeometryError("surface grid needs at least 2 samples per axis")
    probe_b = np.linspace(b0, b1, 7)
    probe_a = np.linspace(a0, a1, 7)
    a_vals, per_a = _axis_samples(sol, t0, (name, val), 0, a0, a1, na, probe_b)
    b_vals, per_b = _axis_samples(sol, t0, (name, val), 1, b0, b1, nb, probe_a)
    X = _points4(t0, name, val, a_vals, b_vals)
    st = eulerian_fields(sol, X)
    na, nb = len(a_vals), len(b_vals)
    idx = np.arange(na * nb).reshape(na, nb)
    ia = np.arange(na if per_a else na - 1)
    ib = np.arange(nb if per_b else nb - 1)
    I, J = np.meshgrid(ia, ib, indexing="ij")
    I1 = (I + 1) % na
    J1 = (J + 1) % nb
    quads = np.stack([idx[I, J], idx[I1, J], idx[I1, J1], idx[I, J1]], axis=-1).reshape(-1, 4)
    scalars = {
        "B_magnitude": np.linalg.norm(st.B, axis=1),
        "P": np.asarray(st.P, dtype=float),
        "p": np.asarray(st.p, dtype=float),
    }
    prov = {"t0": float(t0), "fixed": name, "value": val, "family": sol.family}
    mesh = SurfaceMesh(st.x, quads, scalars, prov, (na, nb), (per_a, per_b))
    if orient and sol.family.startswith("torus-knot") and name == "xi3":
        _orient_outward(sol, mesh, t0, a_vals, b_vals)
    return mesh


def _orient_outward(sol, mesh, t0, a_vals, b_vals):
    """Flip quads so normals point away from the central curve (xi3 = 0)."""
    na, nb = mesh.shape
    X = _points4(t0, "xi3", 0.0, a_vals, b_vals)
    centre = eulerian_fields(sol, X).x
    v = mesh.vertices
    q = mesh.quads
    n = np.cross(v[q[:, 1]] - v[q[:, 0]], v[q[:, 3]] - v[q[:, 0]])
    out = v[q].mean(axis=1) - centre[q[:, 0]]
    if np.sum(np.einsum("ij,ij->i", n, out)) < 0:
        mesh.quads = q[:, ::-1].copy()
        mesh.provenance["orientation"] = "flipped"
    else:
        mesh.provenance["orientation"] = "as-parametrized"


def sample_magnetic_line(sol, t0, xi2, xi3, xi1_range, n, period=None, closed_tol=CLOSED_GAP):
    """The magnetic line x(s) = gamma(t0, s, xi2, xi3), s in xi1_range, n points."""
    a, b = xi1_range
    if n < 2:
        raise GeometryError("a magnetic line needs at least 2 samples")
    if period is None:
        from .families import minimal_period

        period = minimal_period(sol)

    def sampler(s):
        s = np.asarray(s, dtype=float)
        X = np.column_stack([np.full(s.shape, t0), s, np.full(s.shape, xi2), np.full(s.shape, xi3)])
        return eulerian_fields(sol, X).x

    s = np.linspace(a, b, n)
    pl = Polyline(sampler(s), s, sampler=sampler, period=period,
                  meta={"t0": t0, "xi2": xi2, "xi3": xi3, "family": sol.family})
    whole = True
    if period is not None:
        m = (b - a) / period
        whole = m >= 1 - 1e-12 and abs(m - round(m)) <= 1e-9
    pl.closed = bool(pl.gap <= closed_tol and whole)
    return pl


# ---------------------------------------------------------------------------
# linking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkingResult:
    value: int
    raw: float
    segments: int
    change: float


def gauss_raw(p1, p2):
    """Midpoint-rule Gauss integral of two closed polygons (distinct vertices)."""
    return _kernels.gauss_linking(np.ascontiguousarray(p1, dtype=float), np.ascontiguousarray(p2, dtype=float))


def _segment_distance(a0, a1, b0, b1):
    """Distances between segment pairs [a0, a1] and [b0, b1], row by row."""
    u, v, w = a1 - a0, b1 - b0, a0 - b0
    a = np.einsum("ij,ij->i", u, u)
    b = np.einsum("ij,ij->i", u, v)
    c = np.einsum("ij,ij->i", v, v)
    d = np.einsum("ij,ij->i", u, w)
    e = np.einsum("ij,ij->i", v, w)
    den = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(den > 1e-300, np.clip((b * e - c * d) / den, 0, 1), 0.0)
        t = np.where(c > 0, (b * s + e) / c, 0.0)
    # clamp t, then recompute s for the clamped t
    t = np.clip(t, 0, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(a > 0, np.clip((b * t - d) / a, 0, 1), 0.0)
    diff = w + s[:, None] * u - t[:, None] * v
    return np.linalg.norm(diff, axis=1)


def _min_distance(p1, p2, cutoff):
    """Exact minimum distance between two closed polygons, or >= cutoff.

    Segments closer than ``cutoff`` have start points within
    cutoff + |longest segment of each|, so a KD-tree ball query finds all
    candidate pairs.
    """
    q1, q2 = np.roll(p1, -1, axis=0), np.roll(p2, -1, axis=0)
    h1 = float(np.max(np.linalg.norm(q1 - p1, axis=1)))
    h2 = float(np.max(np.linalg.norm(q2 - p2, axis=1)))
    pairs = cKDTree(p1).query_ball_tree(cKDTree(p2), cutoff + h1 + h2)
    i = np.repeat(np.arange(len(p1)), [len(x) for x in pairs])
    if i.size == 0:
        return float("inf")
    j = np.concatenate([np.asarray(x, dtype=np.int64) for x in pairs])
    return float(np.min(_segment_distance(p1[i], q1[i], p2[j], q2[j])))


def linking_number(c1, c2, min_segments=MIN_SEGMENTS, change_tol=LINK_CHANGE_TOL,
                   integer_tol=LINK_INTEGER_TOL, min_distance=MIN_DISTANCE, max_segments=MAX_SEGMENTS):
    """Gauss linking number of two closed polylines, refined until stable."""
    for name, c in (("first", c1), ("second", c2)):
        if c.gap > CLOSED_GAP:
            raise GeometryError(f"{name} curve is open (gap {c.gap:.3e})")
    n = max(min_segments, len(c1.loop), len(c2.loop))
    p1, p2 = c1.resample(n), c2.resample(n)
    dist = _min_distance(p1, p2, min_distance)
    if dist < min_distance:
        raise GeometryError(f"curves nearly intersect (min distance {dist:.3e} < {min_distance:g})")
    raw = gauss_raw(p1, p2)
    change = np.inf
    while True:
        n2 = 2 * n
        if n2 > max_segments:
            break
        q1, q2 = c1.resample(n2), c2.resample(n2)
        new = gauss_raw(q1, q2)
        change = abs(new - raw)
        raw, n = new, n2
        if change <= change_tol:
            break
    value = int(round(raw))
    if abs(raw - value) > integer_tol:
        raise GeometryError(f"linking integral {raw:.6f} is not within {integer_tol:g} of an integer")
    return LinkingResult(value, float(raw), n, float(change))


def circle(center, normal, radius=1.0, n=512):
    """Closed polyline of a circle (end point repeated)."""
    center = np.asarray(center, float)
    nrm = np.asarray(normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    helper = np.array([1.0, 0, 0]) if abs(nrm[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(nrm, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nrm, e1)

    def sampler(s):
        s = np.asarray(s, float)
        return center + radius * (np.cos(s)[:, None] * e1 + np.sin(s)[:, None] * e2)

    s = np.linspace(0, 2 * np.pi, n + 1)
    return Polyline(sampler(s), s, closed=True, period=2 * np.pi, sampler=sampler)


def winding_about_axis(points, axis=0):
    """Number of turns of the curve about a coordinate axis (angle unwrapping)."""
    pts = np.asarray(points, float)
    i, j = [k for k in range(3) if k != axis]
    ang = np.unwrap(np.arctan2(pts[:, j], pts[:, i]))
    return (ang[-1] - ang[0]) / (2 * np.pi)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _fmt(x):
    return FMT % x


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def obj_text(mesh):
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in q) for q in mesh.quads]
    return "\n".join(lines) + "\n"


def polyline_obj_text(pl):
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in pl.points]
    lines.append("l " + " ".join(str(i + 1) for i in range(len(pl.points))))
    return "\n".join(lines) + "\n"


def csv_text(pl):
    rows = ["s,x,y,z"]
    rows += [",".join(_fmt(v) for v in (s, *p)) for s, p in zip(pl.params, pl.points)]
    return "\n".join(rows) + "\n"


def vtk_text(obj, title="natmhd"):
    """VTK legacy ASCII polydata (quads or a line) with point scalars."""
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET POLYDATA"]
    pts = obj.vertices if isinstance(obj, SurfaceMesh) else obj.points
    out.append(f"POINTS {len(pts)} double")
    out += [f"{_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in pts]
    if isinstance(obj, SurfaceMesh):
        q = obj.quads
        out.append(f"POLYGONS {len(q)} {5 * len(q)}")
        out += ["4 " + " ".join(str(int(i)) for i in row) for row in q]
        scalars = obj.scalars
    else:
        n = len(pts)
        out.append(f"LINES 1 {n + 1}")
        out.append(f"{n} " + " ".join(str(i) for i in range(n)))
        scalars = {"s": obj.params}
    if scalars:
        out.append(f"POINT_DATA {len(pts)}")
        for name in sorted(scalars):
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out += [_fmt(v) for v in np.asarray(scalars[name], float)]
    return "\n".join(out) + "\n"


def export(obj, fmt, path):
    """Write a mesh or polyline as OBJ, VTK (legacy ASCII) or CSV."""
    fmt = fmt.lower()
    if fmt == "obj":
        text = obj_text(obj) if isinstance(obj, SurfaceMesh) else polyline_obj_text(obj)
    elif fmt == "vtk":
        text = vtk_text(obj)
    elif fmt == "csv":
        if not isinstance(obj, Polyline):
            raise GeometryError("CSV export is for polylines")
        text = csv_text(obj)
    else:
        raise GeometryError(f"unknown export format {fmt!r} (obj, vtk, csv)")
    atomic_write(path, text)
    return path


def format_for(path):
    ext = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
    if ext not in ("obj", "vtk", "csv"):
        raise GeometryError(f"cannot infer export format from {path!r}")
    return ext


def read_obj(path):
    """Vertices and faces (0-based) of an OBJ written by :func:`export`."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(v.split("/")[0]) - 1 for v in parts[1:]])
    return np.array(verts), np.array(faces, dtype=np.int64)


def read_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:4]
