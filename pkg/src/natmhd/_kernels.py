"""Batch numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with the same signature.  The numba path is used when numba imports
and ``NATMHD_PURE_NUMPY`` is unset (or ``0``).  ``NATMHD_NUM_THREADS`` caps
the numba thread pool.

All per-point kernels write into per-point output slots, so results do not
depend on the thread count.
"""

import os
import warnings

import numpy as np

try:
    import numba
    from numba import njit, prange
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("NATMHD_PURE_NUMPY", "0").strip().lower()
USE_NUMBA = numba is not None and _FLAG in ("", "0", "false", "no")

if USE_NUMBA:
    # an old system TBB is probed and rejected at first parallel launch
    warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

if USE_NUMBA and os.environ.get("NATMHD_NUM_THREADS"):
    numba.set_num_threads(
        max(1, min(int(os.environ["NATMHD_NUM_THREADS"]), numba.config.NUMBA_NUM_THREADS))
    )

BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def det3_numpy(J):
    return (
        J[:, 0, 0] * (J[:, 1, 1] * J[:, 2, 2] - J[:, 1, 2] * J[:, 2, 1])
        - J[:, 0, 1] * (J[:, 1, 0] * J[:, 2, 2] - J[:, 1, 2] * J[:, 2, 0])
        + J[:, 0, 2] * (J[:, 1, 0] * J[:, 2, 1] - J[:, 1, 1] * J[:, 2, 0])
    )


def inv3_numpy(J):
    """Cofactor inverse; rows with zero determinant come back as inf/nan."""
    c = np.empty_like(J)
    c[:, 0, 0] = J[:, 1, 1] * J[:, 2, 2] - J[:, 1, 2] * J[:, 2, 1]
    c[:, 0, 1] = J[:, 0, 2] * J[:, 2, 1] - J[:, 0, 1] * J[:, 2, 2]
    c[:, 0, 2] = J[:, 0, 1] * J[:, 1, 2] - J[:, 0, 2] * J[:, 1, 1]
    c[:, 1, 0] = J[:, 1, 2] * J[:, 2, 0] - J[:, 1, 0] * J[:, 2, 2]
    c[:, 1, 1] = J[:, 0, 0] * J[:, 2, 2] - J[:, 0, 2] * J[:, 2, 0]
    c[:, 1, 2] = J[:, 0, 2] * J[:, 1, 0] - J[:, 0, 0] * J[:, 1, 2]
    c[:, 2, 0] = J[:, 1, 0] * J[:, 2, 1] - J[:, 1, 1] * J[:, 2, 0]
    c[:, 2, 1] = J[:, 0, 1] * J[:, 2, 0] - J[:, 0, 0] * J[:, 2, 1]
    c[:, 2, 2] = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    det = det3_numpy(J)
    with np.errstate(divide="ignore", invalid="ignore"):
        return c / det[:, None, None]


def natural_residual_numpy(d1, d2, rho, drho, dP, f):
    g1, g2, g3 = d1[:, 1], d1[:, 2], d1[:, 3]
    c23 = np.cross(g2, g3)
    c31 = np.cross(g3, g1)
    c12 = np.cross(g1, g2)
    det = np.einsum("ij,ij->i", g1, c23)
    scale = rho * det
    with np.errstate(divide="ignore", invalid="ignore"):
        press = (dP[:, 1, None] * c23 + dP[:, 2, None] * c31 + dP[:, 3, None] * c12) / scale[:, None]
    mom = d2[:, 0, 0] - (drho[:, 1, None] * g1 + rho[:, None] * d2[:, 1, 1]) + press
    return mom, scale - f


def eulerian_residual_numpy(d1, d2, rho, drho, dpress, total):
    n = d1.shape[0]
    J = np.stack([d1[:, 1], d1[:, 2], d1[:, 3]], axis=-1)
    Ji = inv3_numpy(J)
    u = d1[:, 0]
    # Du[:, i, j] = d u^i / d xi^j
    Du = np.stack([d2[:, 0, 1], d2[:, 0, 2], d2[:, 0, 3]], axis=-1)
    B = rho[:, None] * d1[:, 1]
    DB = np.empty((n, 3, 3))
    for j in range(3):
        DB[:, :, j] = drho[:, j + 1, None] * d1[:, 1] + rho[:, None] * d2[:, 1, j + 1]
    Bt = drho[:, 0, None] * d1[:, 1] + rho[:, None] * d2[:, 1, 0]

    gu = np.einsum("nij,njk->nik", Du, Ji)
    gB = np.einsum("nij,njk->nik", DB, Ji)
    grho = np.einsum("nji,nj->ni", Ji, drho[:, 1:])
    dp = dpress[:, 1:].copy()
    if total:
        dp -= np.einsum("nij,ni->nj", DB, B)
    gp = np.einsum("nji,nj->ni", Ji, dp)

    ut_x = d2[:, 0, 0] - np.einsum("nij,nj->ni", gu, u)
    Bt_x = Bt - np.einsum("nij,nj->ni", gB, u)
    rhot_x = drho[:, 0] - np.einsum("ni,ni->n", u, grho)
    div_u = np.trace(gu, axis1=1, axis2=2)
    div_B = np.trace(gB, axis1=1, axis2=2)

    cont = rhot_x + np.einsum("ni,ni->n", u, grho) + rho * div_u
    curlB = np.stack(
        [gB[:, 2, 1] - gB[:, 1, 2], gB[:, 0, 2] - gB[:, 2, 0], gB[:, 1, 0] - gB[:, 0, 1]], axis=-1
    )
    mom = (
        rho[:, None] * (ut_x + np.einsum("nij,nj->ni", gu, u))
        + np.cross(B, curlB)
        + gp
    )
    # d(u x B)/d xi^j, then push to x
    DuB = np.empty((n, 3, 3))
    for j in range(3):
        DuB[:, :, j] = np.cross(Du[:, :, j], B) + np.cross(u, DB[:, :, j])
    g_uB = np.einsum("nij,njk->nik", DuB, Ji)
    curl_uB = np.stack(
        [g_uB[:, 2, 1] - g_uB[:, 1, 2], g_uB[:, 0, 2] - g_uB[:, 2, 0], g_uB[:, 1, 0] - g_uB[:, 0, 1]],
        axis=-1,
    )
    ind = Bt_x - curl_uB
    return cont, mom, ind, div_B


def christoffel_numpy(ginv, dg):
    # dg[:, l, a, b] = d g_ab / d xi^l ; result G[:, c, a, b] = Gamma^c_ab
    # T[n, a, b, d] = (d_b g_ad + d_a g_bd - d_d g_ab) / 2
    T = 0.5 * (
        np.einsum("nbad->nabd", dg)  # d_b g_ad
        + np.einsum("nabd->nabd", dg)  # d_a g_bd
        - np.einsum("ndab->nabd", dg)  # d_d g_ab
    )
    return np.einsum("ncd,nabd->ncab", ginv, T)


def gauss_linking_numpy(p1, p2, chunk=512):
    """Midpoint-rule Gauss integral for two closed polygons (no repeated end point)."""
    d1 = np.roll(p1, -1, axis=0) - p1
    m1 = p1 + 0.5 * d1
    d2 = np.roll(p2, -1, axis=0) - p2
    m2 = p2 + 0.5 * d2
    rows = np.empty(m1.shape[0])
    for s in range(0, m1.shape[0], chunk):
        r = m1[s : s + chunk, None, :] - m2[None, :, :]
        cr = np.cross(d1[s : s + chunk, None, :], d2[None, :, :])
        num = np.einsum("ijk,ijk->ij", r, cr)
        dist3 = np.einsum("ijk,ijk->ij", r, r) ** 1.5
        rows[s : s + chunk] = (num / dist3).sum(axis=1)
    total = 0.0
    for v in rows:
        total += v
    return total / (4.0 * np.pi)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True, error_model="numpy")
    def _det3(a):
        return (
            a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
        )

    @njit(cache=True, error_model="numpy")
    def _inv3(a, out):
        det = _det3(a)
        out[0, 0] = (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]) / det
        out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) / det
        out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) / det
        out[1, 0] = (a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]) / det
        out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) / det
        out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) / det
        out[2, 0] = (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]) / det
        out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) / det
        out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) / det

    @njit(cache=True, error_model="numpy")
    def _cross(a, b, out):
        out[0] = a[1] * b[2] - a[2] * b[1]
        out[1] = a[2] * b[0] - a[0] * b[2]
        out[2] = a[0] * b[1] - a[1] * b[0]

    @njit(cache=True, parallel=True, error_model="numpy")
    def det3_numba(J):
        n = J.shape[0]
        out = np.empty(n)
        for i in prange(n):
            out[i] = _det3(J[i])
        return out

    @njit(cache=True, parallel=True, error_model="numpy")
    def inv3_numba(J):
        n = J.shape[0]
        out = np.empty_like(J)
        for i in prange(n):
            det = _det3(J[i])
            if det == 0.0:
                for r in range(3):
                    for c in range(3):
                        out[i, r, c] = np.nan
            else:
                _inv3(J[i], out[i])
        return out

    @njit(cache=True, parallel=True, error_model="numpy")
    def natural_residual_numba(d1, d2, rho, drho, dP, f):
        n = d1.shape[0]
        mom = np.empty((n, 3))
        con = np.empty(n)
        for i in prange(n):
            c23 = np.empty(3)
            c31 = np.empty(3)
            c12 = np.empty(3)
            _cross(d1[i, 2], d1[i, 3], c23)
            _cross(d1[i, 3], d1[i, 1], c31)
            _cross(d1[i, 1], d1[i, 2], c12)
            det = d1[i, 1, 0] * c23[0] + d1[i, 1, 1] * c23[1] + d1[i, 1, 2] * c23[2]
            scale = rho[i] * det
            for k in range(3):
                press = (dP[i, 1] * c23[k] + dP[i, 2] * c31[k] + dP[i, 3] * c12[k]) / scale
                mom[i, k] = d2[i, 0, 0, k] - (drho[i, 1] * d1[i, 1, k] + rho[i] * d2[i, 1, 1, k]) + press
            con[i] = scale - f[i]
        return mom, con

    @njit(cache=True, parallel=True, error_model="numpy")
    def eulerian_residual_numba(d1, d2, rho, drho, dpress, total):
        n = d1.shape[0]
        cont = np.empty(n)
        mom = np.empty((n, 3))
        ind = np.empty((n, 3))
        divb = np.empty(n)
        for i in prange(n):
            J = np.empty((3, 3))
            Du = np.empty((3, 3))
            DB = np.empty((3, 3))
            for r in range(3):
                for c in range(3):
                    J[r, c] = d1[i, c + 1, r]
                    Du[r, c] = d2[i, 0, c + 1, r]
                    DB[r, c] = drho[i, c + 1] * d1[i, 1, r] + rho[i] * d2[i, 1, c + 1, r]
            Ji = np.empty((3, 3))
            _inv3(J, Ji)
            u = d1[i, 0]
            B = np.empty(3)
            Bt = np.empty(3)
            for r in range(3):
                B[r] = rho[i] * d1[i, 1, r]
                Bt[r] = drho[i, 0] * d1[i, 1, r] + rho[i] * d2[i, 1, 0, r]
            gu = Du @ Ji
            gB = DB @ Ji
            grho = np.zeros(3)
            dp = np.empty(3)
            for r in range(3):
                dp[r] = dpress[i, r + 1]
                if total:
                    for s in range(3):
                        dp[r] -= DB[s, r] * B[s]
            gp = np.zeros(3)
            for r in range(3):
                for s in range(3):
                    grho[r] += Ji[s, r] * drho[i, s + 1]
                    gp[r] += Ji[s, r] * dp[s]
            ugu = gu @ u
            ugB = gB @ u
            udr = u[0] * grho[0] + u[1] * grho[1] + u[2] * grho[2]
            rhot_x = drho[i, 0] - udr
            cont[i] = rhot_x + udr + rho[i] * (gu[0, 0] + gu[1, 1] + gu[2, 2])
            divb[i] = gB[0, 0] + gB[1, 1] + gB[2, 2]
            curlB = np.empty(3)
            curlB[0] = gB[2, 1] - gB[1, 2]
            curlB[1] = gB[0, 2] - gB[2, 0]
            curlB[2] = gB[1, 0] - gB[0, 1]
            bxc = np.empty(3)
            _cross(B, curlB, bxc)
            DuB = np.empty((3, 3))
            t1 = np.empty(3)
            t2 = np.empty(3)
            for c in range(3):
                _cross(Du[:, c].copy(), B, t1)
                _cross(u, DB[:, c].copy(), t2)
                for r in range(3):
                    DuB[r, c] = t1[r] + t2[r]
            g_uB = DuB @ Ji
            for r in range(3):
                ut_x = d2[i, 0, 0, r] - ugu[r]
                mom[i, r] = rho[i] * (ut_x + ugu[r]) + bxc[r] + gp[r]
            curl_uB0 = g_uB[2, 1] - g_uB[1, 2]
            curl_uB1 = g_uB[0, 2] - g_uB[2, 0]
            curl_uB2 = g_uB[1, 0] - g_uB[0, 1]
            ind[i, 0] = Bt[0] - ugB[0] - curl_uB0
            ind[i, 1] = Bt[1] - ugB[1] - curl_uB1
            ind[i, 2] = Bt[2] - ugB[2] - curl_uB2
        return cont, mom, ind, divb

    @njit(cache=True, parallel=True, error_model="numpy")
    def christoffel_numba(ginv, dg):
        n = ginv.shape[0]
        out = np.zeros((n, 4, 4, 4))
        for i in prange(n):
            for a in range(4):
                for b in range(4):
                    for c in range(4):
                        acc = 0.0
                        for d in range(4):
                            acc += ginv[i, c, d] * (dg[i, b, a, d] + dg[i, a, b, d] - dg[i, d, a, b])
                        out[i, c, a, b] = 0.5 * acc
        return out

    @njit(cache=True, parallel=True, error_model="numpy")
    def _gauss_rows(p1, p2):
        n1 = p1.shape[0]
        n2 = p2.shape[0]
        rows = np.empty(n1)
        for i in prange(n1):
            i1 = (i + 1) % n1
            dx = p1[i1, 0] - p1[i, 0]
            dy = p1[i1, 1] - p1[i, 1]
            dz = p1[i1, 2] - p1[i, 2]
            mx = p1[i, 0] + 0.5 * dx
            my = p1[i, 1] + 0.5 * dy
            mz = p1[i, 2] + 0.5 * dz
            acc = 0.0
            for j in range(n2):
                j1 = (j + 1) % n2
                ex = p2[j1, 0] - p2[j, 0]
                ey = p2[j1, 1] - p2[j, 1]
                ez = p2[j1, 2] - p2[j, 2]
                rx = mx - (p2[j, 0] + 0.5 * ex)
                ry = my - (p2[j, 1] + 0.5 * ey)
                rz = mz - (p2[j, 2] + 0.5 * ez)
                cx = dy * ez - dz * ey
                cy = dz * ex - dx * ez
                cz = dx * ey - dy * ex
                r2 = rx * rx + ry * ry + rz * rz
                acc += (rx * cx + ry * cy + rz * cz) / (r2 * np.sqrt(r2))
            rows[i] = acc
        return rows

    def gauss_linking_numba(p1, p2):
        rows = _gauss_rows(np.ascontiguousarray(p1), np.ascontiguousarray(p2))
        total = 0.0
        for v in rows:
            total += v
        return total / (4.0 * np.pi)


def _pick(name):
    return globals()[f"{name}_numba" if USE_NUMBA else f"{name}_numpy"]


det3 = _pick("det3")
inv3 = _pick("inv3")
natural_residual = _pick("natural_residual")
christoffel = _pick("christoffel")
gauss_linking = _pick("gauss_linking")


def eulerian_residual(d1, d2, rho, drho, dpress, total=True):
    if USE_NUMBA:
        return eulerian_residual_numba(d1, d2, rho, drho, dpress, bool(total))
    return eulerian_residual_numpy(d1, d2, rho, drho, dpress, total)


def set_threads(n):
    """Cap the numba thread pool (no-op on the numpy backend)."""
    if USE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
