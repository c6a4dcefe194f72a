import os
import subprocess
import sys

import numpy as np
import pytest

from natmhd import _kernels as K

numba_only = pytest.mark.skipif(K.BACKEND != "numba", reason="numba kernels not built")


def inputs(n=500, seed=0):
    rng = np.random.default_rng(seed)
    d1 = rng.standard_normal((n, 4, 3))
    d1[:, 1:, :] += 3 * np.eye(3)
    d2 = rng.standard_normal((n, 4, 4, 3))
    d2 = 0.5 * (d2 + d2.transpose(0, 2, 1, 3))
    return d1, d2, 1 + rng.random(n), rng.standard_normal((n, 4)), rng.standard_normal((n, 4)), rng.standard_normal(n)


def close(a, b):
    if isinstance(a, tuple):
        return all(close(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


@numba_only
def test_matrix_kernels_agree():
    d1 = inputs()[0]
    J = np.ascontiguousarray(d1[:, 1:, :].transpose(0, 2, 1))
    assert close(K.det3_numpy(J), K.det3_numba(J))
    assert close(K.inv3_numpy(J), K.inv3_numba(J))
    assert np.allclose(K.inv3_numpy(J) @ J, np.eye(3), atol=1e-12)


@numba_only
def test_residual_kernels_agree():
    d1, d2, rho, drho, dP, f = inputs()
    assert close(K.natural_residual_numpy(d1, d2, rho, drho, dP, f), K.natural_residual_numba(d1, d2, rho, drho, dP, f))
    for total in (True, False):
        assert close(K.eulerian_residual_numpy(d1, d2, rho, drho, dP, total),
                     K.eulerian_residual_numba(d1, d2, rho, drho, dP, total))


@numba_only
def test_christoffel_kernel_agrees():
    rng = np.random.default_rng(1)
    ginv, dg = rng.standard_normal((50, 4, 4)), rng.standard_normal((50, 4, 4, 4))
    assert close(K.christoffel_numpy(ginv, dg), K.christoffel_numba(ginv, dg))


@numba_only
def test_gauss_kernel_agrees():
    s = np.linspace(0, 2 * np.pi, 300, endpoint=False)
    c1 = np.stack([np.cos(s), np.sin(s), 0 * s], axis=1)
    c2 = np.stack([1 + np.cos(s), 0 * s, np.sin(s)], axis=1)
    assert abs(K.gauss_linking_numpy(c1, c2) - K.gauss_linking_numba(c1, c2)) <= 1e-12


def test_pure_numpy_flag():
    code = (
        "from natmhd import _kernels, families, solution;"
        "import math;"
        "g = solution.GridSpec.uniform(((0, 1), (0, 2*math.pi), (0, 2*math.pi), (0.5, 1)), 4);"
        "r = solution.eulerian_residual(families.sol14(), g);"
        "print(_kernels.BACKEND, r.max_residual < 1e-6)"
    )
    env = dict(os.environ, NATMHD_PURE_NUMPY="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
