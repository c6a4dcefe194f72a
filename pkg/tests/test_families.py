import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from natmhd.diffgeo import DomainBox
from natmhd.expr import MU, T, XI1, XI2, XI3, ScalarFn, lambdify
from natmhd.families import (
    PRESET_DOMAIN,
    FamilyError,
    TorusKnotParams,
    build_dim2,
    build_dim3,
    build_field_aligned,
    build_jet,
    build_torus_knot,
    minimal_period,
    sol13,
    sol14,
)
from natmhd.solution import (
    GridSpec,
    cauchy_check,
    eulerian_fields,
    eulerian_residual,
    residual_incompressible,
)
from natmhd.symmetry import GeneralizedGalilean

BOX = DomainBox((-1, -1, -1, 0.5), (1, 1, 1, 1.5))
G = GridSpec.uniform(((-0.9, 0.9), (-0.9, 0.9), (-0.9, 0.9), (0.6, 1.4)), 5)


def exact(sol, grid=G):
    for check in (residual_incompressible, eulerian_residual):
        r = check(sol, grid)
        assert r.max_residual <= 1e-6, r.summary()
    r = cauchy_check(sol, grid)
    assert r.max_residual <= 1e-8, r.summary()


def test_field_aligned_identity():
    sol = build_field_aligned(["mu", "xi2", "xi3"], BOX)
    s = eulerian_fields(sol, (0.1, 0.2, 0.3, 0.9))
    assert np.allclose(s.u, [1, 0, 0]) and np.allclose(s.B, [1, 0, 0])


def test_field_aligned_shear_accepted():
    sol = build_field_aligned(["mu", "xi2 + sin(mu)", "xi3"], BOX)
    exact(sol)


def test_field_aligned_rejects_det_two():
    with pytest.raises(FamilyError, match="unit Jacobian"):
        build_field_aligned(["2*mu", "xi2", "xi3"], BOX)


def test_dim3_trivial():
    sol = build_dim3("xi2", "xi3", "mu", BOX)
    assert float(sol.cauchy_f.exprs[0]) == 1.0
    exact(sol)


def test_dim3_with_disturbance():
    sol = build_dim3("xi2 * cos(mu) + xi3 * sin(mu)", "-xi2 * sin(mu) + xi3 * cos(mu)", "mu", BOX, u1="sin(s)")
    exact(sol)


def test_dim3_rejects_mu_dependent_product():
    with pytest.raises(FamilyError):
        build_dim3("xi2 * (2 + sin(mu))", "xi3", "mu", BOX)


def test_jet_unit_stretch_gives_linear_tau3():
    sol = build_jet("xi2", "xi3", "1", "1", "0", "0", "0", BOX)
    assert sp.simplify(sol.gamma.exprs[2] - (T + XI1)) == 0


def test_jet_ellipse_cauchy_function():
    k1, k2 = 2, 3
    sol = build_jet(f"{k1}*xi3*cos(xi2)", f"{k2}*xi3*sin(xi2)", "1", "1", "0", "0", "mu", BOX)
    assert sp.simplify(sol.cauchy_f.exprs[0] + k1 * k2 * XI3) == 0
    exact(sol)


def test_jet_quadrature_tau3():
    sol = build_jet("xi2", "xi3", "1 + sin(mu)/2", "1", "0", "0", "0", BOX)
    assert sol.params["tau3"] == "quadrature"
    tau3 = sol.gamma.exprs[2].subs({T: 0, XI1: MU})
    mus = np.linspace(-1.9, 1.9, 41)
    vals = lambdify([MU], [tau3])(mus)[0]
    assert np.all(np.diff(vals) > 0)
    ref = np.array([quad(lambda m: 1 / (1 + 0.5 * math.sin(m)), 0, m, epsabs=1e-13)[0] for m in mus])
    assert np.max(np.abs(vals - ref)) <= 1e-9
    # derivative oracle: tau3' alpha beta = 1
    d = sp.diff(tau3, MU) * (1 + sp.sin(MU) / 2)
    assert np.allclose(lambdify([MU], [d])(mus)[0], 1, atol=1e-12)
    exact(sol)


def test_jet_rejects_vanishing_alpha():
    with pytest.raises(FamilyError):
        build_jet("xi2", "xi3", "sin(mu)", "1", "0", "0", "0", BOX)


def test_dim2_trivial_product():
    sol = build_dim2("xi3", "lam", "mu", "xi2", BOX)
    assert float(sol.cauchy_f.exprs[0]) == -1.0  # determinant order gives f < 0; only f != 0 is required
    exact(sol)


def test_dim2_rejects_flat_lambda():
    with pytest.raises(FamilyError, match="zero gradient"):
        build_dim2("xi3", "lam", "mu", "mu", BOX)


def test_torus_knot_presets_are_dim2_instances(sol13):
    assert sol13.family == "torus-knot:sol13"
    assert sp.simplify(sol13.cauchy_f.exprs[0] - XI3) == 0


def test_torus_points(sol13, sol14):
    assert np.allclose(eulerian_fields(sol13, (0, 0, 0, 1)).x, [0, math.sqrt(3), 0], atol=1e-14)
    assert np.allclose(eulerian_fields(sol14, (0, 0, 0, 1)).x, [0, math.sqrt(5), 0], atol=1e-14)


def test_torus_margin_rejected():
    dom = DomainBox((0, 0, 0, 0), (1, 1, 1, 2))
    with pytest.raises(FamilyError, match="margin"):
        build_torus_knot(TorusKnotParams(b="1"), dom)


def test_torus_k_nonzero():
    with pytest.raises(FamilyError):
        TorusKnotParams(k=0)


def test_minimal_period(sol13, sol14):
    assert minimal_period(sol13) == pytest.approx(2 * math.pi)
    assert minimal_period(sol14) == pytest.approx(2 * math.pi)
    sol = build_torus_knot(TorusKnotParams(phi="mu/2", k=3), PRESET_DOMAIN)
    assert minimal_period(sol) == pytest.approx(4 * math.pi)


def test_disturbance_rides_characteristic():
    sol = sol14(u="sin(s) + s^2/5")
    u_part = sol.gamma.exprs[0] - sol14().gamma.exprs[0]
    d = sp.Symbol("d")
    assert sp.simplify(u_part.subs({T: T + d, XI1: XI1 + d}) - u_part) == 0


def test_dim2_constant_u_is_galilean_of_stationary():
    base = build_dim2("xi3", "lam", "mu", "xi2", BOX)
    moving = build_dim2("xi3", "lam", "mu", "xi2", BOX, u="-s")
    # -(t - xi1) + 2t = t + xi1: the boosted flow depends on mu only
    back = GeneralizedGalilean(("2*t", "0", "0")).apply(moving)
    r0 = residual_incompressible(base, G).max_residual
    r1 = residual_incompressible(back, G).max_residual
    assert r0 == pytest.approx(r1, abs=1e-12)
    for e in back.gamma.exprs:
        assert sp.simplify(sp.diff(e, T) - sp.diff(e, XI1)) == 0


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["sin", "cos", "exp", "tanh"]), st.floats(0.2, 2.0), st.floats(-1, 1))
def test_catalog_derivatives_match_fd(fn, a, x):
    f = ScalarFn.parse(f"{fn}({a}*mu) + mu^3/7", (MU,))
    h = 1e-5
    v = lambdify([MU], [f.expr])
    dv = lambdify([MU], [f.diff(0).expr])
    fd = (v(x + h)[0] - v(x - h)[0]) / (2 * h)
    assert abs(fd - dv(x)[0]) <= 1e-6
