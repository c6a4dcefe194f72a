import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natmhd.classification import StateFunction
from natmhd.diffgeo import DomainBox, DomainError, SymbolicMap
from natmhd.expr import T, XI1, XI2, XI3
from natmhd.families import build_field_aligned, sol13 as make_sol13
from natmhd.solution import (
    GridSpec,
    PressureModel,
    Solution,
    cauchy_check,
    constant_map,
    eulerian_fields,
    eulerian_residual,
    perturb,
    residual_compressible,
    residual_incompressible,
    verify_all,
    wave_residual,
)
from natmhd.symmetry import GeneralizedGalilean

from .conftest import grid

BOX = DomainBox((-1, -1, -1, -1), (1, 1, 1, 1))
G5 = GridSpec.uniform(((-0.9, 0.9),) * 4, 5)


def rest(P0=1.0):
    return Solution(SymbolicMap([XI1, XI2, XI3], BOX), constant_map(1), PressureModel.constant_total(P0),
                    constant_map(1), BOX)


def gas_static(p="1"):
    from natmhd.expr import COORDS, parse

    press = PressureModel("gas", SymbolicMap([parse(p, COORDS)], BOX))
    return Solution(SymbolicMap([XI1, XI2, XI3], BOX), constant_map(1), press, constant_map(1), BOX)


def test_rest_fields():
    s = eulerian_fields(rest(), (0.1, 0.2, 0.3, 0.4))
    assert np.allclose(s.u, 0)
    assert np.allclose(s.B, [1, 0, 0])
    assert s.p == pytest.approx(0.5)
    assert s.P == pytest.approx(1.0)


def test_field_aligned_velocity_equals_field():
    sol = build_field_aligned(["mu", "xi2", "xi3"], BOX)
    s = eulerian_fields(sol, (0.1, 0.2, 0.3, 0.4))
    assert np.allclose(s.u, [1, 0, 0])
    assert np.allclose(s.u, s.B / s.rho)


def test_sol13_point(sol13):
    s = eulerian_fields(sol13, (0, 0, 0, 1))
    assert np.allclose(s.x, [0, math.sqrt(3), 0], atol=1e-14)
    # closed-form partials at the point: lambda = sqrt(2 + xi3 cos(3 mu + xi2))
    # d/dxi1 of (xi3 sin(3mu + xi2), lam cos 2mu, lam sin 2mu) at mu = 0, lam = sqrt(3)
    b_exact = np.array([3.0, 0.0, 2 * math.sqrt(3)])
    assert np.allclose(s.b, b_exact, atol=1e-13)
    assert np.allclose(s.u, s.b, atol=1e-13)  # u = 0: stationary part only
    assert s.p == pytest.approx(1 - 0.5 * b_exact @ b_exact)


def test_eulerian_fields_domain_check():
    with pytest.raises(DomainError):
        eulerian_fields(rest(), (0, 3, 0, 0))


def test_state_identities(sol14):
    X = grid(4).points()
    s = eulerian_fields(sol14, X)
    assert np.allclose(s.B, s.rho[:, None] * s.b)
    assert np.allclose(s.P, s.p + 0.5 * np.sum(s.B ** 2, axis=1))


def test_rest_residuals_vanish():
    sol = rest()
    assert residual_incompressible(sol, G5).max_residual == 0
    assert eulerian_residual(sol, G5).max_residual == 0
    assert cauchy_check(sol, G5).max_residual == 0


def test_sol13_incompressible(sol13, small_grid):
    r = residual_incompressible(sol13, small_grid)
    assert r.passed and r.max_residual <= 1e-6


def test_sol13_perturbed_constraint(sol13, small_grid):
    r = residual_incompressible(perturb(sol13, 0.01, "sin(xi2)"), small_grid)
    assert r.equations["constraint"].max >= 1e-3
    assert not r.passed


def test_sol13_cauchy(sol13, small_grid):
    r = cauchy_check(sol13, small_grid)
    assert r.max_residual <= 1e-8
    assert r.equations["t_xi1_variation"].max <= 1e-8


def test_sol13_cauchy_wrong_f(sol13, small_grid):
    from dataclasses import replace

    r = cauchy_check(replace(sol13, cauchy_f=constant_map(1)), small_grid)
    assert r.equations["cauchy"].max == pytest.approx(0.5, abs=1e-8)  # |xi3 - 1| peaks at xi3 = 0.5


def test_sol14_eulerian(sol14, small_grid):
    r = eulerian_residual(sol14, small_grid)
    assert r.passed and r.max_residual <= 1e-6


def test_non_solution_induction():
    g = SymbolicMap([XI1 + 0.3 * np.sin(1) * T * XI2, XI2 + 0.2 * T * XI1 * XI3, XI3], BOX)
    sol = Solution(g, constant_map(1), PressureModel.constant_total(1), constant_map(1), BOX)
    r = eulerian_residual(sol, G5)
    assert r.equations["induction"].max >= 1e-2


def test_compressible_static_any_h():
    for h in ("rho^2", "p/rho", "exp(p)"):
        r = residual_compressible(gas_static("0.7"), StateFunction.parse(h), G5)
        assert r.max_residual == 0


def test_compressible_galilean_boost():
    sol = GeneralizedGalilean(("t", "2*t", "0")).apply(gas_static("0.7"))
    r = residual_compressible(sol, StateFunction.parse("rho^2"), G5)
    assert r.max_residual <= 1e-6


def test_compressible_pressure_gradient_control():
    r = residual_compressible(gas_static("0.7 + 0.1*xi1"), StateFunction.parse("rho^2"), G5)
    assert r.equations["momentum"].max >= 1e-2


def test_compressible_needs_gas_model():
    with pytest.raises(ValueError):
        residual_compressible(rest(), StateFunction.parse("rho"), G5)


def test_wave_relation(sol13, sol14, small_grid):
    assert wave_residual(sol13, small_grid).max_residual <= 1e-8
    assert wave_residual(sol14, small_grid).max_residual <= 1e-8


def test_report_json_is_deterministic(sol13, small_grid):
    a = residual_incompressible(sol13, small_grid).to_json()
    b = residual_incompressible(sol13, small_grid).to_json()
    assert a == b
    assert '"passed": true' in a


def test_report_worst_point_in_grid(sol13, small_grid):
    r = residual_incompressible(perturb(sol13, 0.01), small_grid)
    pts = small_grid.points()
    w = np.array(r.equations["constraint"].worst)
    assert np.min(np.max(np.abs(pts - w), axis=1)) == 0


def test_singular_points_excluded_and_fail():
    g = SymbolicMap([XI1, XI2 * XI3, XI3], BOX)  # det = xi3, zero on a grid plane
    sol = Solution(g, constant_map(1), PressureModel.constant_total(1), SymbolicMap([XI3], BOX), BOX)
    r = cauchy_check(sol, G5)
    assert r.n_excluded > 0
    assert not r.passed


def test_fd_route_matches(sol13):
    g = grid(5)
    r = residual_incompressible(sol13.with_fd(), g)
    assert r.derivative["mode"] == "finite-difference"
    assert r.max_residual <= 1e-4


@pytest.mark.parametrize("amp", [0.0, 1e-3, 3e-2])
def test_formulations_agree(sol13, amp):
    sol = perturb(sol13, amp, "sin(xi2)") if amp else sol13
    g = grid(5)
    tol = 1e-6
    a = residual_incompressible(sol, g, tol).passed
    b = eulerian_residual(sol, g, 10 * tol).passed
    assert a == b


def test_residual_grows_with_amplitude():
    sol = make_sol13()
    g = grid(5)
    prev = 0.0
    for amp in (1e-4, 1e-3, 1e-2, 1e-1):
        m = residual_incompressible(perturb(sol, amp), g).max_residual
        assert m > prev
        prev = m


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(-1, 1))
def test_constant_rho_invariant(rho0, shift):
    # gamma = xi / rho0^(1/3) keeps rho det = 1
    c = rho0 ** (-1.0 / 3)
    g = SymbolicMap([c * XI1 + shift, c * XI2, c * XI3], BOX)
    sol = Solution(g, constant_map(rho0), PressureModel.constant_total(1), constant_map(1), BOX)
    for r in verify_all(sol, G5):
        assert r.max_residual <= 1e-12
