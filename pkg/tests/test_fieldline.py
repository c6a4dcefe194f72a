import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natmhd.fieldline import (
    DivergenceError,
    EulerianInitialData,
    FieldLineError,
    IntegratorConfig,
    LineEscapeError,
    SeedSurface,
    TransversalityError,
    build_initial_map,
    build_initial_velocity,
    grid_derivative,
    incompressibility_check,
    read_grid,
    trace_line,
    write_grid,
)

BOX2 = ((-2, 2),) * 3
CIRC = EulerianInitialData.from_expressions("-y, x, 0", box=BOX2)
HALF_PLANE = SeedSurface.from_expressions("xi2, 0, xi3")
CIRC_GRID = ((0, 2 * math.pi, 129), (0.5, 1.5, 9), (-0.5, 0.5, 9))


def ident_axes(n=7):
    ax = [np.linspace(0, 1, n)] * 3
    g = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    return ax, g


def test_constant_field_segment():
    data = EulerianInitialData.from_expressions("0, 0, 1")
    pl = trace_line(data, (0, 0, 0), (0, 1), n=11)
    assert np.allclose(pl.points[-1], [0, 0, 1], atol=1e-12)
    assert np.allclose(pl.points[:, :2], 0)


def test_circular_field_closes():
    pl = trace_line(CIRC, (1, 0, 0), (0, 2 * math.pi), n=257)
    assert pl.gap <= 1e-8
    assert np.allclose(np.linalg.norm(pl.points[:, :2], axis=1), 1, atol=1e-9)


def test_rk4_convergence_ratio():
    errs = []
    for h in (0.1, 0.05):
        cfg = IntegratorConfig(method="rk4", step=h)
        pl = trace_line(CIRC, (1, 0, 0), (0, 2 * math.pi), cfg, n=9)
        s = pl.params
        exact = np.stack([np.cos(s), np.sin(s), 0 * s], axis=1)
        errs.append(np.max(np.abs(pl.points - exact)))
    assert 8 <= errs[0] / errs[1] <= 32


def test_line_truncated_when_leaving_box():
    data = EulerianInitialData.from_expressions("1, 0, 0")
    pl = trace_line(data, (0, 0, 0), (0, 3), n=31)
    assert pl.truncated
    assert pl.points[:, 0].max() <= 1 + 1e-12


def test_start_outside_rejected():
    with pytest.raises(FieldLineError):
        trace_line(CIRC, (5, 0, 0), (0, 1))


def test_divergence_guard():
    with pytest.raises(DivergenceError):
        EulerianInitialData.from_expressions("x, 0, 0")


def test_density_must_be_positive():
    with pytest.raises(FieldLineError):
        EulerianInitialData.from_expressions("0, 0, 1", rho0="x")


def test_integrator_config_validation():
    with pytest.raises(FieldLineError):
        IntegratorConfig(method="euler")
    with pytest.raises(FieldLineError):
        IntegratorConfig(step=-1)


def test_constant_field_initial_map():
    data = EulerianInitialData.from_expressions("0, 0, 1", box=BOX2)
    seed = SeedSurface.from_expressions("xi2, xi3, 0")
    imap = build_initial_map(data, seed, ((0, 1, 5), (-1, 1, 5), (-1, 1, 5)))
    A1, A2, A3 = np.meshgrid(*imap.axes, indexing="ij")
    assert np.allclose(imap.gamma0, np.stack([A2, A3, A1], axis=-1), atol=1e-12)
    assert np.allclose(imap.f, 1, atol=1e-12)


def test_circular_initial_map():
    imap = build_initial_map(CIRC, HALF_PLANE, CIRC_GRID)
    assert imap.xi1_variation <= 1e-5
    r = incompressibility_check(imap, f="-xi2")
    assert r.passed, r.summary()
    assert not imap.fold_over


def test_non_solenoidal_field_fails():
    data = EulerianInitialData.from_expressions("1 + x, 0, 0", box=((-0.5, 3),) * 3, check=False)
    seed = SeedSurface.from_expressions("0, xi2, xi3")
    imap = build_initial_map(data, seed, ((0, 1, 9), (-0.5, 0.5, 5), (-0.5, 0.5, 5)))
    r = incompressibility_check(imap)
    assert not r.passed
    assert r.extras["xi1_variation"] > 1e-5


def test_transversality():
    seed = SeedSurface.from_expressions("xi2, xi3, 0")  # z = 0 plane contains the circular field
    with pytest.raises(TransversalityError):
        build_initial_map(CIRC, seed, CIRC_GRID)


def test_escape_raises():
    data = EulerianInitialData.from_expressions("1, 0, 0")
    seed = SeedSurface.from_expressions("0, xi2, xi3")
    with pytest.raises(LineEscapeError):
        build_initial_map(data, seed, ((0, 3, 7), (-0.5, 0.5, 5), (-0.5, 0.5, 5)))


def test_translational_gauge():
    base = build_initial_map(CIRC, HALF_PLANE, ((0, 1, 17), (0.5, 1.5, 17), (-0.5, 0.5, 5)))
    moved = build_initial_map(CIRC, HALF_PLANE, ((0, 1, 17), (0.5, 1.5, 17), (-0.5, 0.5, 5)),
                              offset=lambda a, b: 0.3 * np.sin(a) + b)
    assert np.max(np.abs(moved.f - base.f)) <= 1e-5


def test_identity_map_check():
    ax, g = ident_axes()
    assert incompressibility_check((ax, g), f=1.0).max_residual <= 1e-12


def test_rescaled_axis_residual():
    ax, g = ident_axes()
    g = g.copy()
    g[..., 0] *= 1.1
    r = incompressibility_check((ax, g), f=1.0)
    assert r.max_residual == pytest.approx(0.1, abs=1e-10)


def test_initial_velocity():
    ax, g = ident_axes(5)
    assert np.all(build_initial_velocity(lambda P: np.zeros_like(P), g) == 0)
    one = build_initial_velocity(lambda P: np.array([1.0, 0, 0]), g)
    assert np.allclose(one, [1, 0, 0])
    assert np.allclose(build_initial_velocity(lambda P: P, g), g)


def test_initial_velocity_failure():
    ax, g = ident_axes(5)
    with pytest.raises(FieldLineError):
        build_initial_velocity(lambda P: np.full_like(P, np.nan), g)


def test_grid_file_round_trip(tmp_path):
    imap = build_initial_map(CIRC, HALF_PLANE, ((0, 1, 5), (0.5, 1.5, 5), (-0.5, 0.5, 5)))
    path = tmp_path / "g.grid"
    write_grid(path, imap, imap.gamma0)
    axes, fields = read_grid(path)
    assert np.allclose(fields["x"], imap.gamma0[..., 0], rtol=1e-8)
    assert np.allclose(fields["f"], imap.f, rtol=1e-8)
    assert set(fields) == {"x", "y", "z", "f", "u", "v", "w"}
    assert len(axes[0]) == 5


def test_grid_derivative_needs_five():
    with pytest.raises(FieldLineError):
        grid_derivative(np.zeros(4), 0, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 3), st.integers(9, 40))
def test_grid_derivative_polynomial_exact(c, n):
    x = np.linspace(-1, 1, n)
    y = c * x ** 3 - x ** 2 + 2
    d = grid_derivative(y, 0, x[1] - x[0])
    assert np.allclose(d, 3 * c * x ** 2 - 2 * x, atol=1e-9)


def test_sol13_patch_map(sol13):
    data = EulerianInitialData.from_solution(sol13, 0.0, ((-0.1, 0.3), (-0.1, 0.3), (0.6, 1.0)))
    assert data.max_divergence <= 1e-6

    def seed_fn(a, b):
        z = np.zeros_like(a)
        return sol13.gamma.value(np.column_stack([z, z, a, b]))

    imap = build_initial_map(data, SeedSurface(seed_fn), ((0, 0.2, 21), (0, 0.2, 9), (0.7, 0.9, 9)))
    assert incompressibility_check(imap, f="xi3").passed
