import numpy as np
import pytest

from src.grid.interpolate import interpolate_field, interpolate_gradient
from src.grid.norms import face_inner, hminus1_bound_constant, hminus1_norm, inner, l2_norm
from src.grid.operators import divergence, gradient, laplacian
from src.grid.solvers import solve_implicit
from src.grid.spatial import GridError, build_grid


def test_refine_halves_spacing():
    grid = build_grid([[0.0, 1.0]], [15])
    fine = grid.refine()
    assert fine.counts == (31,)
    assert np.isclose(fine.spacing[0], grid.spacing[0] / 2)


def test_grid_rejects_degenerate_axes():
    with pytest.raises(GridError):
        build_grid([[0.0, 1.0]], [1])
    with pytest.raises(GridError):
        build_grid([[1.0, 1.0]], [5])
    with pytest.raises(GridError):
        build_grid([[0.0, 1.0]], [5, 5])


def test_divergence_is_negative_adjoint_of_gradient():
    grid = build_grid([[0.0, 1.0], [0.0, 2.0]], [7, 5])
    rng = np.random.default_rng(0)
    u = rng.standard_normal(grid.size)
    g = [rng.standard_normal(int(np.prod(grid.face_shape(i)))) for i in range(grid.dim)]
    assert np.isclose(inner(grid, divergence(grid, g), u), -face_inner(grid, g, gradient(grid, u)))


def test_laplacian_is_div_grad():
    grid = build_grid([[0.0, 1.0], [-1.0, 1.0]], [6, 9])
    u = np.random.default_rng(1).standard_normal(grid.size)
    assert np.allclose(laplacian(grid) @ u, divergence(grid, gradient(grid, u)))


def test_laplacian_second_order():
    errors = []
    for n in (31, 63):
        grid = build_grid([[0.0, 1.0]], [n])
        u = np.sin(np.pi * grid.points[:, 0])
        errors.append(np.max(np.abs(laplacian(grid) @ u + np.pi**2 * u)))
    assert errors[0] < 2e-2
    assert 3.5 < errors[0] / errors[1] < 4.5


def test_implicit_solve_inverts_shifted_operator():
    grid = build_grid([[0.0, 1.0]], [33])
    rhs = np.cos(3.0 * grid.points[:, 0])
    op = laplacian(grid)
    w = solve_implicit(grid, op, 2.0, rhs, tol=1e-12)
    assert np.allclose(2.0 * w - op @ w, rhs, atol=1e-8)


def test_interpolation_hits_grid_values_and_nan_outside():
    grid = build_grid([[0.0, 1.0]], [15])
    u = np.sin(np.pi * grid.points[:, 0])
    assert np.allclose(interpolate_field(grid, u, grid.points), u)
    assert np.isnan(interpolate_field(grid, u, np.array([[1.5]]))[0])
    assert np.isnan(interpolate_gradient(grid, u, np.array([[-0.5]]))[0, 0])


def test_hminus1_norm_below_bound():
    grid = build_grid([[0.0, 1.0]], [31])
    h = np.random.default_rng(2).standard_normal(grid.size)
    assert hminus1_norm(grid, h) <= hminus1_bound_constant(grid) * l2_norm(grid, h) * (1.0 + 1e-9)
