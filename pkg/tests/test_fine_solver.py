import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmsfem.errors import GmsfemError
from gmsfem.fields import CoefficientField, constant_field, laminate_field
from gmsfem.fine_solver import (
    FineSystem,
    LocalProblem,
    assemble_mass,
    assemble_stiffness,
    generalized_eig,
    norms,
    solve_dirichlet,
    solve_fine_global,
    triangle_gradients,
)
from gmsfem.grid import build_grid, region_nodes


def test_reference_triangle_stiffness():
    g = build_grid(1, 1, 1)
    # lower triangle (v00, v10, v11): the right angle sits at v10
    A = assemble_stiffness(g, 1.0, np.array([0])).toarray()
    nodes = list(region_nodes(g, np.array([0])))
    order = [nodes.index(1), nodes.index(0), nodes.index(3)]
    expect = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.allclose(A[np.ix_(order, order)], expect, atol=1e-15)


def test_reference_triangle_is_h_independent():
    A1 = assemble_stiffness(build_grid(1, 1, 1), 1.0, np.array([0])).toarray()
    A2 = assemble_stiffness(build_grid(1, 1, 7), 1.0, np.array([0])).toarray()
    assert np.allclose(A1, A2)


@settings(max_examples=15, deadline=None)
@given(arrays(float, 36, elements=st.floats(1e-3, 1e3)))
def test_stiffness_kernel_linearity_symmetry(vals):
    g = build_grid(3, 3, 2)
    k = CoefficientField(g.Nx, g.Ny, vals)
    A = assemble_stiffness(g, k)
    assert abs(A - A.T).max() < 1e-12 * abs(A).max()
    assert np.abs(A @ np.ones(g.n_fine_nodes)).max() < 1e-10 * abs(A).max()
    A2 = assemble_stiffness(g, k.scaled(2.0))
    assert np.allclose(A2.toarray(), 2 * A.toarray(), rtol=1e-14)
    w = np.linalg.eigvalsh(A.toarray())
    assert w.min() > -1e-10 * w.max()


def test_dirichlet_reproduces_linears():
    g = build_grid(3, 3, 3)
    u = solve_dirichlet(g, constant_field(g, 3.0), g.neighborhood(5), lambda x, y: 1 + 2 * x - y)
    x = g.fine_coords[region_nodes(g, g.neighborhood(5))]
    assert np.allclose(u, 1 + 2 * x[:, 0] - x[:, 1], atol=1e-12)


def test_dirichlet_constant_trace():
    g = build_grid(3, 3, 3)
    k = laminate_field(g, 1.0, 1e3, 2)
    u = solve_dirichlet(g, k, g.neighborhood(5), 4.2)
    assert np.allclose(u, 4.2, atol=1e-12)


def test_two_layer_laminate_flux_is_harmonic_mean():
    # oracle: 1D two-layer profile with unit drop; flux = harmonic-mean conductance
    g = build_grid(1, 1, 8)
    k1, k2 = 1.0, 100.0
    k = laminate_field(g, k1, k2, period=2 * 4)  # bottom half k1, top half k2
    q = 1.0 / (0.5 / k1 + 0.5 / k2)

    def profile(x, y):
        return np.where(y <= 0.5, q * y / k1, q * 0.5 / k1 + q * (y - 0.5) / k2)

    u = solve_dirichlet(g, k, None, profile)
    x = g.fine_coords
    assert np.allclose(u, profile(x[:, 0], x[:, 1]), atol=1e-10)
    grad = triangle_gradients(g, u)
    flux = k.per_triangle() * grad[:, 1]
    assert np.allclose(flux, q, rtol=1e-8)
    assert np.isclose(q, 2 * 100 / 101)


def test_global_linear_solution():
    g = build_grid(4, 4, 3)
    u = solve_fine_global(g, constant_field(g, 1.0), 0.0, lambda x, y: x)
    assert np.allclose(u, g.fine_coords[:, 0], atol=1e-12)


def test_poisson_center_value_against_fourier_series():
    m = np.arange(1, 400, 2)
    M, N = np.meshgrid(m, m)
    sign = np.sin(M * np.pi / 2) * np.sin(N * np.pi / 2)
    oracle = 16 / np.pi**4 * np.sum(sign / (M * N * (M**2 + N**2)))
    assert abs(oracle - 0.0737) < 1e-4
    g = build_grid(8, 8, 8)
    u = solve_fine_global(g, constant_field(g, 1.0), 1.0, 0.0)
    center = g.fine_node(g.Nx // 2, g.Ny // 2)
    assert abs(u[center] - oracle) < 5e-4
    assert np.isclose(u.max(), u[center])


def test_norms_examples():
    g = build_grid(4, 4, 4)
    k = constant_field(g, 1.0)
    assert norms(g, np.zeros(g.n_fine_nodes), k) == (0.0, 0.0)
    x = g.fine_coords[:, 0]
    ea, el = norms(g, x, k)
    assert np.isclose(ea, 1.0, atol=1e-12)
    assert np.isclose(el, 1 / np.sqrt(3), rtol=1e-12)
    ea2, el2 = norms(g, 2 * x, k)
    assert np.isclose(ea2, 2 * ea) and np.isclose(el2, 2 * el)


def test_mass_matrix_integrates_one():
    g = build_grid(2, 3, 4)
    M = assemble_mass(g)
    one = np.ones(g.n_fine_nodes)
    assert np.isclose(one @ M @ one, 1.0)


def test_singular_local_problem_reported():
    g = build_grid(2, 2, 2)
    with pytest.raises(GmsfemError, match="singular"):
        LocalProblem(g, 1.0, g.neighborhood(4), dirichlet=np.array([], dtype=int), label="omega_4")


def test_generalized_eig_identity():
    d = generalized_eig(np.eye(4), np.eye(4))
    assert np.allclose(d.values, 1.0)


def test_generalized_eig_diagonal_k2():
    d = generalized_eig(np.diag([1.0, 2.0, 3.0]), np.eye(3), k=2)
    assert np.allclose(d.values, [1.0, 2.0])


def test_generalized_eig_hand_2x2():
    d = generalized_eig(np.diag([4.0, 1.0]), np.diag([2.0, 1.0]))
    assert np.allclose(d.values, [1.0, 2.0])
    # S-normalized: second eigenvector is e1 / sqrt(2)
    assert np.allclose(np.abs(d.vectors[:, 1]), [1 / np.sqrt(2), 0.0])


def _spd(rng, n, shift=0.0):
    B = rng.standard_normal((n, n))
    return B @ B.T + shift * np.eye(n)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_generalized_eig_residual_and_congruence(n, seed):
    rng = np.random.default_rng(seed)
    A = _spd(rng, n)
    S = _spd(rng, n, shift=n)
    d = generalized_eig(A, S)
    V, lam = d.vectors, d.values
    assert np.all(np.diff(lam) >= -1e-12)
    assert lam.min() > -1e-10 * lam.max()
    assert np.abs(A @ V - S @ V * lam).max() <= 1e-8 * np.abs(A).max()
    assert np.allclose(V.T @ S @ V, np.eye(n), atol=1e-8)
    T = rng.standard_normal((n, n)) + n * np.eye(n)
    d2 = generalized_eig(T.T @ A @ T, T.T @ S @ T)
    assert np.allclose(d2.values, lam, rtol=1e-8, atol=1e-10 * lam.max())


def test_fine_system_relative_errors():
    g = build_grid(3, 3, 3)
    sys = FineSystem(g, constant_field(g, 2.0))
    u = sys.solve(1.0, 0.0)
    assert sys.relative_errors(u, u) == (0.0, 0.0)
    ea, el = sys.relative_errors(u, 0.5 * u)
    assert np.isclose(ea, 0.5) and np.isclose(el, 0.5)
