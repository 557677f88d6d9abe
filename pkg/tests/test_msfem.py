import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmsfem.fields import CoefficientField, channels_field, checkerboard_field, constant_field, laminate_field
from gmsfem.fine_solver import FineSystem
from gmsfem.grid import build_grid
from gmsfem.homogenization import coarse_p1_stiffness, homogenize
from gmsfem.msfem import coarse_matrix, ms_basis, ms_basis_oversampled, msfem_solve


def _trace_nodes(g):
    """Fine nodes on coarse-element boundaries (block edges and block diagonals)."""
    i, j = g.fine_coords_index
    r = g.refine
    return (i % r == 0) | (j % r == 0) | (i % r == j % r)


def test_constant_kappa_gives_hats():
    g = build_grid(3, 3, 4)
    b = ms_basis(g, constant_field(g, 2.0))
    assert abs(b.R0 - g.hat_matrix).max() < 1e-12


def test_channel_basis_oscillates_inside_and_is_linear_on_edges():
    g = build_grid(4, 4, 10)
    k = channels_field(g, 1e4, seed=7)
    R, H = ms_basis(g, k).R0.toarray(), g.hat_matrix.toarray()
    on = _trace_nodes(g)
    assert np.abs(R[on] - H[on]).max() < 1e-12
    assert np.abs(R[~on] - H[~on]).max() > 0.1


def test_oversampled_constant_kappa_gives_hats_and_identity_alpha():
    g = build_grid(3, 3, 4)
    b = ms_basis_oversampled(g, constant_field(g, 1.0), 2)
    assert abs(b.R0 - g.hat_matrix).max() < 1e-12
    for a, B in b.alpha:
        assert np.allclose(a, 0.0, atol=1e-8) and np.allclose(B, np.eye(2), atol=1e-8)


@pytest.mark.parametrize("kind", ["linear-bc", "oversampled"])
def test_linear_solution_exact(kind):
    g = build_grid(4, 4, 4)
    k = constant_field(g, 1.0)
    basis = ms_basis(g, k) if kind == "linear-bc" else ms_basis_oversampled(g, k, 2)
    sol = msfem_solve(basis, k, 0.0, lambda x, y: x)
    assert sol.energy_error < 1e-10
    assert np.allclose(sol.fine, g.fine_coords[:, 0], atol=1e-12)


@pytest.mark.parametrize("f,bc", [(0.0, lambda x, y: x), (1.0, 0.0)])
def test_oversampled_beats_linear_bc_on_periodic_field(f, bc):
    # layers across the x1 direction, eps/H = 1/8
    g = build_grid(4, 4, 32)
    k = laminate_field(g, 1.0, 100.0, 4, axis=0)
    sys = FineSystem(g, k)
    e_lin = msfem_solve(ms_basis(g, k), k, f, bc, sys).energy_error
    e_ovs = msfem_solve(ms_basis_oversampled(g, k, 16), k, f, bc, sys).energy_error
    assert e_ovs <= e_lin


def test_coarse_stiffness_matches_homogenized_per_coarse_triangle():
    # cell problems on the coarse triangles themselves: identical matrices
    g = build_grid(4, 4, 16)
    k = checkerboard_field(g, 1.0, 10.0, 2)
    A_ms = coarse_matrix(ms_basis(g, k), FineSystem(g, k))
    A_hom = coarse_p1_stiffness(g, homogenize(g, k, per="triangle").tensors)
    big = np.abs(A_ms) > 1e-12 * np.abs(A_ms).max()
    assert np.all(np.abs(A_hom - A_ms)[big] <= 1e-8 * np.abs(A_ms)[big])


def test_coarser_H_reduces_error_on_same_fine_field():
    g1, g2 = build_grid(4, 4, 10), build_grid(8, 8, 5)
    k1 = channels_field(g1, 1e4, seed=7)
    k2 = CoefficientField(g2.Nx, g2.Ny, k1.values)
    e1 = msfem_solve(ms_basis(g1, k1), k1, 1.0, 0.0).energy_error
    e2 = msfem_solve(ms_basis(g2, k2), k2, 1.0, 0.0).energy_error
    assert e2 < e1


@settings(max_examples=10, deadline=None)
@given(arrays(float, 144, elements=st.floats(0.01, 100.0)))
def test_partition_of_unity_and_galerkin_orthogonality(vals):
    g = build_grid(3, 3, 4)
    k = CoefficientField(g.Nx, g.Ny, vals)
    basis = ms_basis(g, k)
    assert np.allclose(np.asarray(basis.R0.sum(axis=1)).ravel(), 1.0, atol=1e-10)
    sys = FineSystem(g, k)
    sol = msfem_solve(basis, k, 1.0, lambda x, y: x * y, sys)
    interior = np.setdiff1d(np.arange(g.n_coarse_nodes), g.coarse_boundary_nodes)
    Rint = basis.R0[:, interior].toarray()
    r = Rint.T @ (sys.A @ (sol.reference - sol.fine))
    scale = np.abs(sys.A @ sol.reference).max() * np.abs(Rint).sum(axis=0).max()
    assert np.abs(r).max() <= 1e-8 * scale
    A_H = coarse_matrix(basis, sys)
    assert np.allclose(A_H, A_H.T, atol=1e-10 * np.abs(A_H).max())
    assert np.linalg.eigvalsh(A_H).min() > -1e-10 * np.abs(A_H).max()


def test_oversampled_partition_of_unity_and_support():
    g = build_grid(3, 3, 6)
    k = channels_field(g, 1e3, seed=2, width=2)
    b = ms_basis_oversampled(g, k, 3)
    assert np.allclose(np.asarray(b.R0.sum(axis=1)).ravel(), 1.0, atol=1e-10)
    R = b.R0.tocsc()
    for i in range(g.n_coarse_nodes):
        rows = R[:, i].nonzero()[0]
        inside = np.unique(g.fine_triangles[g.neighborhood(i)])
        assert np.isin(rows, inside).all()
