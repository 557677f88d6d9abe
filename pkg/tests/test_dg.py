import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmsfem.errors import SolverError
from gmsfem.fields import channels_field, constant_field
from gmsfem.grid import build_grid
from gmsfem.dg import (
    assemble_dg,
    build_dg_offline,
    default_gamma,
    dg_snapshots,
    dg_spectral,
    ipdg_solve,
    pencil_eig,
)


@pytest.fixture(scope="module")
def ones33():
    g = build_grid(3, 3, 4)
    return g, constant_field(g, 1.0)


@pytest.fixture(scope="module")
def chan33():
    g = build_grid(3, 3, 4)
    k = channels_field(g, 1e3, seed=7)
    return g, k, build_dg_offline(g, k, "full")


def _in_span(V, v):
    x, *_ = np.linalg.lstsq(V, v, rcond=None)
    return np.linalg.norm(V @ x - v) / max(np.linalg.norm(v), 1e-300)


# ------------------------------------------------------------------ snapshots
@pytest.mark.parametrize("layers", [0, 1, 2])
def test_linears_in_snapshot_span(ones33, layers):
    g, k = ones33
    snap = dg_snapshots(g, k, 4, layers)
    xy = g.fine_coords[snap.nodes]
    for v in (np.ones(len(xy)), xy[:, 0], xy[:, 1]):
        assert _in_span(snap.columns, v) < 1e-8


def test_dedup_drops_redundant_restrictions(ones33):
    g, k = ones33
    snap = dg_snapshots(g, k, 4, 2)
    assert snap.count < snap.raw_count
    assert snap.count == np.linalg.matrix_rank(snap.restricted, tol=1e-10 * np.linalg.norm(snap.restricted, 2))


def test_layers_zero_uses_block_boundary(ones33):
    g, k = ones33
    snap = dg_snapshots(g, k, 4, 0)
    assert np.array_equal(snap.plus_nodes, snap.nodes)
    r = g.refine
    assert snap.raw_count == 4 * r
    with pytest.raises(ValueError):
        dg_snapshots(g, k, 4, -1)


def test_spectral_lowest_modes_for_constant_coefficient(ones33):
    g, k = ones33
    gaps = []
    for layers in (0, 1, 2):
        frag = dg_spectral(g, k, dg_snapshots(g, k, 4, layers))
        xy = g.fine_coords[frag.nodes]
        # constant first, then a degenerate pair by the x₁ ↔ x₂ symmetry
        assert np.isclose(frag.eigenvalues[0], 0.0, atol=1e-10)
        assert np.isclose(frag.eigenvalues[1], frag.eigenvalues[2], rtol=1e-8)
        assert _in_span(frag.modes[:, :1], np.ones(len(xy))) < 1e-10
        gaps.append(max(_in_span(frag.modes[:, :3], v) for v in (xy[:, 0], xy[:, 1])))
    # the pair approaches the linears as the oversampling grows
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.01


# ------------------------------------------------------------------ pencil
def test_pencil_2x2_closed_form():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    S = np.diag([1.0, 0.0])
    vals, vecs = pencil_eig(A, S)
    # finite eigenvalue is the Schur complement A11 - A12²/A22
    assert np.isclose(vals[0], 2.0 - 1.0 / 3.0)
    assert np.isinf(vals[1])
    x = vecs[:, 0]
    assert np.isclose(x @ S @ x, 1.0)
    # A-orthogonal to the null direction of S
    assert abs(x @ A @ np.array([0.0, 1.0])) < 1e-12


def test_pencil_definite_matches_eigh():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    vals, _ = pencil_eig(A, S)
    import scipy.linalg as sla

    assert np.allclose(vals, sla.eigh(A, S, eigvals_only=True))


def test_pencil_zero_boundary_form_raises():
    with pytest.raises(SolverError):
        pencil_eig(np.eye(2), np.zeros((2, 2)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 7), k=st.integers(0, 3))
def test_pencil_property(seed, n, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n))
    A = X @ X.T + n * np.eye(n)
    Y = rng.normal(size=(n, n - min(k, n - 1)))
    S = Y @ Y.T
    vals, vecs = pencil_eig(A, S)
    fin = np.isfinite(vals)
    assert np.all(vals[fin] >= -1e-10)
    assert np.linalg.matrix_rank(vecs) == n
    V = vecs[:, fin]
    assert np.allclose(A @ V, S @ V * vals[fin], atol=1e-7 * np.abs(A).max())


def test_fragment_eigenvalues_nonnegative_and_full_span(chan33):
    g, k, off = chan33
    for frag in off.fragments:
        assert np.all(frag.eigenvalues >= 0)
    snap = dg_snapshots(g, k, 4, off.layers)
    assert _in_span(off.fragments[4].modes, snap.restricted) < 1e-7


# ------------------------------------------------------------------ IPDG
def test_ipdg_matrix_symmetric(chan33):
    g, k, off = chan33
    K, *_ = assemble_dg(off.with_counts(3), k, 1.0, 0.0)
    assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()


def test_constant_has_zero_jump(ones33):
    g, k = ones33
    off = build_dg_offline(g, k, "full")
    sol = ipdg_solve(off, k, 0.0, 1.0, gamma=10.0)
    assert sol.jump_seminorm < 1e-10
    for b, u in enumerate(sol.blocks):
        assert np.allclose(u, 1.0, atol=1e-10)


def test_linear_data_reproduced(ones33):
    g, k = ones33
    off = build_dg_offline(g, k, "full")
    sol = ipdg_solve(off, k, 0.0, lambda x, y: x, gamma=10.0)
    assert sol.energy_error < 1e-10
    assert sol.l2_error < 1e-10


def test_jump_seminorm_decreases_with_gamma(chan33):
    g, k, off = chan33
    f = lambda x, y: np.sin(3 * x) + y  # noqa: E731
    bc = lambda x, y: x * y  # noqa: E731
    res = [ipdg_solve(off, k, f, bc, gamma=gm) for gm in (10.0, 100.0, 1000.0)]
    jumps = [r.jump_seminorm for r in res]
    assert jumps[0] > jumps[1] > jumps[2]
    # jumps scale like 1/γ once the penalty dominates
    assert 5 < jumps[1] / jumps[2] < 20
    errs = [r.energy_error for r in res]
    assert errs[0] > errs[1] > errs[2]
    assert all(r.coercive for r in res)


def test_small_gamma_flagged_not_coercive(chan33):
    g, k, off = chan33
    with pytest.warns(RuntimeWarning, match="not positive definite"):
        sol = ipdg_solve(off, k, 1.0, 0.0, gamma=0.1)
    assert not sol.coercive
    assert sol.min_eigenvalue < 0
    with pytest.raises(SolverError):
        ipdg_solve(off, k, 1.0, 0.0, gamma=0.1, strict=True)


def test_default_gamma_and_counts(chan33):
    g, k, off = chan33
    sub = off.with_counts(3)
    assert default_gamma(sub.counts) == 12.0
    assert sub.dof == 3 * g.n_blocks
    with pytest.raises(ValueError):
        off.with_counts(0)
    with pytest.raises(ValueError):
        assemble_dg(sub, k, gamma=-1.0)


def test_nested_dg_spaces_error_nonincreasing_full(chan33):
    # at fixed γ, enlarging to the full space cannot increase the DG energy error much;
    # the full space reproduces the best fit to within the penalty consistency error
    g, k, off = chan33
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e_small = ipdg_solve(off.with_counts(4), k, 1.0, 0.0, gamma=100.0).energy_error
        e_full = ipdg_solve(off, k, 1.0, 0.0, gamma=100.0).energy_error
    assert e_full < e_small


def test_l2_gap_to_conforming_solution_shrinks_with_gamma(chan33):
    # with f = 0 the fine solution is κ-harmonic in every block, so the full
    # space contains it up to the jumps the penalty removes
    g, k, off = chan33
    bc = lambda x, y: x * y + np.sin(2 * y)  # noqa: E731
    gaps = [ipdg_solve(off, k, 0.0, bc, gamma=gm).l2_error for gm in (10.0, 100.0, 1000.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3
