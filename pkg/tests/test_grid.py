import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmsfem.grid import build_grid, oversample, region_nodes


def test_identity_refinement_counts():
    g = build_grid(1, 1, 1)
    assert g.n_blocks == 1
    assert g.n_coarse_triangles == 2
    assert g.n_coarse_nodes == 4
    assert g.n_fine_triangles == 2


def test_ten_by_ten_sizes():
    g = build_grid(10, 10, 10)
    assert (g.Nx, g.Ny) == (100, 100)
    assert g.n_fine_cells == 100 * 100
    assert g.n_coarse_nodes == 121


def test_two_by_two_neighborhoods():
    # hand enumeration: the centre node touches every block, a corner node one block
    g = build_grid(2, 2, 2)
    center, corner = 4, 0
    assert sorted(g.neighborhood_blocks(center)) == [0, 1, 2, 3]
    assert list(g.neighborhood_blocks(corner)) == [0]
    # SW-NE split: the centre touches 6 of the 8 coarse triangles
    assert len(g.node_coarse_triangles[center]) == 6


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, 0, 1), (1, 1, 0), (-1, 2, 2)])
def test_rejects_zero_dimensions(bad):
    with pytest.raises(ValueError):
        build_grid(*bad)


def test_oversample_zero_layers_is_identity():
    g = build_grid(3, 3, 4)
    reg = g.block_triangles(4)
    assert np.array_equal(np.sort(oversample(g, reg, 0)), np.sort(reg))


def test_oversample_interior_block_grows_by_layers():
    g = build_grid(10, 10, 10)
    b = 5 * 10 + 5
    grown = oversample(g, g.block_triangles(b), 5)
    # (10 + 2*5)^2 cells, two triangles each
    assert grown.size == 2 * 20 * 20
    x = g.fine_coords[region_nodes(g, grown)]
    assert np.isclose(x[:, 0].min(), 0.45) and np.isclose(x[:, 0].max(), 0.65)


def test_oversample_corner_block_is_clipped():
    g = build_grid(10, 10, 10)
    grown = oversample(g, g.block_triangles(0), 5)
    assert grown.size == 2 * 15 * 15
    x = g.fine_coords[region_nodes(g, grown)]
    assert x.min() >= 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_every_fine_triangle_in_one_coarse_triangle(nx, ny, r):
    g = build_grid(nx, ny, r)
    counts = np.zeros(g.n_fine_triangles, dtype=int)
    for tris in g.coarse_triangle_fine:
        counts[tris] += 1
    assert np.all(counts == 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_hats_partition_of_unity(nx, ny, r):
    g = build_grid(nx, ny, r)
    assert np.allclose(np.asarray(g.hat_matrix.sum(axis=1)).ravel(), 1.0, atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 3))
def test_neighborhood_is_union_of_coarse_triangles_and_inside_oversampled(nx, ny, r, layers):
    g = build_grid(nx, ny, r)
    for i in range(g.n_coarse_nodes):
        expect = np.concatenate([g.coarse_triangle_fine[t] for t in g.node_coarse_triangles[i]])
        nb = g.neighborhood(i)
        assert np.array_equal(np.sort(nb), np.sort(expect))
        assert np.isin(nb, g.neighborhood_oversampled(i, layers)).all()


def test_coarse_edges_cover_interior_triangles_three_times():
    # each square block has 4 edges; a coarse triangle meets the omega_E of the
    # block-grid edges adjacent to its block plus edges it shares with neighbours
    g = build_grid(4, 4, 2)
    cover = np.zeros(g.n_coarse_triangles, dtype=int)
    tri_block = np.repeat(np.arange(g.n_blocks), 2)
    for e in range(g.n_coarse_edges):
        for b in g.edge_blocks(e):
            cover[tri_block == b] += 1
    assert cover.min() >= 3


def test_fine_mesh_conforms():
    # every interior fine edge is shared by exactly two fine triangles
    g = build_grid(3, 2, 3)
    edges = {}
    for t in g.fine_triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    assert set(edges.values()) <= {1, 2}
    bset = set(g.boundary_nodes.tolist())
    for (a, b), n in edges.items():
        if n == 1:
            assert a in bset and b in bset
