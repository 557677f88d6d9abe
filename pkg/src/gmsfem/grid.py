"""Two-level structured mesh on the unit square.

The coarse grid is ``nx x ny`` square blocks, each split along its
south-west/north-east diagonal into two triangles.  The fine grid refines
every block into ``refine x refine`` square cells split along the same
diagonal direction, so fine triangles never straddle a coarse edge.

Numbering is row-major everywhere:

* fine node ``(i, j)``  -> ``j * (Nx + 1) + i``
* fine cell ``(ci, cj)`` -> ``cj * Nx + ci``; triangles ``2c`` (lower) and
  ``2c + 1`` (upper)
* coarse node ``(I, J)`` -> ``J * (nx + 1) + I``
* coarse block ``(BI, BJ)`` -> ``BJ * nx + BI``; coarse triangles ``2b`` and
  ``2b + 1``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

__all__ = ["GridHierarchy", "build_grid", "oversample"]

_MAX_FINE_CELLS = 4_000_000

# local vertex offsets (di, dj) of the lower and upper triangle of a square
_LOWER = ((0, 0), (1, 0), (1, 1))
_UPPER = ((0, 0), (1, 1), (0, 1))


@dataclass(frozen=True, eq=False)
class GridHierarchy:
    nx: int
    ny: int
    refine: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # ------------------------------------------------------------------ sizes
    @property
    def Nx(self) -> int:
        return self.nx * self.refine

    @property
    def Ny(self) -> int:
        return self.ny * self.refine

    @property
    def hx(self) -> float:
        return 1.0 / self.Nx

    @property
    def hy(self) -> float:
        return 1.0 / self.Ny

    @property
    def Hx(self) -> float:
        return 1.0 / self.nx

    @property
    def Hy(self) -> float:
        return 1.0 / self.ny

    @property
    def n_fine_nodes(self) -> int:
        return (self.Nx + 1) * (self.Ny + 1)

    @property
    def n_fine_cells(self) -> int:
        return self.Nx * self.Ny

    @property
    def n_fine_triangles(self) -> int:
        return 2 * self.n_fine_cells

    @property
    def n_coarse_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_blocks(self) -> int:
        return self.nx * self.ny

    @property
    def n_coarse_triangles(self) -> int:
        return 2 * self.n_blocks

    @property
    def n_coarse_edges(self) -> int:
        return self.nx * (self.ny + 1) + (self.nx + 1) * self.ny

    # ------------------------------------------------------------ fine level
    @cached_property
    def fine_coords(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.Nx + 1), np.arange(self.Ny + 1))
        return np.column_stack([i.ravel() * self.hx, j.ravel() * self.hy])

    @cached_property
    def fine_triangles(self) -> np.ndarray:
        """``(2 * Nx * Ny, 3)`` node indices; lower/upper interleaved per cell."""
        ci, cj = np.meshgrid(np.arange(self.Nx), np.arange(self.Ny))
        ci, cj = ci.ravel(), cj.ravel()
        stride = self.Nx + 1
        tris = np.empty((2 * ci.size, 3), dtype=np.int64)
        for k, (di, dj) in enumerate(_LOWER):
            tris[0::2, k] = (cj + dj) * stride + ci + di
        for k, (di, dj) in enumerate(_UPPER):
            tris[1::2, k] = (cj + dj) * stride + ci + di
        return tris

    @cached_property
    def triangle_orientation(self) -> np.ndarray:
        """0 for lower triangles, 1 for upper."""
        return np.tile(np.array([0, 1], dtype=np.int8), self.n_fine_cells)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        i, j = self.fine_coords_index
        mask = (i == 0) | (i == self.Nx) | (j == 0) | (j == self.Ny)
        return np.flatnonzero(mask)

    @cached_property
    def fine_coords_index(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.arange(self.n_fine_nodes)
        return n % (self.Nx + 1), n // (self.Nx + 1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_fine_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    def fine_node(self, i: int, j: int) -> int:
        return j * (self.Nx + 1) + i

    def cell_triangles(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        return np.sort(np.concatenate([2 * cells, 2 * cells + 1]))

    # ---------------------------------------------------------- coarse level
    @cached_property
    def coarse_coords(self) -> np.ndarray:
        I, J = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return np.column_stack([I.ravel() * self.Hx, J.ravel() * self.Hy])

    @cached_property
    def coarse_to_fine_node(self) -> np.ndarray:
        I, J = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return (J.ravel() * self.refine) * (self.Nx + 1) + I.ravel() * self.refine

    @cached_property
    def coarse_boundary_nodes(self) -> np.ndarray:
        n = np.arange(self.n_coarse_nodes)
        I, J = n % (self.nx + 1), n // (self.nx + 1)
        return np.flatnonzero((I == 0) | (I == self.nx) | (J == 0) | (J == self.ny))

    @cached_property
    def coarse_triangles(self) -> np.ndarray:
        BI, BJ = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        BI, BJ = BI.ravel(), BJ.ravel()
        stride = self.nx + 1
        tris = np.empty((2 * BI.size, 3), dtype=np.int64)
        for k, (di, dj) in enumerate(_LOWER):
            tris[0::2, k] = (BJ + dj) * stride + BI + di
        for k, (di, dj) in enumerate(_UPPER):
            tris[1::2, k] = (BJ + dj) * stride + BI + di
        return tris

    @cached_property
    def fine_to_coarse_triangle(self) -> np.ndarray:
        """Coarse triangle containing every fine triangle."""
        t = np.arange(self.n_fine_triangles)
        cell = t // 2
        ci, cj = cell % self.Nx, cell // self.Nx
        r = self.refine
        block = (cj // r) * self.nx + ci // r
        li, lj = ci % r, cj % r
        lower = t % 2 == 0
        in_lower = (li > lj) | ((li == lj) & lower)
        return 2 * block + np.where(in_lower, 0, 1)

    @cached_property
    def coarse_triangle_fine(self) -> list[np.ndarray]:
        order = np.argsort(self.fine_to_coarse_triangle, kind="stable")
        counts = np.bincount(self.fine_to_coarse_triangle, minlength=self.n_coarse_triangles)
        return np.split(order, np.cumsum(counts)[:-1])

    def block_triangles(self, b: int) -> np.ndarray:
        """Fine triangles of coarse block ``b``."""
        BI, BJ = b % self.nx, b // self.nx
        r = self.refine
        ci, cj = np.meshgrid(np.arange(BI * r, BI * r + r), np.arange(BJ * r, BJ * r + r))
        cells = (cj * self.Nx + ci).ravel()
        return self.cell_triangles(cells)

    def block_cells(self, b: int) -> np.ndarray:
        BI, BJ = b % self.nx, b // self.nx
        r = self.refine
        ci, cj = np.meshgrid(np.arange(BI * r, BI * r + r), np.arange(BJ * r, BJ * r + r))
        return (cj * self.Nx + ci).ravel()

    @cached_property
    def node_coarse_triangles(self) -> list[np.ndarray]:
        """Coarse triangles sharing each coarse node."""
        out: list[list[int]] = [[] for _ in range(self.n_coarse_nodes)]
        for t, verts in enumerate(self.coarse_triangles):
            for v in verts:
                out[v].append(t)
        return [np.array(sorted(x), dtype=np.int64) for x in out]

    def neighborhood(self, i: int) -> np.ndarray:
        """Fine triangles of the coarse neighborhood of coarse node ``i``."""
        key = ("omega", i)
        if key not in self._cache:
            parts = [self.coarse_triangle_fine[t] for t in self.node_coarse_triangles[i]]
            self._cache[key] = np.sort(np.concatenate(parts))
        return self._cache[key]

    def neighborhood_blocks(self, i: int) -> np.ndarray:
        return np.unique(self.node_coarse_triangles[i] // 2)

    def neighborhood_oversampled(self, i: int, layers: int) -> np.ndarray:
        key = ("omega+", i, layers)
        if key not in self._cache:
            self._cache[key] = oversample(self, self.neighborhood(i), layers)
        return self._cache[key]

    @cached_property
    def coarse_adjacency(self) -> list[set[int]]:
        """Coarse nodes sharing a coarse triangle (overlapping neighborhoods)."""
        adj: list[set[int]] = [set() for _ in range(self.n_coarse_nodes)]
        for verts in self.coarse_triangles:
            for a in verts:
                for b in verts:
                    if a != b:
                        adj[a].add(int(b))
        return adj

    # ----------------------------------------------------------- coarse edges
    @cached_property
    def coarse_edges(self) -> np.ndarray:
        """``(N_e, 2)`` coarse node pairs of the square block grid.

        Horizontal edges first (row-major), then vertical edges.
        """
        stride = self.nx + 1
        I, J = np.meshgrid(np.arange(self.nx), np.arange(self.ny + 1))
        horiz = np.column_stack([(J * stride + I).ravel(), (J * stride + I + 1).ravel()])
        I, J = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny))
        vert = np.column_stack([(J * stride + I).ravel(), ((J + 1) * stride + I).ravel()])
        return np.vstack([horiz, vert])

    def edge_is_horizontal(self, e: int) -> bool:
        return e < self.nx * (self.ny + 1)

    def edge_blocks(self, e: int) -> tuple[int, ...]:
        """Blocks adjacent to coarse edge ``e``, ordered minus side first.

        The minus side lies below a horizontal edge or left of a vertical one.
        """
        a, _ = self.coarse_edges[e]
        I, J = a % (self.nx + 1), a // (self.nx + 1)
        if self.edge_is_horizontal(e):
            sides = [(I, J - 1), (I, J)]
        else:
            sides = [(I - 1, J), (I, J)]
        return tuple(
            bj * self.nx + bi for bi, bj in sides if 0 <= bi < self.nx and 0 <= bj < self.ny
        )

    def edge_is_boundary(self, e: int) -> bool:
        return len(self.edge_blocks(e)) == 1

    # ---------------------------------------------------------------- hats
    def coarse_hat_values(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nodal P1 hat functions evaluated at arbitrary points.

        Points outside the unit square are clipped onto it.  Returns coarse
        vertex indices and values, each ``(n_points, 3)``.
        """
        p = np.clip(np.asarray(points, dtype=float), 0.0, 1.0)
        sx, sy = p[:, 0] * self.nx, p[:, 1] * self.ny
        BI = np.minimum(np.floor(sx).astype(np.int64), self.nx - 1)
        BJ = np.minimum(np.floor(sy).astype(np.int64), self.ny - 1)
        s, t = sx - BI, sy - BJ
        lower = s >= t
        b = BJ * self.nx + BI
        verts = self.coarse_triangles[2 * b + np.where(lower, 0, 1)]
        vals = np.where(
            lower[:, None],
            np.column_stack([1 - s, s - t, t]),
            np.column_stack([1 - t, s, t - s]),
        )
        return verts, vals

    @cached_property
    def hat_matrix(self):
        """Sparse ``(n_fine_nodes, n_coarse_nodes)`` matrix of the coarse hats."""
        from scipy import sparse

        verts, vals = self.coarse_hat_values(self.fine_coords)
        rows = np.repeat(np.arange(self.n_fine_nodes), 3)
        m = sparse.coo_matrix(
            (vals.ravel(), (rows, verts.ravel())),
            shape=(self.n_fine_nodes, self.n_coarse_nodes),
        ).tocsr()
        m.eliminate_zeros()
        return m


def build_grid(nx: int, ny: int, refine: int) -> GridHierarchy:
    for name, v in (("nx", nx), ("ny", ny), ("refine", refine)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    if nx * refine * ny * refine > _MAX_FINE_CELLS:
        raise ValueError(
            f"fine grid {nx * refine}x{ny * refine} exceeds {_MAX_FINE_CELLS} cells"
        )
    return GridHierarchy(int(nx), int(ny), int(refine))


def oversample(grid: GridHierarchy, region: np.ndarray, layers: int) -> np.ndarray:
    """Grow a set of fine triangles by ``layers`` rings of fine cells.

    Every cell within Chebyshev distance ``layers`` of a cell touched by the
    region is added with both its triangles; growth is clipped at the domain
    boundary.
    """
    region = np.asarray(region, dtype=np.int64)
    if region.size == 0:
        raise ValueError("region must be nonempty")
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if layers == 0:
        return np.sort(region)
    mask = np.zeros(grid.n_fine_cells, dtype=bool)
    mask[region // 2] = True
    mask = mask.reshape(grid.Ny, grid.Nx)
    # a square structuring element is separable into two 1D dilations
    size = 2 * layers + 1
    grown = ndimage.maximum_filter1d(mask, size, axis=0, mode="constant")
    grown = ndimage.maximum_filter1d(grown, size, axis=1, mode="constant")
    cells = np.flatnonzero(grown.ravel())
    return np.union1d(region, grid.cell_triangles(cells))


def region_nodes(grid: GridHierarchy, tris: np.ndarray) -> np.ndarray:
    return np.unique(grid.fine_triangles[tris])


def region_boundary_nodes(grid: GridHierarchy, tris: np.ndarray) -> np.ndarray:
    """Nodes on edges that belong to exactly one triangle of the region."""
    t = grid.fine_triangles[tris]
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges.sort(axis=1)
    key = edges[:, 0] * grid.n_fine_nodes + edges[:, 1]
    uniq, counts = np.unique(key, return_counts=True)
    single = uniq[counts == 1]
    return np.unique(np.concatenate([single // grid.n_fine_nodes, single % grid.n_fine_nodes]))
