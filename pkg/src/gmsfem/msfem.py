"""Classical multiscale finite elements: one basis function per coarse node."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import SolverError
from .fine_solver import FineSystem, LocalProblem, nodal_values, solve_coarse_spd, triangle_coefficients
from .grid import GridHierarchy, oversample, region_nodes

__all__ = [
    "MsBasisSet",
    "ms_basis",
    "ms_basis_oversampled",
    "msfem_solve",
    "MsfemSolution",
    "coarse_matrix",
]


@dataclass
class MsBasisSet:
    """Multiscale partition-of-unity functions as columns of a sparse matrix.

    Attributes
    ----------
    R0 : sparse (n_fine_nodes, n_coarse_nodes)
        Column ``i`` holds χ_i on the fine nodes; zero outside ω_i.
    variant : "linear-bc" or "oversampled"
    alpha : per coarse triangle, the affine map ``(a, B)`` combining the
        oversampled harmonic coordinates (oversampled variant only)
    """

    grid: GridHierarchy
    R0: sparse.csr_matrix
    variant: str = "linear-bc"
    layers: int = 0
    alpha: list = field(default_factory=list)

    def column(self, i: int) -> np.ndarray:
        return self.R0[:, i].toarray().ravel()

    def dense(self) -> np.ndarray:
        return self.R0.toarray()


def _triangle_vertices_xy(grid: GridHierarchy, t: int) -> np.ndarray:
    return grid.coarse_coords[grid.coarse_triangles[t]]


def _barycentric(verts_xy: np.ndarray, pts: np.ndarray) -> np.ndarray:
    T = np.column_stack([verts_xy[1] - verts_xy[0], verts_xy[2] - verts_xy[0]])
    st = np.linalg.solve(T, (pts - verts_xy[0]).T).T
    return np.column_stack([1 - st[:, 0] - st[:, 1], st[:, 0], st[:, 1]])


def _assemble_columns(grid, entries) -> sparse.csr_matrix:
    """Sparse matrix from (nodes, coarse vertices, values) blocks; first write wins."""
    rows = np.concatenate([np.repeat(n, v.size) for n, v, _ in entries])
    cols = np.concatenate([np.tile(v, n.size) for n, v, _ in entries])
    vals = np.concatenate([x.ravel() for _, _, x in entries])
    key = rows * grid.n_coarse_nodes + cols
    _, first = np.unique(key, return_index=True)
    m = sparse.coo_matrix(
        (vals[first], (rows[first], cols[first])), shape=(grid.n_fine_nodes, grid.n_coarse_nodes)
    ).tocsr()
    m.eliminate_zeros()
    return m


def _harmonic_from_traces(grid, tk, points, mapper):
    """κ-harmonic extension, per coarse triangle, of barycentric traces.

    The trace of χ_v on ∂K is the barycentric coordinate of vertex v
    evaluated at ``points[node]`` (the node itself for linear traces).
    """

    def one(t):
        prob = LocalProblem(grid, tk, grid.coarse_triangle_fine[t], label=f"coarse triangle {t}")
        verts = grid.coarse_triangles[t]
        lam = _barycentric(_triangle_vertices_xy(grid, t), points[prob.boundary_nodes])
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        return prob.nodes, verts, prob.solve(lam)

    return _assemble_columns(grid, list(mapper(one, range(grid.n_coarse_triangles))))


def ms_basis(grid: GridHierarchy, kappa, mapper=map) -> MsBasisSet:
    """κ-harmonic extension of the hat traces on every coarse triangle."""
    tk = triangle_coefficients(grid, kappa)
    return MsBasisSet(grid, _harmonic_from_traces(grid, tk, grid.fine_coords, mapper))


def ms_basis_oversampled(grid: GridHierarchy, kappa, layers: int, mapper=map) -> MsBasisSet:
    """Oversampled basis made conforming through oscillatory edge traces.

    On every coarse triangle K the harmonic coordinates ψ = (ψ₁, ψ₂) are
    solved on K⁺ with boundary data ``x``.  The affine combination
    ``ψ̂ = a + B ψ`` is fixed by requiring ``ψ̂(x_v) = x_v`` at the three
    vertices of K (the nodal conditions φ_i(x_j) = δ_ij), so the
    combinations ``λ_v(ψ̂)`` are the oversampled nodal functions of K.
    On each interior coarse edge the maps of the neighbouring triangles are
    averaged and projected onto the edge; the resulting traces vanish at
    the far vertex, sum to one and agree from both sides.  Each χ_i is then
    the κ-harmonic extension of these traces into the coarse triangles, so
    it is conforming, supported in ω_i, and a partition of unity.  Traces
    on ∂Ω stay linear so nodal Dirichlet data are imposed exactly.
    """
    if layers < 1:
        raise ValueError("oversampled basis needs layers >= 1")
    tk = triangle_coefficients(grid, kappa)

    def one(t):
        K = grid.coarse_triangle_fine[t]
        prob = LocalProblem(grid, tk, oversample(grid, K, layers), label=f"coarse triangle {t}")
        psi = prob.solve(grid.fine_coords[prob.boundary_nodes])
        nodes = region_nodes(grid, K)
        psi_K = psi[np.searchsorted(prob.nodes, nodes)]
        verts = grid.coarse_triangles[t]
        vxy = grid.coarse_coords[verts]
        vpsi = psi[np.searchsorted(prob.nodes, grid.coarse_to_fine_node[verts])]
        # solve [1, ψ(x_v)] @ [a; Bᵀ] = x_v
        P = np.column_stack([np.ones(3), vpsi])
        cond = np.linalg.cond(P)
        if not np.isfinite(cond) or cond > 1e12:
            raise SolverError(f"degenerate combination system on coarse triangle {t}")
        coef = np.linalg.solve(P, vxy)
        a, B = coef[0], coef[1:].T
        return nodes, psi_K @ B.T + a, (a, B)

    results = list(mapper(one, range(grid.n_coarse_triangles)))
    n = grid.n_fine_nodes
    mapped_sum = np.zeros((n, 2))
    count = np.zeros(n)
    for nodes, m, _ in results:
        mapped_sum[nodes] += m
        count[nodes] += 1
    mapped = grid.fine_coords.copy()
    has = count > 0
    mapped[has] = mapped_sum[has] / count[has, None]

    # project coarse-edge nodes onto their edge; ∂Ω edges keep identity
    xy = grid.fine_coords
    i, j = grid.fine_coords_index
    r = grid.refine
    on_v, on_h = i % r == 0, j % r == 0
    on_diag = (i % r == j % r) & ~on_v & ~on_h
    vert_line, horiz_line = on_v & ~on_h, on_h & ~on_v
    lo_x, lo_y = (i // r) * grid.Hx, (j // r) * grid.Hy
    mapped[vert_line, 0] = xy[vert_line, 0]
    mapped[vert_line, 1] = np.clip(mapped[vert_line, 1], lo_y[vert_line], lo_y[vert_line] + grid.Hy)
    mapped[horiz_line, 1] = xy[horiz_line, 1]
    mapped[horiz_line, 0] = np.clip(mapped[horiz_line, 0], lo_x[horiz_line], lo_x[horiz_line] + grid.Hx)
    # block diagonal: orthogonal projection in block-local coordinates
    s_loc = (mapped[on_diag, 0] - lo_x[on_diag]) / grid.Hx
    t_loc = (mapped[on_diag, 1] - lo_y[on_diag]) / grid.Hy
    d = np.clip(0.5 * (s_loc + t_loc), 0.0, 1.0)
    mapped[on_diag, 0] = lo_x[on_diag] + d * grid.Hx
    mapped[on_diag, 1] = lo_y[on_diag] + d * grid.Hy
    mapped[on_v & on_h] = xy[on_v & on_h]
    mapped[grid.boundary_mask] = xy[grid.boundary_mask]

    R = _harmonic_from_traces(grid, tk, mapped, mapper)
    return MsBasisSet(grid, R, "oversampled", layers, [ab for _, _, ab in results])


def coarse_matrix(basis: MsBasisSet, system: FineSystem) -> np.ndarray:
    """``R₀ᵀ A R₀`` as a dense array."""
    R = basis.R0
    return (R.T @ (system.A @ R)).toarray()


@dataclass
class MsfemSolution:
    coarse: np.ndarray
    fine: np.ndarray
    energy_error: float
    l2_error: float
    reference: np.ndarray
    A_H: np.ndarray


def msfem_solve(
    basis: MsBasisSet,
    kappa,
    f=0.0,
    bc=0.0,
    system: FineSystem | None = None,
    reference: np.ndarray | None = None,
) -> MsfemSolution:
    """Coarse Galerkin solve in span{χ_i}; boundary nodes take ``bc(x_j)``."""
    grid = basis.grid
    system = system or FineSystem(grid, kappa)
    A_H = coarse_matrix(basis, system)
    b = basis.R0.T @ system.load(f)
    g = nodal_values(grid, bc)[grid.coarse_to_fine_node]
    bnd = grid.coarse_boundary_nodes
    free = np.setdiff1d(np.arange(grid.n_coarse_nodes), bnd)
    c = np.zeros(grid.n_coarse_nodes)
    c[bnd] = g[bnd]
    rhs = b[free] - A_H[np.ix_(free, bnd)] @ c[bnd]
    c[free], _ = solve_coarse_spd(A_H[np.ix_(free, free)], rhs, labels=free.tolist(), strict=True)
    fine = basis.R0 @ c
    ref = system.solve(f, bc) if reference is None else reference
    ea, el = system.relative_errors(ref, fine)
    return MsfemSolution(c, fine, ea, el, ref, A_H)
