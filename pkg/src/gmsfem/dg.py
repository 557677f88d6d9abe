"""GMsDGM: per-block oversampled snapshots, boundary-weighted spectral selection and IPDG coupling.

Every coarse block ``K`` carries its own basis (values on the fine nodes
of ``K``, no partition of unity), so traces are discontinuous across
coarse edges and are coupled by the symmetric interior penalty form.
Jumps follow ``⟦G⟧ = G_R - G_L`` with ``n_E`` pointing out of ``K_R``;
here ``K_R`` is the block below (horizontal edges) or to the left
(vertical edges), so ``n_E`` is ``+x₂`` or ``+x₁``.  On ∂Ω, ``n_E`` is the
outward normal and ``{G} = ⟦G⟧ = G``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SolverError
from .fields import CoefficientField
from .fine_solver import (
    FineSystem,
    LocalProblem,
    assemble_mass,
    assemble_stiffness,
    generalized_eig,
    gradient_operators,
    nodal_values,
    triangle_coefficients,
)
from .gmsfem import pod_dedup
from .grid import GridHierarchy, oversample, region_nodes

__all__ = [
    "DgSnapshotSpace",
    "DgFragment",
    "DgOfflineSpace",
    "DgSolution",
    "dg_snapshots",
    "dg_spectral",
    "pencil_eig",
    "build_dg_offline",
    "default_gamma",
    "assemble_dg",
    "ipdg_solve",
]

log = logging.getLogger(__name__)

POD_TOL = 1e-10
# S eigenvalues below this fraction of the largest count as its null space
NULL_TOL = 1e-12
# systems up to this size get a dense smallest-eigenvalue check
EIG_CHECK_MAX = 3000
_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def _block_nodes(grid: GridHierarchy, b: int) -> np.ndarray:
    return region_nodes(grid, grid.block_triangles(b))


@dataclass
class DgSnapshotSpace:
    """Snapshots of block ``K`` computed on ``K⁺``.

    ``plus`` holds the raw snapshots over ``plus_nodes`` and ``restricted``
    the same columns on ``nodes`` (the fine nodes of ``K``); ``columns`` is
    the POD-deduplicated span of the restrictions.
    """

    block: int
    layers: int
    plus_region: np.ndarray
    plus_nodes: np.ndarray
    nodes: np.ndarray
    plus: np.ndarray
    restricted: np.ndarray
    columns: np.ndarray

    @property
    def raw_count(self) -> int:
        return self.plus.shape[1]

    @property
    def count(self) -> int:
        return self.columns.shape[1]


def dg_snapshots(grid: GridHierarchy, kappa, b: int, layers: int, tol: float = POD_TOL) -> DgSnapshotSpace:
    """κ-harmonic solves on ``K⁺`` with a fine delta on each node of ``∂K⁺``, restricted to ``K`` and deduplicated.

    ``layers = 0`` uses ``K⁺ = K`` (deltas on ``∂K`` directly).
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    region = oversample(grid, grid.block_triangles(b), layers)
    prob = LocalProblem(grid, kappa, region, label=f"K_{b}+")
    U = prob.solve(np.eye(prob.boundary.size))
    nodes = _block_nodes(grid, b)
    R = U[np.searchsorted(prob.nodes, nodes)]
    cols, _ = pod_dedup(R, tol)
    return DgSnapshotSpace(b, layers, region, prob.nodes, nodes, U, R, cols)


def pencil_eig(A: np.ndarray, S: np.ndarray, region=None) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of ``A x = λ S x`` with ``A`` SPD on ``null(S)`` and ``S`` semidefinite.

    Directions in ``null(S)`` have ``λ = ∞`` and come last.  Finite
    eigenvectors are ``A``-orthogonal to ``null(S)``; together with the
    null directions they span the whole space.

    Returns
    -------
    values : ascending, ``inf`` for the null directions
    vectors : columns, finite ones ``S``-normalized
    """
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    S = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    w, Q = np.linalg.eigh(S)
    if w[-1] <= 0:
        raise SolverError(f"boundary form vanishes on every snapshot of region {region}")
    null = w <= NULL_TOL * w[-1]
    if not null.any():
        eig = generalized_eig(A, S, region=region)
        return eig.values, eig.vectors
    X, N = Q[:, ~null], Q[:, null]
    ANN = N.T @ A @ N
    try:
        Z = X - N @ sla.solve(ANN, N.T @ A @ X, assume_a="pos")
    except sla.LinAlgError as exc:
        raise SolverError(f"energy form singular on the null space of the boundary form in region {region}") from exc
    eig = generalized_eig(Z.T @ A @ Z, Z.T @ S @ Z, region=region)
    _, W = np.linalg.eigh(ANN)
    vals = np.concatenate([eig.values, np.full(N.shape[1], np.inf)])
    return vals, np.hstack([Z @ eig.vectors, N @ W])


@dataclass
class DgFragment:
    """Spectral basis of one block: ``modes`` over ``nodes`` ordered by ascending eigenvalue."""

    block: int
    nodes: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray
    raw_count: int = 0

    @property
    def available(self) -> int:
        return self.modes.shape[1]


def _boundary_mass(grid: GridHierarchy, kappa, b: int, nodes: np.ndarray) -> np.ndarray:
    """``∫_{∂K} κ v w`` over the block nodes, κ from the fine cell inside ``K``."""
    kc = _cell_kappa(grid, kappa)
    S = np.zeros((nodes.size, nodes.size))
    for side in _block_sides(grid, b):
        pos = np.searchsorted(nodes, side.nodes)
        for k in range(side.cells.size):
            loc = pos[k : k + 2]
            S[np.ix_(loc, loc)] += kc[side.cells[k]] * side.h * _EDGE_MASS
    return S


def dg_spectral(grid: GridHierarchy, kappa, snap: DgSnapshotSpace) -> DgFragment:
    """``a(v,w) = ∫_{K⁺} κ∇v·∇w`` against ``s(v,w) = ∫_{∂K} κ v w``; restrictions of the eigenvectors to ``K``.

    The pencil is solved over the raw snapshots: combinations with zero
    trace on ``∂K`` vanish on ``K`` (they are κ-harmonic there), get
    ``λ = ∞`` and are dropped, so the kept count equals the rank of the
    restrictions.
    """
    Ap = assemble_stiffness(grid, kappa, snap.plus_region)
    A = snap.plus.T @ (Ap @ snap.plus)
    Sb = _boundary_mass(grid, kappa, snap.block, snap.nodes)
    S = snap.restricted.T @ Sb @ snap.restricted
    vals, vecs = pencil_eig(A, S, region=f"K_{snap.block}")
    finite = np.isfinite(vals)
    modes = snap.restricted @ vecs[:, finite]
    return DgFragment(snap.block, snap.nodes, np.maximum(vals[finite], 0.0), modes, snap.raw_count)


def default_gamma(counts) -> float:
    """Penalty ``4 · max`` local basis count."""
    return 4.0 * float(np.max(counts))


@dataclass
class DgOfflineSpace:
    grid: GridHierarchy
    fragments: list
    counts: np.ndarray
    layers: int = 0

    @property
    def dof(self) -> int:
        return int(self.counts.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    def basis(self, b: int) -> np.ndarray:
        return self.fragments[b].modes[:, : self.counts[b]]

    def with_counts(self, counts) -> "DgOfflineSpace":
        counts = np.broadcast_to(np.asarray(counts, dtype=int), (len(self.fragments),)).copy()
        for frag, c in zip(self.fragments, counts):
            if not 1 <= c <= frag.available:
                raise ValueError(f"block {frag.block}: {c} bases requested, {frag.available} available")
        return DgOfflineSpace(self.grid, self.fragments, counts, self.layers)

    def full(self) -> "DgOfflineSpace":
        return self.with_counts([fr.available for fr in self.fragments])


def build_dg_offline(grid: GridHierarchy, kappa, counts=1, layers: int | None = None, mapper=map) -> DgOfflineSpace:
    """Snapshots and spectral fragments for every coarse block; ``counts="full"`` keeps all."""
    layers = grid.refine // 2 if layers is None else int(layers)

    def one(b):
        return dg_spectral(grid, kappa, dg_snapshots(grid, kappa, b, layers))

    frags = list(mapper(one, range(grid.n_blocks)))
    off = DgOfflineSpace(grid, frags, np.ones(len(frags), dtype=int), layers)
    if isinstance(counts, str):
        if counts != "full":
            raise ValueError(f"unknown count {counts!r}")
        return off.full()
    return off.with_counts(counts)


# ------------------------------------------------------------------ edges
@dataclass
class _Side:
    """One side of a coarse edge seen from a block: fine nodes along it, the
    adjacent fine cells and triangles inside the block."""

    block: int
    nodes: np.ndarray
    cells: np.ndarray
    triangles: np.ndarray
    h: float
    horizontal: bool
    outward_sign: float  # +1 when +x₁/+x₂ points out of the block


def _edge_side(grid: GridHierarchy, e: int, b: int) -> _Side:
    r = grid.refine
    a, _ = grid.coarse_edges[e]
    I, J = a % (grid.nx + 1), a // (grid.nx + 1)
    horizontal = bool(grid.edge_is_horizontal(e))
    stride = grid.Nx + 1
    if horizontal:
        i = np.arange(I * r, (I + 1) * r + 1)
        nodes = J * r * stride + i
        below = (b // grid.nx) < J
        row = J * r - 1 if below else J * r
        cells = row * grid.Nx + i[:-1]
        # the top edge of a cell lies on its upper triangle, the bottom edge on its lower one
        tris = 2 * cells + (1 if below else 0)
        return _Side(b, nodes, cells, tris, grid.hx, True, 1.0 if below else -1.0)
    j = np.arange(J * r, (J + 1) * r + 1)
    nodes = j * stride + I * r
    left = (b % grid.nx) < I
    col = I * r - 1 if left else I * r
    cells = j[:-1] * grid.Nx + col
    # the right edge of a cell lies on its lower triangle, the left edge on its upper one
    tris = 2 * cells + (0 if left else 1)
    return _Side(b, nodes, cells, tris, grid.hy, False, 1.0 if left else -1.0)


def _block_sides(grid: GridHierarchy, b: int) -> list[_Side]:
    out = []
    for e in range(grid.n_coarse_edges):
        if b in grid.edge_blocks(e):
            out.append(_edge_side(grid, e, b))
    return out


def _cell_kappa(grid: GridHierarchy, kappa) -> np.ndarray:
    if isinstance(kappa, CoefficientField):
        kappa.check_grid(grid)
        return kappa.values
    return triangle_coefficients(grid, kappa)[0::2]


@dataclass
class _EdgeOps:
    edge: int
    sides: list
    jump_sign: list
    avg_weight: list
    kappa_bar: float
    h: float
    boundary: bool


class _Blocks:
    """Per-block fine matrices and per-edge trace/flux operators on block nodes."""

    def __init__(self, grid: GridHierarchy, kappa):
        self.grid = grid
        self.tri_kappa = triangle_coefficients(grid, kappa)
        kc = _cell_kappa(grid, kappa)
        self.nodes, self.A, self.M = [], [], []
        self.kmax = np.empty(grid.n_blocks)
        for b in range(grid.n_blocks):
            tris = grid.block_triangles(b)
            self.nodes.append(region_nodes(grid, tris))
            self.A.append(assemble_stiffness(grid, kappa, tris))
            self.M.append(assemble_mass(grid, 1.0, tris))
            self.kmax[b] = kc[grid.block_cells(b)].max()
        Dx, Dy = gradient_operators(grid)
        self.Dx, self.Dy = Dx.tocsr(), Dy.tocsr()
        self.edges = []
        for e in range(grid.n_coarse_edges):
            blocks = grid.edge_blocks(e)
            sides = [_edge_side(grid, e, b) for b in blocks]
            if len(blocks) == 2:
                kb = 0.5 * (self.kmax[blocks[0]] + self.kmax[blocks[1]])
                self.edges.append(_EdgeOps(e, sides, [1.0, -1.0], [0.5, 0.5], kb, sides[0].h, False))
            else:
                self.edges.append(_EdgeOps(e, sides, [1.0], [1.0], self.kmax[blocks[0]], sides[0].h, True))

    def trace(self, side: _Side) -> tuple[np.ndarray, np.ndarray]:
        """Node positions along the edge in the block's numbering, and the
        flux operator ``κ∇u·n_E`` (one row per fine sub-edge) over block nodes."""
        nodes = self.nodes[side.block]
        pos = np.searchsorted(nodes, side.nodes)
        D = self.Dy if side.horizontal else self.Dx
        flux = D[side.triangles][:, nodes].toarray() * self.tri_kappa[side.triangles][:, None]
        return pos, flux


def _edge_matrices(n_sub: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """1D P1 mass along the edge and the map ``(const per sub-edge, nodal q) ↦ ∫ c q``."""
    Me = np.zeros((n_sub + 1, n_sub + 1))
    W = np.zeros((n_sub, n_sub + 1))
    for k in range(n_sub):
        Me[k : k + 2, k : k + 2] += h * _EDGE_MASS
        W[k, k] = W[k, k + 1] = 0.5 * h
    return Me, W


def assemble_dg(off: DgOfflineSpace, kappa, f=0.0, bc=0.0, gamma: float | None = None, blocks: _Blocks | None = None):
    """IPDG matrix and load vector over the offline space.

    Dirichlet data enter weakly through the boundary edge terms, which
    keeps the form consistent for solutions in the space.

    Returns
    -------
    K : (dof, dof) ndarray, not symmetrized
    rhs : (dof,) ndarray
    gamma : float
    blocks : per-block operators, reusable for the same field
    """
    grid = off.grid
    gamma = default_gamma(off.counts) if gamma is None else float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    blocks = blocks or _Blocks(grid, kappa)
    off_idx = off.offsets
    n = off.dof
    K = np.zeros((n, n))
    rhs = np.zeros(n)
    fn = nodal_values(grid, f)
    gn = nodal_values(grid, bc)
    for b in range(grid.n_blocks):
        V = off.basis(b)
        s = slice(off_idx[b], off_idx[b + 1])
        K[s, s] += V.T @ (blocks.A[b] @ V)
        rhs[s] += V.T @ (blocks.M[b] @ fn[blocks.nodes[b]])
    for ed in blocks.edges:
        n_sub = ed.sides[0].cells.size
        Me, W = _edge_matrices(n_sub, ed.h)
        cols, J, Av = [], [], []
        for side, js, aw in zip(ed.sides, ed.jump_sign, ed.avg_weight):
            V = off.basis(side.block)
            pos, flux = blocks.trace(side)
            # on ∂Ω the normal is outward; inside it is +x₁/+x₂ for both sides
            nsign = side.outward_sign if ed.boundary else 1.0
            cols.append(np.arange(off_idx[side.block], off_idx[side.block + 1]))
            J.append(js * V[pos])
            Av.append(aw * nsign * (flux @ V))
        cols = np.concatenate(cols)
        J = np.hstack(J)
        Av = np.hstack(Av)
        pen = gamma / ed.h * ed.kappa_bar
        C = Av.T @ W @ J
        K[np.ix_(cols, cols)] += -(C + C.T) + pen * (J.T @ Me @ J)
        if ed.boundary:
            g = gn[ed.sides[0].nodes]
            rhs[cols] += -(Av.T @ (W @ g)) + pen * (J.T @ (Me @ g))
    return K, rhs, gamma, blocks


@dataclass
class DgSolution:
    coefficients: np.ndarray
    blocks: list
    energy_error: float
    l2_error: float
    jump_seminorm: float
    gamma: float
    coercive: bool
    min_eigenvalue: float | None
    dof: int
    asymmetry: float = 0.0
    reference: np.ndarray | None = field(default=None, repr=False)


def ipdg_solve(
    off: DgOfflineSpace,
    kappa,
    f=0.0,
    bc=0.0,
    gamma: float | None = None,
    system: FineSystem | None = None,
    reference: np.ndarray | None = None,
    strict: bool = False,
) -> DgSolution:
    """Solve ``a_DG(u_H, q) = (f, q)`` and compare with the conforming fine solution.

    The energy error is the broken energy plus the penalty-weighted jump
    seminorm of ``u_h - u_H``, relative to ``‖u_h‖_a``.  A system that fails
    Cholesky (γ below the coercivity threshold) is flagged with a warning,
    or raises ``SolverError`` when ``strict``.
    """
    grid = off.grid
    K, rhs, gamma, blocks = assemble_dg(off, kappa, f, bc, gamma)
    asym = float(np.abs(K - K.T).max() / max(np.abs(K).max(), 1e-300))
    min_eig = float(np.linalg.eigvalsh(K)[0]) if K.shape[0] <= EIG_CHECK_MAX else None
    try:
        L = sla.cho_factor(K)
        coercive = True
        c = sla.cho_solve(L, rhs)
    except sla.LinAlgError:
        coercive = False
        msg = f"IPDG matrix is not positive definite at gamma={gamma:g}; increase the penalty"
        if strict:
            raise SolverError(msg)
        warnings.warn(msg, RuntimeWarning)
        c = np.linalg.lstsq(K, rhs, rcond=None)[0]
    system = system or FineSystem(grid, kappa)
    ref = system.solve(f, bc) if reference is None else reference
    off_idx = off.offsets
    vals, e2, l2, ref_l2 = [], 0.0, 0.0, 0.0
    diffs = []
    for b in range(grid.n_blocks):
        u = off.basis(b) @ c[off_idx[b] : off_idx[b + 1]]
        vals.append(u)
        d = ref[blocks.nodes[b]] - u
        diffs.append(d)
        e2 += d @ (blocks.A[b] @ d)
        l2 += d @ (blocks.M[b] @ d)
        ref_l2 += ref[blocks.nodes[b]] @ (blocks.M[b] @ ref[blocks.nodes[b]])
    jump2 = 0.0
    for ed in blocks.edges:
        Me, _ = _edge_matrices(ed.sides[0].cells.size, ed.h)
        jd = 0.0
        for side, js in zip(ed.sides, ed.jump_sign):
            pos = np.searchsorted(blocks.nodes[side.block], side.nodes)
            jd = jd + js * diffs[side.block][pos]
        jump2 += ed.kappa_bar / ed.h * (jd @ Me @ jd)
    den = system.energy(ref)
    den = den if den > 0 else 1.0
    energy = np.sqrt(max(e2 + gamma * jump2, 0.0)) / den
    l2_den = np.sqrt(ref_l2) if ref_l2 > 0 else 1.0
    log.info("ipdg: dof=%d gamma=%g energy=%.4g coercive=%s", off.dof, gamma, energy, coercive)
    return DgSolution(c, vals, energy, np.sqrt(max(l2, 0.0)) / l2_den, float(np.sqrt(jump2)), gamma,
                      coercive, min_eig, off.dof, asym, ref)
