"""Mixed GMsFEM: lowest-order fluxes on the fine rectangles, edge-based velocity bases.

Velocity unknowns are total fluxes through fine edges, positive in the
``+x`` (vertical edges) or ``+y`` (horizontal edges) direction; pressures
are constant per fine cell.  The coarse pressure space is constant per
coarse block, so coarse mass balance holds exactly block by block.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import IncompatibleDataError, SolverError
from .fields import CoefficientField
from .fine_solver import generalized_eig
from .grid import GridHierarchy

__all__ = [
    "MixedGrid",
    "cell_source",
    "MixedSolution",
    "fine_mixed_solve",
    "EdgeSnapshotSpace",
    "edge_snapshots",
    "MixedFragment",
    "mixed_spectral",
    "MixedOfflineSpace",
    "build_mixed_offline",
    "MixedCoarseSolution",
    "mixed_coarse_solve",
    "velocity_norm",
    "write_velocity_csv",
]

_LOCAL = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
COMPAT_TOL = 1e-10


class MixedGrid:
    """Fine-edge numbering, divergence and κ⁻¹-mass operators on the fine rectangles.

    Vertical edge ``(i, j)`` (normal ``+x``, ``0 <= i <= Nx``) has index
    ``j * (Nx + 1) + i``; horizontal edge ``(i, j)`` (normal ``+y``) has
    index ``n_vertical + j * Nx + i``.
    """

    def __init__(self, grid: GridHierarchy):
        self.grid = grid
        self.Nx, self.Ny = grid.Nx, grid.Ny
        self.n_vertical = (self.Nx + 1) * self.Ny
        self.n_edges = self.n_vertical + self.Nx * (self.Ny + 1)
        self.n_cells = self.Nx * self.Ny
        self.cell_area = grid.hx * grid.hy

    def vertical(self, i, j):
        return np.asarray(j) * (self.Nx + 1) + np.asarray(i)

    def horizontal(self, i, j):
        return self.n_vertical + np.asarray(j) * self.Nx + np.asarray(i)

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """``(n_cells, 4)`` edges ordered left, right, bottom, top."""
        cj, ci = np.divmod(np.arange(self.n_cells), self.Nx)
        return np.column_stack(
            [self.vertical(ci, cj), self.vertical(ci + 1, cj), self.horizontal(ci, cj), self.horizontal(ci, cj + 1)]
        )

    @cached_property
    def divergence(self) -> sparse.csr_matrix:
        """``B`` with ``(B F)_c = ∫_c div v`` (outflow minus inflow)."""
        rows = np.repeat(np.arange(self.n_cells), 4)
        vals = np.tile([-1.0, 1.0, -1.0, 1.0], self.n_cells)
        return sparse.csr_matrix(
            (vals, (rows, self.cell_edges.ravel())), shape=(self.n_cells, self.n_edges)
        )

    def mass(self, kappa) -> sparse.csr_matrix:
        """Exact ``∫ κ⁻¹ v·w`` for the lowest-order flux basis."""
        k = _cell_kappa(self, kappa)
        hx, hy = self.grid.hx, self.grid.hy
        ex, ey = self.cell_edges[:, [0, 1]], self.cell_edges[:, [2, 3]]
        blocks = []
        for e, scale in ((ex, hx / hy), (ey, hy / hx)):
            vals = (scale / k)[:, None, None] * _LOCAL[None]
            rows = np.repeat(e, 2, axis=1)
            cols = np.tile(e, (1, 2))
            blocks.append((vals.reshape(-1, 4).ravel(), rows.ravel(), cols.ravel()))
        v = np.concatenate([b[0] for b in blocks])
        r = np.concatenate([b[1] for b in blocks])
        c = np.concatenate([b[2] for b in blocks])
        return sparse.csr_matrix((v, (r, c)), shape=(self.n_edges, self.n_edges))

    @cached_property
    def edge_length(self) -> np.ndarray:
        out = np.full(self.n_edges, self.grid.hx)
        out[: self.n_vertical] = self.grid.hy
        return out

    def edge_kappa_inv(self, kappa) -> np.ndarray:
        """Mean of κ⁻¹ over the one or two cells beside each fine edge."""
        kinv = 1.0 / _cell_kappa(self, kappa)
        ce = self.cell_edges.ravel()
        tot = np.bincount(ce, weights=np.repeat(kinv, 4), minlength=self.n_edges)
        cnt = np.bincount(ce, minlength=self.n_edges)
        return tot / cnt

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        hx, hy = self.grid.hx, self.grid.hy
        j, i = np.divmod(np.arange(self.n_vertical), self.Nx + 1)
        vm = np.column_stack([i * hx, (j + 0.5) * hy])
        j, i = np.divmod(np.arange(self.Nx * (self.Ny + 1)), self.Nx)
        hm = np.column_stack([(i + 0.5) * hx, j * hy])
        return np.vstack([vm, hm])

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Fine edges on ∂Ω."""
        j = np.arange(self.Ny)
        i = np.arange(self.Nx)
        return np.concatenate(
            [self.vertical(0, j), self.vertical(self.Nx, j), self.horizontal(i, 0), self.horizontal(i, self.Ny)]
        )

    @cached_property
    def boundary_sign(self) -> np.ndarray:
        """``+1`` where the edge's positive direction points out of Ω, ``-1`` where it points in."""
        return np.concatenate(
            [-np.ones(self.Ny), np.ones(self.Ny), -np.ones(self.Nx), np.ones(self.Nx)]
        )

    def coarse_edge_fine(self, e: int) -> np.ndarray:
        """Fine edges making up coarse edge ``e``, ordered along it."""
        g = self.grid
        a, _ = g.coarse_edges[e]
        I, J = a % (g.nx + 1), a // (g.nx + 1)
        r = g.refine
        if g.edge_is_horizontal(e):
            return self.horizontal(np.arange(I * r, (I + 1) * r), J * r)
        return self.vertical(I * r, np.arange(J * r, (J + 1) * r))

    def block_interior_edges(self, b: int) -> np.ndarray:
        """Fine edges strictly inside coarse block ``b``."""
        g = self.grid
        r = g.refine
        I, J = b % g.nx, b // g.nx
        ii, jj = np.meshgrid(np.arange(I * r + 1, (I + 1) * r), np.arange(J * r, (J + 1) * r))
        v = self.vertical(ii.ravel(), jj.ravel())
        ii, jj = np.meshgrid(np.arange(I * r, (I + 1) * r), np.arange(J * r + 1, (J + 1) * r))
        h = self.horizontal(ii.ravel(), jj.ravel())
        return np.sort(np.concatenate([v, h]))

    @cached_property
    def cell_block(self) -> np.ndarray:
        g = self.grid
        cj, ci = np.divmod(np.arange(self.n_cells), self.Nx)
        return (cj // g.refine) * g.nx + ci // g.refine

    @cached_property
    def block_indicator(self) -> sparse.csr_matrix:
        """``P`` (fine cells × coarse blocks)."""
        return sparse.csr_matrix(
            (np.ones(self.n_cells), (np.arange(self.n_cells), self.cell_block)),
            shape=(self.n_cells, self.grid.n_blocks),
        )


def _cell_kappa(mg: MixedGrid, kappa) -> np.ndarray:
    if isinstance(kappa, CoefficientField):
        kappa.check_grid(mg.grid)
        return kappa.values
    k = np.asarray(kappa, dtype=float)
    if k.ndim == 0:
        return np.full(mg.n_cells, float(k))
    if k.size != mg.n_cells:
        raise ValueError("mixed solver needs one coefficient value per fine cell")
    return k.ravel()


def cell_source(mg: MixedGrid, f) -> np.ndarray:
    """Cell integrals ``∫_c f``; ``f`` is a scalar, a callable at cell centers, or per-cell densities."""
    if callable(f):
        cj, ci = np.divmod(np.arange(mg.n_cells), mg.Nx)
        x, y = (ci + 0.5) * mg.grid.hx, (cj + 0.5) * mg.grid.hy
        return np.asarray(f(x, y), dtype=float) * mg.cell_area
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        return np.full(mg.n_cells, float(f) * mg.cell_area)
    if f.size != mg.n_cells:
        raise ValueError("mixed source must have one value per fine cell")
    return f.ravel() * mg.cell_area


def _boundary_values(mg: MixedGrid, g) -> np.ndarray:
    """Values of ``g`` (scalar or callable) at the midpoints of the ∂Ω edges."""
    if callable(g):
        xy = mg.edge_midpoints[mg.boundary_edges]
        return np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(xy.shape[0])
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        return np.full(mg.boundary_edges.size, float(g))
    if g.size != mg.boundary_edges.size:
        raise ValueError("boundary data must have one value per boundary edge")
    return g.ravel()


@dataclass
class MixedSolution:
    """Fine mixed solution: fluxes per fine edge and pressures per fine cell."""

    flux: np.ndarray
    pressure: np.ndarray
    bc_kind: str


def _check_compat(fc: np.ndarray, gn: np.ndarray) -> None:
    total, outflow = fc.sum(), gn.sum()
    scale = max(np.abs(fc).sum() + np.abs(gn).sum(), 1e-300)
    if abs(total - outflow) > COMPAT_TOL * scale:
        raise IncompatibleDataError(
            f"source integral {total:.6g} differs from boundary outflow {outflow:.6g}"
        )


def _saddle(Mv, Bv, rhs_v, rhs_p, mean_zero: np.ndarray | None):
    """Solve ``[M -Bᵀ; -B 0]`` (plus a mean-pressure multiplier) for ``(F, p)``."""
    nv, npr = Mv.shape[0], Bv.shape[0]
    blocks = [[Mv, -Bv.T], [-Bv, None]]
    rhs = [rhs_v, -rhs_p]
    if mean_zero is not None:
        w = sparse.csr_matrix(mean_zero[None, :])
        blocks = [[Mv, -Bv.T, None], [-Bv, None, w.T], [None, w, None]]
        rhs.append(np.zeros(1))
    K = sparse.bmat(blocks, format="csc")
    b = np.concatenate(rhs)
    lu = spla.splu(K)
    x = lu.solve(b)
    res = np.linalg.norm(K @ x - b)
    if not np.isfinite(res) or res > 1e-8 * max(np.linalg.norm(b), 1.0):
        raise SolverError(f"mixed saddle-point solve failed (residual {res:.3e})")
    return x[:nv], x[nv : nv + npr]


def fine_mixed_solve(grid: GridHierarchy, kappa, f=0.0, pressure_bc=None, flux_bc=None) -> MixedSolution:
    """Reference solve of ``κ⁻¹ v + ∇u = 0``, ``div v = f``.

    Exactly one of ``pressure_bc`` (``u`` on ∂Ω, natural) and ``flux_bc``
    (outward ``v·n`` on ∂Ω, essential; pressure fixed to zero mean) is used;
    with neither, ``u = 0`` on ∂Ω.
    """
    if pressure_bc is not None and flux_bc is not None:
        raise ValueError("give either a pressure or a flux boundary condition")
    mg = MixedGrid(grid)
    M = mg.mass(kappa)
    B = mg.divergence
    fc = cell_source(mg, f)
    if flux_bc is None:
        uD = _boundary_values(mg, 0.0 if pressure_bc is None else pressure_bc)
        rv = np.zeros(mg.n_edges)
        rv[mg.boundary_edges] = -mg.boundary_sign * uD
        F, p = _saddle(M, B, rv, fc, None)
        return MixedSolution(F, p, "pressure")
    gn = _boundary_values(mg, flux_bc) * mg.edge_length[mg.boundary_edges]
    _check_compat(fc, gn)
    F = np.zeros(mg.n_edges)
    F[mg.boundary_edges] = mg.boundary_sign * gn
    free = np.setdiff1d(np.arange(mg.n_edges), mg.boundary_edges)
    Mf = M[free][:, free]
    Bf = B[:, free]
    rv = -(M[free] @ F)
    rp = fc - B @ F
    Ff, p = _saddle(Mf, Bf, rv, rp, np.full(mg.n_cells, mg.cell_area))
    F[free] = Ff
    return MixedSolution(F, p, "flux")


def velocity_norm(mg: MixedGrid, M: sparse.spmatrix, F: np.ndarray) -> float:
    return float(np.sqrt(max(F @ (M @ F), 0.0)))


# ------------------------------------------------------------------ snapshots
class _BlockNeumann:
    """Factorized Neumann mixed problem on one coarse block (boundary fluxes fixed)."""

    def __init__(self, mg: MixedGrid, M: sparse.csr_matrix, b: int):
        self.cells = mg.grid.block_cells(b)
        self.inner = mg.block_interior_edges(b)
        self.edges = np.unique(mg.cell_edges[self.cells].ravel())
        B = mg.divergence[self.cells]
        self.B_in = B[:, self.inner]
        self.B_all = B[:, self.edges]
        self.M_in = M[self.inner][:, self.inner]
        self.M_ie = M[self.inner][:, self.edges]
        n, m = self.inner.size, self.cells.size
        w = sparse.csr_matrix(np.ones((1, m)))
        K = sparse.bmat(
            [[self.M_in, -self.B_in.T, None], [-self.B_in, None, w.T], [None, w, None]], format="csc"
        )
        self.lu = spla.splu(K)
        self.n, self.m = n, m

    def solve(self, F_edges: np.ndarray) -> np.ndarray:
        """Interior fluxes for prescribed fluxes on the block edges (columns) and
        the compatible constant divergence."""
        net = self.B_all @ F_edges  # only the prescribed block-boundary fluxes contribute
        alpha = net.sum(axis=0, keepdims=True) / self.m
        rv = -(self.M_ie @ F_edges)
        rp = alpha - net
        rhs = np.vstack([rv, -rp, np.zeros((1, F_edges.shape[1]))])
        x = self.lu.solve(rhs)
        return x[: self.n]


@dataclass
class EdgeSnapshotSpace:
    """Snapshots of coarse edge ``E``: one flux field per fine edge of ``E``.

    ``columns`` are global fine-edge fluxes (``n_edges × J``) restricted to
    ``support`` rows; each has unit normal velocity on its fine edge of ``E``.
    """

    edge: int
    fine_edges: np.ndarray
    blocks: tuple
    support: np.ndarray
    columns: np.ndarray

    @property
    def count(self) -> int:
        return self.columns.shape[1]


def edge_snapshots(mg: MixedGrid, M: sparse.csr_matrix, e: int, solvers: dict | None = None) -> EdgeSnapshotSpace:
    """Local Neumann solves on ω_E with ``ψ·n_E = δ_j`` on the fine edges of ``E``."""
    solvers = {} if solvers is None else solvers
    fine = mg.coarse_edge_fine(e)
    blocks = mg.grid.edge_blocks(e)
    J = fine.size
    supp = [fine]
    parts = []
    for b in blocks:
        if b not in solvers:
            solvers[b] = _BlockNeumann(mg, M, b)
        s = solvers[b]
        Fe = np.zeros((s.edges.size, J))
        Fe[np.searchsorted(s.edges, fine), np.arange(J)] = mg.edge_length[fine]
        try:
            parts.append((s.inner, s.solve(Fe)))
        except RuntimeError as exc:
            raise SolverError(f"edge snapshot solve failed on coarse edge {e}, block {b}: {exc}") from exc
        supp.append(s.inner)
    support = np.unique(np.concatenate(supp))
    cols = np.zeros((support.size, J))
    cols[np.searchsorted(support, fine), np.arange(J)] = mg.edge_length[fine]
    for inner, vals in parts:
        cols[np.searchsorted(support, inner)] = vals
    return EdgeSnapshotSpace(e, fine, tuple(blocks), support, cols)


@dataclass
class MixedFragment:
    edge: int
    support: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray

    @property
    def available(self) -> int:
        return self.modes.shape[1]


def mixed_spectral(mg: MixedGrid, kappa, M: sparse.csr_matrix, snap: EdgeSnapshotSpace) -> MixedFragment:
    """Edge spectral problem ``a(v,w) = λ s(v,w)``, eigenpairs ascending.

    ``a(v,w) = ∫_E κ⁻¹ (v·n)(w·n)`` with κ⁻¹ averaged over the two cells
    beside each fine edge, and ``s(v,w) = ∫_ω κ⁻¹ v·w + div v div w``.
    The κ⁻¹ weight on the trace puts fluxes carried by high-κ paths on the
    same footing as fluxes through the background; unweighted, those
    low-energy fluxes sort last and the error stalls above 100%.
    """
    P = snap.columns
    sup = snap.support
    pos = np.searchsorted(sup, snap.fine_edges)
    lens = mg.edge_length[snap.fine_edges]
    trace = P[pos] / lens[:, None]  # normal velocity on each fine edge of E
    wt = lens * mg.edge_kappa_inv(kappa)[snap.fine_edges]
    A = trace.T @ (wt[:, None] * trace)
    cells = np.concatenate([mg.grid.block_cells(b) for b in snap.blocks])
    dv = (mg.divergence[cells][:, sup] @ P) / mg.cell_area
    S = P.T @ (M[sup][:, sup] @ P) + mg.cell_area * dv.T @ dv
    eig = generalized_eig(A, S, region=f"coarse edge {snap.edge}")
    return MixedFragment(snap.edge, sup, np.maximum(eig.values, 0.0), P @ eig.vectors)


@dataclass
class MixedOfflineSpace:
    """Selected velocity bases per coarse edge; pressure is constant per coarse block."""

    mg: MixedGrid
    fragments: list
    counts: np.ndarray

    @property
    def dof(self) -> int:
        return int(self.counts.sum())

    def column_edges(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.fragments)), self.counts)

    def matrix(self) -> sparse.csc_matrix:
        rows, cols, vals = [], [], []
        k = 0
        for frag, c in zip(self.fragments, self.counts):
            for j in range(int(c)):
                rows.append(frag.support)
                cols.append(np.full(frag.support.size, k))
                vals.append(frag.modes[:, j])
                k += 1
        return sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.mg.n_edges, k)
        )

    def with_counts(self, counts) -> "MixedOfflineSpace":
        counts = np.broadcast_to(np.asarray(counts, dtype=int), (len(self.fragments),)).copy()
        for frag, c in zip(self.fragments, counts):
            if not 1 <= c <= frag.available:
                raise ValueError(f"coarse edge {frag.edge}: {c} bases requested, {frag.available} available")
        return MixedOfflineSpace(self.mg, self.fragments, counts)


def build_mixed_offline(grid: GridHierarchy, kappa, counts=1, mapper=map) -> MixedOfflineSpace:
    """Snapshots and spectral fragments for every coarse edge."""
    mg = MixedGrid(grid)
    M = mg.mass(kappa)
    solvers = {b: _BlockNeumann(mg, M, b) for b in range(grid.n_blocks)}

    def one(e):
        return mixed_spectral(mg, kappa, M, edge_snapshots(mg, M, e, solvers))

    frags = list(mapper(one, range(grid.n_coarse_edges)))
    return MixedOfflineSpace(mg, frags, np.zeros(len(frags), dtype=int)).with_counts(counts)


@dataclass
class MixedCoarseSolution:
    flux: np.ndarray
    pressure_blocks: np.ndarray
    coefficients: np.ndarray
    velocity_error: float
    pressure_error: float
    block_imbalance: np.ndarray
    reference: MixedSolution | None = field(default=None, repr=False)


def mixed_coarse_solve(
    off: MixedOfflineSpace,
    kappa,
    f=0.0,
    pressure_bc=None,
    flux_bc=None,
    reference: MixedSolution | None = None,
) -> MixedCoarseSolution:
    """Coarse saddle-point solve over the offline velocity space × block constants.

    Errors: velocity in ``‖v‖² = ∫ κ⁻¹|v|²`` and pressure in L², both
    relative to the fine mixed solution.  ``block_imbalance`` holds
    ``∫_K div v_H - ∫_K f`` per coarse block.
    """
    mg = off.mg
    grid = mg.grid
    M = mg.mass(kappa)
    B = mg.divergence
    P = mg.block_indicator
    R = off.matrix()
    fc = cell_source(mg, f)
    AH = (R.T @ (M @ R)).toarray()
    BH = (P.T @ (B @ R)).toarray()
    fH = P.T @ fc
    labels = off.column_edges()
    bedges = np.array([e for e in range(grid.n_coarse_edges) if grid.edge_is_boundary(e)])
    if flux_bc is None:
        uD = _boundary_values(mg, 0.0 if pressure_bc is None else pressure_bc)
        rv_f = np.zeros(mg.n_edges)
        rv_f[mg.boundary_edges] = -mg.boundary_sign * uD
        c, pH = _coarse_saddle(AH, BH, R.T @ rv_f, fH, None, labels)
    else:
        gn = _boundary_values(mg, flux_bc) * mg.edge_length[mg.boundary_edges]
        _check_compat(fc, gn)
        target = np.zeros(mg.n_edges)
        target[mg.boundary_edges] = mg.boundary_sign * gn
        fixed = np.isin(labels, bedges)
        c = np.zeros(R.shape[1])
        Rc = R.tocsc()
        for e in bedges:
            cols = np.flatnonzero(labels == e)
            fe = mg.coarse_edge_fine(e)
            T = Rc[fe][:, cols].toarray()
            c[cols] = _flux_preserving_fit(T, target[fe])
        free = ~fixed
        rv = -(AH[np.ix_(free, fixed)] @ c[fixed])
        rp = fH - BH[:, fixed] @ c[fixed]
        w = np.full(grid.n_blocks, grid.Hx * grid.Hy)
        c[free], pH = _coarse_saddle(AH[np.ix_(free, free)], BH[:, free], rv, rp, w, labels[free])
    F = R @ c
    imbalance = BH @ c - fH
    ref = reference
    if ref is None:
        ref = fine_mixed_solve(grid, kappa, f, pressure_bc, flux_bc)
    den = velocity_norm(mg, M, ref.flux)
    ev = velocity_norm(mg, M, ref.flux - F) / (den if den > 0 else 1.0)
    p_fine = pH[mg.cell_block]
    pr = ref.pressure
    if flux_bc is not None:
        pr = pr - pr.mean()
        p_fine = p_fine - p_fine.mean()
    dp = np.sqrt(mg.cell_area * np.sum((pr - p_fine) ** 2))
    nr = np.sqrt(mg.cell_area * np.sum(pr**2))
    return MixedCoarseSolution(F, pH, c, ev, dp / (nr if nr > 0 else 1.0), imbalance, ref)


def _flux_preserving_fit(T: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Least-squares fit of the trace ``g`` keeping its total flux exactly."""
    ones = np.ones(T.shape[0])
    K = np.block([[T.T @ T, (T.T @ ones)[:, None]], [(ones @ T)[None, :], np.zeros((1, 1))]])
    rhs = np.concatenate([T.T @ g, [g.sum()]])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:-1]


def _coarse_saddle(AH, BH, rv, rp, mean_w, labels):
    n, m = AH.shape[0], BH.shape[0]
    top = np.hstack([AH, -BH.T])
    bot = np.hstack([-BH, np.zeros((m, m))])
    K = np.vstack([top, bot])
    rhs = np.concatenate([rv, -rp])
    if mean_w is not None:
        col = np.concatenate([np.zeros(n), mean_w])
        K = np.block([[K, col[:, None]], [col[None, :], np.zeros((1, 1))]])
        rhs = np.concatenate([rhs, [0.0]])
    try:
        lu = sla.lu_factor(K, check_finite=True)
        x = sla.lu_solve(lu, rhs)
        ok = np.all(np.isfinite(x)) and np.linalg.norm(K @ x - rhs) <= 1e-8 * max(np.linalg.norm(rhs), 1.0)
    except (sla.LinAlgError, ValueError):
        ok = False
    if not ok:
        dead = np.flatnonzero(np.abs(BH).sum(axis=1) == 0)
        raise SolverError(
            f"coarse mixed system singular (inf-sup failure); blocks without divergence control {dead.tolist()}, "
            f"edges {sorted(set(np.asarray(labels).tolist()))[:20]}"
        )
    return x[:n], x[n : n + m]


def write_velocity_csv(path: str | Path, mg: MixedGrid, flux: np.ndarray) -> None:
    """Per-fine-edge normal fluxes: ``edge, orientation, x, y, length, flux, normal_velocity``.

    ``flux`` is the total flux through the edge in the ``+x`` (vertical
    edges) or ``+y`` (horizontal edges) direction.
    """
    flux = np.asarray(flux, dtype=float)
    if flux.shape != (mg.n_edges,):
        raise ValueError(f"expected {mg.n_edges} edge fluxes, got {flux.shape}")
    xy = mg.edge_midpoints
    lens = mg.edge_length
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "orientation", "x", "y", "length", "flux", "normal_velocity"])
        for e in range(mg.n_edges):
            kind = "vertical" if e < mg.n_vertical else "horizontal"
            w.writerow([e, kind, repr(xy[e, 0]), repr(xy[e, 1]), repr(lens[e]), repr(flux[e]), repr(flux[e] / lens[e])])
