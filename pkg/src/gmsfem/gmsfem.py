"""Generalized multiscale finite elements with continuous Galerkin coupling.

Pipeline per coarse neighborhood ω_i: snapshot space, spectral reduction
with the weight κ̃, multiplication by a partition of unity, then one global
Galerkin solve in the span of all selected columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .errors import EigenSolverError
from .fields import STREAM_SNAPSHOT, make_rng
from .fine_solver import (
    FineSystem,
    LocalProblem,
    assemble_mass,
    assemble_stiffness,
    generalized_eig,
    gradient_operators,
    nodal_values,
    solve_coarse_spd,
    triangle_coefficients,
)
from .grid import GridHierarchy, region_nodes
from .msfem import MsBasisSet, ms_basis

__all__ = [
    "SNAPSHOT_KINDS",
    "SnapshotSpace",
    "Fragment",
    "OfflineSpace",
    "GmsfemSolution",
    "default_layers",
    "sampling_region",
    "build_snapshots",
    "pod_dedup",
    "compute_weight",
    "spectral_offline",
    "build_fragments",
    "assemble_offline",
    "gmsfem_solve",
    "dirichlet_lift",
]

SNAPSHOT_KINDS = ("all-fine", "harmonic", "harmonic-oversampled", "randomized")
POD_TOL = 1e-10
RESTRICT_TOL = 1e-10


def default_layers(grid: GridHierarchy) -> int:
    return grid.refine // 2


def sampling_region(grid: GridHierarchy, i: int, kind: str, layers: int) -> np.ndarray:
    """Fine triangles on which snapshots of ω_i are computed.

    Oversampled kinds use ω_i⁺ except for neighborhoods touching ∂Ω, which
    keep ω_i.
    """
    if kind in ("harmonic-oversampled", "randomized") and layers > 0:
        if i not in set(grid.coarse_boundary_nodes.tolist()):
            return grid.neighborhood_oversampled(i, layers)
    return grid.neighborhood(i)


@dataclass
class SnapshotSpace:
    """Snapshot columns of one neighborhood.

    ``columns`` are nodal values over ``nodes`` (the sampling region); the
    target neighborhood ω_i is ``target``.
    """

    index: int
    kind: str
    region: np.ndarray
    nodes: np.ndarray
    columns: np.ndarray
    target: np.ndarray
    seed: int | None = None
    raw_count: int = 0
    truncated: bool = False

    @property
    def count(self) -> int:
        return self.columns.shape[1]


def pod_dedup(columns: np.ndarray, tol: float = POD_TOL) -> tuple[np.ndarray, bool]:
    """Drop numerically dependent directions (singular values below ``tol``·σ_max).

    Columns are returned unchanged when they are already independent;
    otherwise they are replaced by ``U_r Σ_r`` spanning the same space.
    """
    if columns.shape[1] == 0:
        return columns, False
    U, s, _ = np.linalg.svd(columns, full_matrices=False)
    if s[0] == 0:
        return columns[:, :0], True
    r = int(np.sum(s > tol * s[0]))
    if r == columns.shape[1]:
        return columns, False
    return U[:, :r] * s[:r], True


def build_snapshots(
    grid: GridHierarchy,
    kappa,
    i: int,
    kind: str,
    layers: int = 0,
    count: int | None = None,
    seed: int | None = None,
    dedup: bool = True,
) -> SnapshotSpace:
    """Snapshot space of coarse neighborhood ``i``.

    Parameters
    ----------
    kind : one of ``SNAPSHOT_KINDS``
    layers : oversampling width in fine cells (oversampled kinds)
    count : number of random boundary samples (randomized)
    seed : root seed (randomized); sample ``l`` of ω_i draws from the
        stream ``(seed, snapshot, i, l)``
    """
    if kind not in SNAPSHOT_KINDS:
        raise ValueError(f"unknown snapshot kind {kind!r}")
    if kind == "harmonic-oversampled" and layers < 1:
        raise ValueError("oversampled snapshots need layers >= 1")
    if kind == "randomized" and (count is None or count < 1 or seed is None):
        raise ValueError("randomized snapshots need count >= 1 and a seed")
    target = grid.neighborhood(i)
    region = sampling_region(grid, i, kind, layers)
    tk = triangle_coefficients(grid, kappa)
    if kind == "all-fine":
        prob = LocalProblem(grid, tk, region, label=f"omega_{i}")
        nodes = prob.nodes
        cols = np.zeros((nodes.size, prob.interior.size))
        cols[prob.interior, np.arange(prob.interior.size)] = 1.0
        return SnapshotSpace(i, kind, region, nodes, cols, target, None, cols.shape[1])
    prob = LocalProblem(grid, tk, region, label=f"omega_{i}")
    nb = prob.boundary.size
    if kind == "randomized":
        g = np.empty((nb, count))
        for l in range(count):
            g[:, l] = make_rng(seed, STREAM_SNAPSHOT, i, l).standard_normal(nb)
    else:
        g = np.eye(nb)
    cols = prob.solve(g)
    raw = cols.shape[1]
    truncated = False
    if dedup:
        cols, truncated = pod_dedup(cols)
    return SnapshotSpace(i, kind, region, prob.nodes, cols, target, seed, raw, truncated)


def compute_weight(grid: GridHierarchy, kappa, basis: MsBasisSet | None = None) -> np.ndarray:
    """Per-triangle weight ``κ̃ = κ Σ_i |∇χ_i|²``."""
    tk = triangle_coefficients(grid, kappa)
    R = basis.R0 if basis is not None else grid.hat_matrix
    Dx, Dy = gradient_operators(grid)
    gx, gy = Dx @ R, Dy @ R
    s = np.asarray(gx.multiply(gx).sum(axis=1)).ravel() + np.asarray(gy.multiply(gy).sum(axis=1)).ravel()
    return tk * s


@dataclass
class Fragment:
    """Spectral decomposition of one neighborhood's snapshot space.

    ``modes`` are the eigenvectors in fine coordinates restricted to the
    nodes of ω_i, ordered by ascending ``eigenvalues``.
    """

    index: int
    nodes: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray
    kind: str = "harmonic"
    seed: int | None = None
    snapshot_count: int = 0
    truncated: bool = False

    @property
    def available(self) -> int:
        return self.modes.shape[1]

    def excluded_eigenvalue(self, l: int) -> float:
        return float(self.eigenvalues[l]) if l < self.eigenvalues.size else np.inf


def spectral_offline(
    grid: GridHierarchy,
    snap: SnapshotSpace,
    kappa,
    weight: np.ndarray,
    l: int | None = None,
    over: str = "sampling",
) -> Fragment:
    """Solve ``A Ψ = λ S Ψ`` in snapshot coordinates on the sampling region.

    ``A`` is the snapshot-restricted stiffness and ``S`` the κ̃-weighted
    mass, both integrated over the sampling region.  All eigenpairs are
    kept (``l`` only validates the requested count) so later enrichment can
    take the next ones.
    """
    cols = snap.columns
    if l is not None and l > cols.shape[1]:
        raise ValueError(f"requested {l} modes but omega_{snap.index} has {cols.shape[1]} snapshots")
    if over not in ("sampling", "target"):
        raise ValueError(f"unknown integration region {over!r}")
    target_nodes = region_nodes(grid, snap.target)
    pos = np.searchsorted(snap.nodes, target_nodes)
    if over == "sampling":
        region, loc = snap.region, cols
    else:
        # restricted snapshots are nearly dependent; keep the well-resolved directions
        region, loc = snap.target, cols[pos]
        _, sv, Vt = np.linalg.svd(loc, full_matrices=False)
        T = Vt[sv > RESTRICT_TOL * sv[0]].T
        cols, loc = cols @ T, loc @ T
    A_loc = assemble_stiffness(grid, kappa, region)
    S_loc = assemble_mass(grid, weight, region)
    A = loc.T @ (A_loc @ loc)
    S = loc.T @ (S_loc @ loc)
    truncated = snap.truncated
    try:
        eig = generalized_eig(A, S, region=f"omega_{snap.index}")
    except EigenSolverError:
        # weight Gram singular: truncate the snapshot basis in the S inner product
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        keep = w > POD_TOL * w.max()
        cols, loc = cols @ V[:, keep], loc @ V[:, keep]
        A = loc.T @ (A_loc @ loc)
        S = loc.T @ (S_loc @ loc)
        eig = generalized_eig(A, S, region=f"omega_{snap.index}")
        truncated = True
    modes = (cols @ eig.vectors)[pos]
    vals = np.maximum(eig.values, 0.0)
    return Fragment(snap.index, target_nodes, vals, modes, snap.kind, snap.seed, cols.shape[1], truncated)


def build_fragments(
    grid: GridHierarchy,
    kappa,
    kind: str = "harmonic",
    layers: int | None = None,
    count: int | None = None,
    seed: int | None = None,
    weight: np.ndarray | None = None,
    mapper=map,
    over: str | None = None,
) -> list[Fragment]:
    """Snapshots plus spectral decomposition for every coarse neighborhood."""
    layers = default_layers(grid) if layers is None else layers
    if weight is None:
        weight = compute_weight(grid, kappa, ms_basis(grid, kappa, mapper))
    tk = triangle_coefficients(grid, kappa)
    if over is None:
        over = "target" if kind == "randomized" else "sampling"

    def one(i):
        snap = build_snapshots(grid, tk, i, kind, layers, count, seed)
        return spectral_offline(grid, snap, tk, weight, over=over)

    return list(mapper(one, range(grid.n_coarse_nodes)))


@dataclass
class OfflineSpace:
    """Selected multiscale columns, one block per coarse neighborhood.

    ``columns[i]`` holds ``χ_i · φ_j^{ω_i}`` for ``j < counts[i]`` as nodal
    values over ``nodes[i]``.  ``extra`` holds additional global columns
    (online basis functions) as ``(label, nodes, values)`` triples.
    """

    grid: GridHierarchy
    counts: np.ndarray
    nodes: list
    columns: list
    eigenvalues: list
    kind: str = "harmonic"
    seed: int | None = None
    pou: str = "ms"
    fragments: list | None = field(default=None, repr=False)
    pou_values: list | None = field(default=None, repr=False)
    extra: list = field(default_factory=list)

    @property
    def dof(self) -> int:
        return int(self.counts.sum()) + len(self.extra)

    @property
    def lambda_star(self) -> float:
        """Smallest first-excluded eigenvalue over all neighborhoods."""
        vals = [
            float(ev[c]) if c < len(ev) else np.inf for ev, c in zip(self.eigenvalues, self.counts)
        ]
        return min(vals) if vals else np.inf

    def excluded_eigenvalues(self) -> np.ndarray:
        return np.array(
            [float(ev[c]) if c < len(ev) else np.inf for ev, c in zip(self.eigenvalues, self.counts)]
        )

    def column_labels(self) -> list:
        labels = [i for i, c in enumerate(self.counts) for _ in range(int(c))]
        return labels + [lab for lab, _, _ in self.extra]

    def matrix(self) -> sparse.csc_matrix:
        """Global ``R_off`` (fine nodes × columns)."""
        rows, cols, vals = [], [], []
        k = 0
        for nodes, block in zip(self.nodes, self.columns):
            for j in range(block.shape[1]):
                rows.append(nodes)
                cols.append(np.full(nodes.size, k))
                vals.append(block[:, j])
                k += 1
        for _, nodes, v in self.extra:
            rows.append(nodes)
            cols.append(np.full(nodes.size, k))
            vals.append(v)
            k += 1
        if k == 0:
            return sparse.csc_matrix((self.grid.n_fine_nodes, 0))
        return sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.grid.n_fine_nodes, k),
        )

    def with_counts(self, counts) -> "OfflineSpace":
        """Same fragments with a different number of modes per neighborhood."""
        if self.fragments is None:
            raise ValueError("offline space was loaded without spectral fragments")
        return assemble_offline(self.grid, self.fragments, counts, self.pou_values, self.pou, self.extra)

    def with_extra(self, extra: list) -> "OfflineSpace":
        return replace(self, extra=list(self.extra) + list(extra))


def _pou_values(grid: GridHierarchy, pou) -> tuple[str, list]:
    """Values of χ_i over the nodes of every ω_i."""
    if isinstance(pou, MsBasisSet):
        name, R = pou.variant if pou.variant != "linear-bc" else "ms", pou.R0
    elif pou in ("linear", None):
        name, R = "linear", grid.hat_matrix
    else:
        raise ValueError(f"unknown partition of unity {pou!r}")
    R = sparse.csc_matrix(R)
    vals = []
    for i in range(grid.n_coarse_nodes):
        nodes = region_nodes(grid, grid.neighborhood(i))
        vals.append(R[:, i].toarray().ravel()[nodes])
    return name, vals


def assemble_offline(
    grid: GridHierarchy,
    fragments: list,
    counts,
    pou="linear",
    pou_name: str | None = None,
    extra: list | None = None,
) -> OfflineSpace:
    """Multiply the first ``counts[i]`` modes of every fragment by χ_i.

    ``pou`` is ``"linear"``, an ``MsBasisSet``, or a precomputed list of
    χ_i values over each ω_i (then ``pou_name`` labels it).
    """
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (grid.n_coarse_nodes,)).copy()
    if isinstance(pou, list):
        name, chi = pou_name or "ms", pou
    else:
        name, chi = _pou_values(grid, pou)
    cols, nodes, eigs = [], [], []
    for frag, c in zip(fragments, counts):
        if c < 0:
            raise ValueError("negative basis count")
        if c > frag.available:
            raise ValueError(
                f"omega_{frag.index}: requested {c} modes but only {frag.available} are available"
            )
        nodes.append(frag.nodes)
        cols.append(chi[frag.index][:, None] * frag.modes[:, :c])
        eigs.append(frag.eigenvalues)
    kind = fragments[0].kind if fragments else "harmonic"
    seed = fragments[0].seed if fragments else None
    return OfflineSpace(grid, counts, nodes, cols, eigs, kind, seed, name, fragments, chi, list(extra or []))


@dataclass
class GmsfemSolution:
    fine: np.ndarray
    coefficients: np.ndarray
    energy_error: float
    l2_error: float
    dof: int
    lambda_star: float
    reference: np.ndarray
    rank_deficient: list = field(default_factory=list)


def dirichlet_lift(grid: GridHierarchy, bc) -> np.ndarray:
    """Fine function equal to ``bc`` on ∂Ω nodes and zero elsewhere."""
    g = np.zeros(grid.n_fine_nodes)
    g[grid.boundary_nodes] = nodal_values(grid, bc)[grid.boundary_nodes]
    return g


def gmsfem_solve(
    off: OfflineSpace,
    kappa,
    f=0.0,
    bc=0.0,
    system: FineSystem | None = None,
    reference: np.ndarray | None = None,
    strict: bool = False,
) -> GmsfemSolution:
    """Galerkin solve ``R_offᵀ A R_off c = R_offᵀ (F - A g)``.

    Rows of ∂Ω nodes are removed from every column; the boundary data enter
    through the lift ``g``.  Dependent columns are handled by a
    minimum-norm solve (or raise when ``strict``).
    """
    grid = off.grid
    system = system or FineSystem(grid, kappa)
    R = off.matrix().tocsr()
    keep = np.ones(grid.n_fine_nodes)
    keep[grid.boundary_nodes] = 0.0
    R = sparse.diags(keep) @ R
    ug = dirichlet_lift(grid, bc)
    AR = system.A @ R
    Ac = (R.T @ AR).toarray()
    b = R.T @ (system.load(f) - system.A @ ug)
    c, bad = solve_coarse_spd(Ac, b, off.column_labels(), strict=strict)
    u = ug + R @ c
    ref = system.solve(f, bc) if reference is None else reference
    ea, el = system.relative_errors(ref, u)
    return GmsfemSolution(u, c, ea, el, off.dof, off.lambda_star, ref, bad)
