"""P1 finite-element kernel on the fine triangulation.

Coefficients are piecewise constant per fine triangle, so all element
integrals of P1 products are exact.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import EigenSolverError, RankDeficientError, SolverError
from .fields import CoefficientField
from .grid import GridHierarchy, region_boundary_nodes, region_nodes

__all__ = [
    "reference_gradients",
    "triangle_coefficients",
    "assemble_stiffness",
    "assemble_mass",
    "LocalProblem",
    "solve_dirichlet",
    "FineSystem",
    "solve_fine_global",
    "norms",
    "EigenDecomposition",
    "generalized_eig",
    "solve_coarse_spd",
    "nodal_values",
    "triangle_gradients",
    "gradient_operators",
]

DIRECT_LIMIT = 200_000
RESIDUAL_TOL = 1e-10
_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def reference_gradients(hx: float, hy: float) -> np.ndarray:
    """Gradients of the three P1 shape functions, shape ``(2, 3, 2)``.

    Index 0 is the lower triangle ``(v00, v10, v11)``, index 1 the upper
    triangle ``(v00, v11, v01)``.
    """
    return np.array(
        [
            [[-1 / hx, 0.0], [1 / hx, -1 / hy], [0.0, 1 / hy]],
            [[0.0, -1 / hy], [1 / hx, 0.0], [-1 / hx, 1 / hy]],
        ]
    )


def _local_stiffness(grid: GridHierarchy) -> np.ndarray:
    g = reference_gradients(grid.hx, grid.hy)
    area = 0.5 * grid.hx * grid.hy
    return area * np.einsum("okd,old->okl", g, g)


def triangle_coefficients(grid: GridHierarchy, coef) -> np.ndarray:
    """Per-triangle values from a field, a per-cell or per-triangle array, or a scalar."""
    if isinstance(coef, CoefficientField):
        coef.check_grid(grid)
        return coef.per_triangle()
    arr = np.asarray(coef, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_fine_triangles, float(arr))
    arr = arr.ravel()
    if arr.size == grid.n_fine_cells:
        return np.repeat(arr, 2)
    if arr.size == grid.n_fine_triangles:
        return arr
    raise ValueError(f"coefficient of size {arr.size} does not match the fine grid")


def _assemble(grid, local, coef, region):
    tc = triangle_coefficients(grid, coef)
    if region is None:
        tris = np.arange(grid.n_fine_triangles)
        nodes = None
        n = grid.n_fine_nodes
        conn = grid.fine_triangles
    else:
        tris = np.asarray(region, dtype=np.int64)
        nodes = region_nodes(grid, tris)
        n = nodes.size
        conn = np.searchsorted(nodes, grid.fine_triangles[tris])
    orient = grid.triangle_orientation[tris]
    vals = tc[tris][:, None, None] * local[orient]
    rows = np.repeat(conn, 3, axis=1).ravel()
    cols = np.tile(conn, (1, 3)).ravel()
    mat = sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_stiffness(grid: GridHierarchy, kappa, region: np.ndarray | None = None) -> sparse.csr_matrix:
    """Stiffness matrix of ``∫ κ ∇u·∇v`` over ``region`` (fine triangles).

    Rows and columns follow ``region_nodes(grid, region)``, or all fine nodes
    when ``region`` is None.
    """
    return _assemble(grid, _local_stiffness(grid), kappa, region)


def assemble_mass(grid: GridHierarchy, weight=1.0, region: np.ndarray | None = None) -> sparse.csr_matrix:
    """Weighted P1 mass matrix ``∫ w u v`` with ``w`` constant per triangle."""
    local = 0.5 * grid.hx * grid.hy * _MASS_REF
    return _assemble(grid, np.stack([local, local]), weight, region)


def triangle_gradients(grid: GridHierarchy, u: np.ndarray) -> np.ndarray:
    """Constant gradient of a nodal function on every fine triangle, ``(n_tri, [k,] 2)``."""
    g = reference_gradients(grid.hx, grid.hy)[grid.triangle_orientation]
    vals = u[grid.fine_triangles]
    if u.ndim == 1:
        return np.einsum("tkd,tk->td", g, vals)
    return np.einsum("tkd,tkc->tcd", g, vals)


def nodal_values(grid: GridHierarchy, func) -> np.ndarray:
    """Evaluate a callable ``func(x, y)``, scalar, or nodal array at fine nodes."""
    if callable(func):
        x, y = grid.fine_coords[:, 0], grid.fine_coords[:, 1]
        return np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape).copy()
    arr = np.asarray(func, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_fine_nodes, float(arr))
    if arr.size != grid.n_fine_nodes:
        raise ValueError("nodal array does not match the fine grid")
    return arr.ravel().copy()


def _check_residual(A, x, b, refine_fn, what):
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    for _ in range(3):
        r = b - A @ x
        rel = np.linalg.norm(r) / bnorm
        if rel <= RESIDUAL_TOL:
            return x
        x = x + refine_fn(r)
    rel = np.linalg.norm(b - A @ x) / bnorm
    if rel > RESIDUAL_TOL:
        raise SolverError(f"{what}: relative residual {rel:.2e} exceeds {RESIDUAL_TOL:g}")
    return x


class _Factor:
    """Sparse SPD factorization with a Jacobi-PCG fallback for large systems."""

    def __init__(self, A: sparse.spmatrix, what: str = "solve"):
        self.A = A.tocsc()
        self.what = what
        n = A.shape[0]
        if n == 0:
            self._lu = None
            return
        if n <= DIRECT_LIMIT:
            try:
                self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"{what}: singular system ({exc})") from exc
            diag = np.abs(self._lu.U.diagonal())
            if diag.min() <= 1e-14 * diag.max():
                raise SolverError(f"{what}: numerically singular system")
        else:
            self._lu = None
            d = self.A.diagonal()
            self._precond = spla.LinearOperator(A.shape, matvec=lambda v: v / d)

    def _raw(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        x, info = spla.cg(self.A, b, rtol=RESIDUAL_TOL * 0.1, maxiter=20 * self.A.shape[0], M=self._precond)
        if info != 0:
            raise SolverError(f"{self.what}: conjugate gradients did not converge")
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.A.shape[0] == 0:
            return np.zeros_like(b, dtype=float)
        if b.ndim == 1:
            return _check_residual(self.A, self._raw(b), b, self._raw, self.what)
        if b.shape[1] == 0:
            return np.zeros_like(b, dtype=float)
        if self._lu is None:
            return np.column_stack([self.solve(b[:, k]) for k in range(b.shape[1])])
        x = self._lu.solve(np.asfortranarray(b))
        bn = np.linalg.norm(b, axis=0)
        bn[bn == 0] = 1.0
        for _ in range(3):
            r = b - self.A @ x
            rel = np.linalg.norm(r, axis=0) / bn
            if rel.max() <= RESIDUAL_TOL:
                return x
            x = x + self._lu.solve(np.asfortranarray(r))
        rel = np.linalg.norm(b - self.A @ x, axis=0) / bn
        if rel.max() > RESIDUAL_TOL:
            raise SolverError(f"{self.what}: relative residual {rel.max():.2e} exceeds {RESIDUAL_TOL:g}")
        return x


class LocalProblem:
    """Galerkin problem on a set of fine triangles with Dirichlet nodes.

    The interior block is factorized once, so many harmonic extensions or
    local solves reuse it.

    Parameters
    ----------
    grid : GridHierarchy
    kappa : CoefficientField or array
    region : array of fine triangle indices, or None for the whole domain
    dirichlet : global node indices held fixed; defaults to the region boundary
    """

    def __init__(self, grid: GridHierarchy, kappa, region=None, dirichlet=None, label=None):
        self.grid = grid
        if region is None:
            self.nodes = np.arange(grid.n_fine_nodes)
            default_bnd = grid.boundary_nodes
        else:
            region = np.asarray(region, dtype=np.int64)
            if region.size == 0:
                raise ValueError("region must be nonempty")
            self.nodes = region_nodes(grid, region)
            default_bnd = region_boundary_nodes(grid, region)
        self.region = region
        bnd = default_bnd if dirichlet is None else np.intersect1d(dirichlet, self.nodes)
        if bnd.size == 0:
            raise SolverError(f"no Dirichlet nodes on region {label}: the system is singular")
        self.boundary = np.searchsorted(self.nodes, bnd)
        mask = np.ones(self.nodes.size, dtype=bool)
        mask[self.boundary] = False
        self.interior = np.flatnonzero(mask)
        self.A = assemble_stiffness(grid, kappa, region)
        self.A_II = self.A[self.interior][:, self.interior]
        self.A_IB = self.A[self.interior][:, self.boundary]
        self._factor = _Factor(self.A_II, f"local solve on region {label}")

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.nodes[self.boundary]

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.interior]

    def solve(self, g: np.ndarray | float = 0.0, load: np.ndarray | None = None) -> np.ndarray:
        """Solution over ``self.nodes`` with trace ``g`` and load vector ``load``.

        ``g`` is given on the boundary nodes (one column per right-hand
        side); ``load`` is an assembled load vector over ``self.nodes``.
        """
        g = np.asarray(g, dtype=float)
        load = None if load is None else np.asarray(load, dtype=float)
        if g.ndim == 2:
            k = g.shape[1]
        elif load is not None and load.ndim == 2:
            k = load.shape[1]
        else:
            k = None
        shape = (self.nodes.size,) if k is None else (self.nodes.size, k)
        if g.ndim == 1 and k is not None:
            g = g[:, None]
        u = np.zeros(shape)
        u[self.boundary] = np.broadcast_to(g, (self.boundary.size,) + shape[1:])
        rhs = -(self.A_IB @ u[self.boundary])
        if load is not None:
            if k is not None and load.ndim == 1:
                load = load[:, None]
            rhs = rhs + load[self.interior]
        u[self.interior] = self._factor.solve(rhs)
        return u

    def harmonic_extension(self, g: np.ndarray) -> np.ndarray:
        return self.solve(g)


def solve_dirichlet(grid: GridHierarchy, kappa, region, boundary_values, rhs=None) -> np.ndarray:
    """κ-harmonic (or loaded) solve on ``region`` with prescribed trace.

    Parameters
    ----------
    boundary_values : callable ``g(x, y)`` or array over all fine nodes
        Only its values on the region boundary are used.
    rhs : callable, scalar or nodal array of the source f, optional

    Returns
    -------
    ndarray
        Values over ``region_nodes(grid, region)``.
    """
    prob = LocalProblem(grid, kappa, region)
    g = nodal_values(grid, boundary_values)[prob.boundary_nodes]
    load = None
    if rhs is not None:
        M = assemble_mass(grid, 1.0, region)
        f = nodal_values(grid, rhs)[prob.nodes]
        load = M @ f
    return prob.solve(g, load)


class FineSystem:
    """Global fine-scale system for a fixed coefficient; caches matrices."""

    def __init__(self, grid: GridHierarchy, kappa):
        self.grid = grid
        self.kappa = kappa
        self.tri_kappa = triangle_coefficients(grid, kappa)

    @cached_property
    def A(self) -> sparse.csr_matrix:
        return assemble_stiffness(self.grid, self.tri_kappa)

    @cached_property
    def M(self) -> sparse.csr_matrix:
        return assemble_mass(self.grid)

    @cached_property
    def dirichlet_problem(self) -> LocalProblem:
        return LocalProblem(self.grid, self.tri_kappa, None, label="global")

    def load(self, f) -> np.ndarray:
        return self.M @ nodal_values(self.grid, f)

    def solve(self, f=0.0, bc=0.0) -> np.ndarray:
        prob = self.dirichlet_problem
        g = nodal_values(self.grid, bc)[prob.boundary_nodes]
        return prob.solve(g, self.load(f))

    def energy(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.A @ u), 0.0)))

    def l2(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.M @ u), 0.0)))

    def norms(self, u: np.ndarray) -> tuple[float, float]:
        return self.energy(u), self.l2(u)

    def relative_errors(self, u_ref: np.ndarray, u: np.ndarray) -> tuple[float, float]:
        e = u_ref - u
        ea, el = self.norms(e)
        ra, rl = self.norms(u_ref)
        return ea / ra if ra > 0 else ea, el / rl if rl > 0 else el


def solve_fine_global(grid: GridHierarchy, kappa, f=0.0, bc=0.0) -> np.ndarray:
    """Reference P1 solution of ``-div(κ∇u) = f`` with ``u = bc`` on ∂Ω."""
    return FineSystem(grid, kappa).solve(f, bc)


def norms(grid: GridHierarchy, u: np.ndarray, kappa) -> tuple[float, float]:
    """Energy norm ``sqrt(uᵀAu)`` and L² norm ``sqrt(uᵀMu)`` of a fine function."""
    return FineSystem(grid, kappa).norms(np.asarray(u, dtype=float))


@dataclass
class EigenDecomposition:
    """Ascending eigenvalues with S-orthonormal eigenvectors (as columns)."""

    values: np.ndarray
    vectors: np.ndarray
    shifted: bool = False


def generalized_eig(A: np.ndarray, S: np.ndarray, k: int | None = None, region=None) -> EigenDecomposition:
    """Smallest ``k`` eigenpairs of ``A x = λ S x`` (all when ``k`` is None).

    S is factorized by Cholesky; on failure it is shifted by
    ``1e-12 * trace(S) / dim`` once before giving up.
    """
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    S = 0.5 * (np.asarray(S, dtype=float) + np.asarray(S, dtype=float).T)
    n = A.shape[0]
    if S.shape != (n, n):
        raise ValueError("A and S must be square of equal size")
    if k is not None and not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    shifted = False
    try:
        L = sla.cholesky(S, lower=True)
    except sla.LinAlgError:
        shift = 1e-12 * np.trace(S) / max(n, 1)
        try:
            L = sla.cholesky(S + shift * np.eye(n), lower=True)
        except sla.LinAlgError as exc:
            raise EigenSolverError("weight matrix is numerically singular", region) from exc
        shifted = True
    C = sla.solve_triangular(L, sla.solve_triangular(L, A, lower=True).T, lower=True)
    C = 0.5 * (C + C.T)
    subset = None if k is None or k == n or k == 0 else (0, k - 1)
    vals, Y = sla.eigh(C, subset_by_index=subset)
    if k == 0:
        vals, Y = vals[:0], Y[:, :0]
    X = sla.solve_triangular(L.T, Y, lower=False)
    # deterministic signs: largest-magnitude entry positive
    if X.size:
        idx = np.argmax(np.abs(X), axis=0)
        signs = np.sign(X[idx, np.arange(X.shape[1])])
        signs[signs == 0] = 1.0
        X = X * signs
    return EigenDecomposition(vals, X, shifted)


def solve_coarse_spd(
    A: np.ndarray,
    b: np.ndarray,
    labels=None,
    strict: bool = False,
    rcond: float = 1e-12,
) -> tuple[np.ndarray, list]:
    """Solve a dense symmetric positive semidefinite coarse system.

    The matrix is Jacobi-scaled and factorized by Cholesky.  If it is
    singular to ``rcond`` (dependent basis columns), the minimum-norm
    solution is returned with a warning, or ``RankDeficientError`` is
    raised when ``strict``.  Returns the solution and the labels of the
    columns in the numerical null space.
    """
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), []
    d = np.diag(A).copy()
    zero = d <= 0
    d[zero] = 1.0
    s = 1.0 / np.sqrt(d)
    As = A * s[:, None] * s[None, :]
    bs = b * s
    w = np.linalg.eigvalsh(As) if n <= 4000 else None
    if w is not None and w[0] > rcond * w[-1] and not zero.any():
        c = sla.cho_solve(sla.cho_factor(As), bs)
        return c * s, []
    if w is None:
        try:
            c = sla.cho_solve(sla.cho_factor(As), bs)
            return c * s, []
        except sla.LinAlgError:
            pass
    w, V = np.linalg.eigh(As)
    keep = w > rcond * w[-1]
    null = V[:, ~keep]
    bad = np.flatnonzero(np.abs(null).max(axis=1) > 1e-3) if null.size else np.array([], int)
    names = sorted({labels[i] for i in bad}) if labels is not None else bad.tolist()
    if strict:
        raise RankDeficientError("coarse matrix is rank deficient", names)
    warnings.warn(
        f"coarse matrix rank deficient ({int((~keep).sum())} null directions); using pseudo-inverse",
        RuntimeWarning,
        stacklevel=2,
    )
    c = V[:, keep] @ ((V[:, keep].T @ bs) / w[keep])
    return c * s, names



def gradient_operators(grid: GridHierarchy) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse maps from nodal values to per-triangle ``∂/∂x₁`` and ``∂/∂x₂``."""
    g = reference_gradients(grid.hx, grid.hy)[grid.triangle_orientation]
    rows = np.repeat(np.arange(grid.n_fine_triangles), 3)
    cols = grid.fine_triangles.ravel()
    shape = (grid.n_fine_triangles, grid.n_fine_nodes)
    Dx = sparse.csr_matrix((g[:, :, 0].ravel(), (rows, cols)), shape=shape)
    Dy = sparse.csr_matrix((g[:, :, 1].ravel(), (rows, cols)), shape=shape)
    return Dx, Dy
