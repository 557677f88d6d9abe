"""Numerical homogenization by Dirichlet cell problems and the coarse P1 solve."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .fine_solver import (
    FineSystem,
    LocalProblem,
    nodal_values,
    reference_gradients,
    triangle_coefficients,
)
from .grid import GridHierarchy, oversample

__all__ = [
    "UpscaledTensor",
    "cell_tensor",
    "homogenize_block",
    "homogenize_block_oversampled",
    "homogenize",
    "coarse_p1_stiffness",
    "coarse_load",
    "HomogenizedSolution",
    "solve_homogenized",
]


@dataclass
class UpscaledTensor:
    """Per-block (or per coarse triangle) 2×2 upscaled coefficients."""

    tensors: np.ndarray
    variant: str = "plain"
    layers: int = 0

    def symmetric(self) -> np.ndarray:
        return 0.5 * (self.tensors + np.swapaxes(self.tensors, 1, 2))

    def check_spd(self) -> None:
        w = np.linalg.eigvalsh(self.symmetric())
        bad = np.flatnonzero(~(w[:, 0] > 0) | ~np.isfinite(w).all(axis=1))
        if bad.size:
            raise NumericalError(f"upscaled tensor not positive definite on blocks {bad.tolist()}")


def cell_tensor(grid: GridHierarchy, kappa, target: np.ndarray, sample: np.ndarray | None = None) -> np.ndarray:
    """Flux-averaged tensor of the cell problems ``N_l = x_l`` on ∂(sample).

    Parameters
    ----------
    target : fine triangles over which fluxes are averaged (K)
    sample : fine triangles on which the cell problems are solved (K⁺);
        defaults to ``target``
    """
    sample = target if sample is None else sample
    tk = triangle_coefficients(grid, kappa)
    prob = LocalProblem(grid, tk, sample)
    xb = grid.fine_coords[prob.boundary_nodes]
    N = prob.solve(xb)  # columns N_1, N_2 over prob.nodes
    full = np.zeros((grid.n_fine_nodes, 2))
    full[prob.nodes] = N
    # gradients only on the target triangles
    tris = grid.fine_triangles[target]
    g = reference_gradients(grid.hx, grid.hy)[grid.triangle_orientation[target]]
    grads = np.einsum("tkd,tkc->tcd", g, full[tris])  # (t, l, i) = ∂N_l/∂x_i
    area = 0.5 * grid.hx * grid.hy
    flux = np.einsum("t,tli->il", tk[target] * area, grads)
    return flux / (area * len(target))


def homogenize_block(grid: GridHierarchy, kappa, block: int) -> np.ndarray:
    """Upscaled tensor of coarse block ``block`` from cell problems on the block."""
    return cell_tensor(grid, kappa, grid.block_triangles(block))


def homogenize_block_oversampled(grid: GridHierarchy, kappa, block: int, layers: int) -> np.ndarray:
    """Cell problems on the block grown by ``layers`` fine cells, averaged over the block."""
    K = grid.block_triangles(block)
    return cell_tensor(grid, kappa, K, oversample(grid, K, layers))


def homogenize(grid: GridHierarchy, kappa, layers: int = 0, per: str = "block", mapper=map) -> UpscaledTensor:
    """Upscaled tensors for every coarse block or every coarse triangle.

    ``per="triangle"`` solves the cell problems on each coarse triangle,
    which reproduces the one-basis multiscale coarse matrix exactly.
    """
    if per == "block":
        regions = [grid.block_triangles(b) for b in range(grid.n_blocks)]
    elif per == "triangle":
        regions = list(grid.coarse_triangle_fine)
    else:
        raise ValueError(f"unknown homogenization region {per!r}")

    def one(K):
        return cell_tensor(grid, kappa, K, oversample(grid, K, layers) if layers else None)

    tensors = np.array(list(mapper(one, regions)))
    return UpscaledTensor(tensors, "oversampled" if layers else "plain", layers)


def _coarse_gradients(grid: GridHierarchy) -> np.ndarray:
    g = reference_gradients(grid.Hx, grid.Hy)
    return np.tile(g, (grid.n_blocks, 1, 1))  # (n_coarse_tri, 3, 2)


def coarse_p1_stiffness(grid: GridHierarchy, tensors: np.ndarray) -> np.ndarray:
    """Dense coarse P1 stiffness with a 2×2 tensor per block or per coarse triangle."""
    tensors = np.asarray(tensors, dtype=float)
    if tensors.shape[0] == grid.n_blocks:
        tensors = np.repeat(tensors, 2, axis=0)
    if tensors.shape != (grid.n_coarse_triangles, 2, 2):
        raise ValueError("tensor array does not match the coarse grid")
    G = _coarse_gradients(grid)
    area = 0.5 * grid.Hx * grid.Hy
    local = area * np.einsum("tkd,tde,tle->tkl", G, tensors, G)
    A = np.zeros((grid.n_coarse_nodes, grid.n_coarse_nodes))
    conn = grid.coarse_triangles
    np.add.at(A, (conn[:, :, None], conn[:, None, :]), local)
    return A


def coarse_load(grid: GridHierarchy, system: FineSystem, f) -> np.ndarray:
    """``(f, χ_i⁰)`` for every coarse hat, integrated on the fine grid."""
    return grid.hat_matrix.T @ system.load(f)


@dataclass
class HomogenizedSolution:
    coarse: np.ndarray
    fine: np.ndarray
    energy_error: float
    l2_error: float
    reference: np.ndarray


def solve_homogenized(
    grid: GridHierarchy,
    kappa,
    tensors: UpscaledTensor,
    f=0.0,
    bc=0.0,
    system: FineSystem | None = None,
    reference: np.ndarray | None = None,
) -> HomogenizedSolution:
    """Coarse P1 solve with the upscaled tensors, compared to the fine solution."""
    tensors.check_spd()
    system = system or FineSystem(grid, kappa)
    A = coarse_p1_stiffness(grid, tensors.symmetric())
    b = coarse_load(grid, system, f)
    g = nodal_values(grid, bc)[grid.coarse_to_fine_node]
    bnd = grid.coarse_boundary_nodes
    free = np.setdiff1d(np.arange(grid.n_coarse_nodes), bnd)
    c = np.zeros(grid.n_coarse_nodes)
    c[bnd] = g[bnd]
    rhs = b[free] - A[np.ix_(free, bnd)] @ c[bnd]
    if free.size:
        c[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
    fine = grid.hat_matrix @ c
    ref = system.solve(f, bc) if reference is None else reference
    ea, el = system.relative_errors(ref, fine)
    return HomogenizedSolution(c, fine, ea, el, ref)
