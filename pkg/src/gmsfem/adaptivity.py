"""Residual indicators, bulk marking and the offline adaptive enrichment loop."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fine_solver import FineSystem, LocalProblem
from .gmsfem import GmsfemSolution, OfflineSpace, gmsfem_solve

__all__ = [
    "RieszSolver",
    "IndicatorSet",
    "residual_norm",
    "indicators",
    "dorfler_mark",
    "AdaptRow",
    "adapt_loop",
]

log = logging.getLogger(__name__)

# excluded eigenvalues below this are treated as this value in η² = r²/λ
LAMBDA_FLOOR = 1e-12


class RieszSolver:
    """Local residual solves on the coarse neighborhoods of one fine system.

    For ω_i the residual functional ``R_i(v) = (f, v) - a(u_H, v)`` over
    ``V_i = H¹₀(ω_i)`` is represented by ``z`` with ``a(z, v) = R_i(v)``;
    the factorizations of the local stiffness blocks are cached.
    """

    def __init__(self, system: FineSystem):
        self.system = system
        self.grid = system.grid
        self._problems: dict[int, LocalProblem] = {}

    def problem(self, i: int) -> LocalProblem:
        if i not in self._problems:
            self._problems[i] = LocalProblem(
                self.grid, self.system.tri_kappa, self.grid.neighborhood(i), label=f"omega_{i}"
            )
        return self._problems[i]

    def global_residual(self, u_H: np.ndarray, f=0.0) -> np.ndarray:
        """Fine load minus stiffness action, ``F - A u_H`` at every node."""
        return self.system.load(f) - self.system.A @ u_H

    def representative(self, i: int, residual: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Riesz representative on ω_i.

        Returns
        -------
        nodes : global fine nodes of ω_i
        z : values over ``nodes`` (zero on ∂ω_i)
        norm : ``sqrt(a(z, z)) = ‖R_i‖``
        """
        prob = self.problem(i)
        load = np.zeros(prob.nodes.size)
        load[prob.interior] = residual[prob.interior_nodes]
        z = prob.solve(0.0, load)
        r2 = float(load[prob.interior] @ z[prob.interior])
        return prob.nodes, z, float(np.sqrt(max(r2, 0.0)))

    def norms(self, u_H: np.ndarray, f=0.0, which=None) -> np.ndarray:
        """‖R_i‖ for every neighborhood (or those in ``which``)."""
        res = self.global_residual(u_H, f)
        idx = range(self.grid.n_coarse_nodes) if which is None else which
        return np.array([self.representative(i, res)[2] for i in idx])


def residual_norm(system: FineSystem, i: int, u_H: np.ndarray, f=0.0) -> float:
    """``‖R_i‖_{V_i*}`` for a single neighborhood."""
    solver = RieszSolver(system)
    return solver.representative(i, solver.global_residual(u_H, f))[2]


@dataclass
class IndicatorSet:
    """Per-neighborhood residual norms, excluded eigenvalues and η²."""

    residuals: np.ndarray
    excluded: np.ndarray
    eta2: np.ndarray
    iteration: int = 0

    @property
    def total(self) -> float:
        return float(self.eta2.sum())


def indicators(residuals: np.ndarray, excluded: np.ndarray, iteration: int = 0) -> IndicatorSet:
    """``η_i² = r_i² / λ_{l_i+1}``; an exhausted neighborhood (λ = ∞) gives 0."""
    r = np.asarray(residuals, dtype=float)
    lam = np.asarray(excluded, dtype=float)
    eta2 = np.zeros_like(r)
    finite = np.isfinite(lam)
    eta2[finite] = r[finite] ** 2 / np.maximum(lam[finite], LAMBDA_FLOOR)
    return IndicatorSet(r, lam, eta2, iteration)


def dorfler_mark(eta2, theta: float) -> np.ndarray:
    """Smallest prefix of the descending ``eta2`` holding a ``theta`` fraction of the sum.

    Ties keep the original index order.  All-zero indicators give an empty set.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    eta2 = np.asarray(eta2, dtype=float)
    if np.any(eta2 < 0) or not np.all(np.isfinite(eta2)):
        raise ValueError("indicators must be finite and nonnegative")
    total = eta2.sum()
    if total <= 0:
        return np.array([], dtype=int)
    order = np.argsort(-eta2, kind="stable")
    csum = np.cumsum(eta2[order])
    # relative slack absorbs rounding in the cumulative sum
    k = int(np.searchsorted(csum, theta * total * (1 - 1e-12))) + 1
    k = min(k, int(np.count_nonzero(eta2)))
    return order[:k]


@dataclass
class AdaptRow:
    iteration: int
    dof: int
    energy_error: float
    l2_error: float
    indicator_sum: float
    n_marked: int
    kind: str = "offline"


@dataclass
class AdaptResult:
    history: list
    space: OfflineSpace
    solution: GmsfemSolution
    indicators: list = field(default_factory=list)


def adapt_loop(
    space: OfflineSpace,
    kappa,
    f=0.0,
    bc=0.0,
    theta: float = 0.7,
    tol: float = 0.0,
    max_dof: int | None = None,
    max_iter: int = 50,
    increment: int = 1,
    system: FineSystem | None = None,
    reference: np.ndarray | None = None,
) -> AdaptResult:
    """Enrich marked neighborhoods with their next eigenfunctions until a stop rule holds.

    Stops when the indicator sum is at most ``tol``, when the DOF count
    reaches ``max_dof`` (the last step is trimmed in marking order so the
    cap is not exceeded), after ``max_iter`` enrichments, or when nothing
    can be added.
    """
    if increment < 1:
        raise ValueError("increment must be >= 1")
    grid = space.grid
    system = system or FineSystem(grid, kappa)
    ref = system.solve(f, bc) if reference is None else reference
    riesz = RieszSolver(system)
    history, sets = [], []
    counts = space.counts.copy()
    avail = np.array([fr.available for fr in space.fragments])
    it = 0
    while True:
        sol = gmsfem_solve(space, kappa, f, bc, system, ref)
        ind = indicators(riesz.norms(sol.fine, f), space.excluded_eigenvalues(), it)
        sets.append(ind)
        row = AdaptRow(it, space.dof, sol.energy_error, sol.l2_error, ind.total, 0)
        history.append(row)
        log.info("adapt %d: dof=%d energy=%.4g sum_eta2=%.4g", it, space.dof, sol.energy_error, ind.total)
        if ind.total <= tol or it >= max_iter:
            break
        if max_dof is not None and space.dof >= max_dof:
            break
        marked = dorfler_mark(ind.eta2, theta)
        budget = np.inf if max_dof is None else max_dof - space.dof
        added = 0
        for i in marked:
            room = int(avail[i] - counts[i])
            if room <= 0:
                warnings.warn(f"omega_{i}: snapshot space exhausted, not enriched", RuntimeWarning)
                continue
            step = int(min(increment, room, budget - added))
            if step <= 0:
                break
            counts[i] += step
            added += step
        row.n_marked = int(len(marked))
        if added == 0:
            break
        space = space.with_counts(counts)
        it += 1
    return AdaptResult(history, space, sol, sets)
