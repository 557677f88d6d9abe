"""Command-line experiment driver.

Every subcommand reads an optional YAML/JSON config, computes the fine
reference once, and writes ``report.csv`` and ``report.json`` (plus
method-specific tables) into the output directory.  Exit codes: 0 on
success, 2 on configuration errors, 3 on numerical failures.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy import sparse

from . import __version__
from .adaptivity import adapt_loop
from .config import (
    ExperimentConfig,
    boundary_function,
    cell_source_values,
    config_hash,
    generate_field,
    load_config,
    source_values,
)
from .dg import build_dg_offline, ipdg_solve
from .errors import ConfigError, GmsfemError, NumericalError
from .fields import write_field
from .fine_solver import FineSystem
from .gmsfem import assemble_offline, build_fragments, compute_weight, gmsfem_solve
from .grid import build_grid
from .homogenization import homogenize, solve_homogenized
from .mixed import MixedGrid, build_mixed_offline, fine_mixed_solve, mixed_coarse_solve, write_velocity_csv
from .msfem import MsBasisSet, ms_basis, ms_basis_oversampled, msfem_solve
from .online import online_loop
from .report import ExperimentReport, ReportRow, read_report, write_history_csv, write_tensor_csv
from .storage import dump_basis, load_offline, save_offline

__all__ = ["main", "run", "build_parser", "COMMANDS"]

log = logging.getLogger("gmsfem")

COMMANDS = ("field", "solve-fine", "homogenize", "msfem", "gmsfem", "adapt", "online", "mixed", "dg", "report")
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@contextmanager
def _mapper(threads: int):
    """Ordered ``map`` over a thread pool (LAPACK and SuperLU release the GIL)."""
    if threads <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield pool.map


class _Context:
    """Grid, field, data and the fine reference shared by one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.grid = cfg.make_grid()
        self.kappa = generate_field(cfg, self.grid)
        self.f = source_values(cfg, self.grid)
        self.bc = boundary_function(cfg)
        self._system = None
        self._ref = None

    @property
    def system(self) -> FineSystem:
        if self._system is None:
            self._system = FineSystem(self.grid, self.kappa)
        return self._system

    @property
    def reference(self) -> np.ndarray:
        if self._ref is None:
            self._ref = self.system.solve(self.f, self.bc)
        return self._ref


def _new_report(cfg: ExperimentConfig, command: str) -> ExperimentReport:
    return ExperimentReport(command, config_hash(cfg), cfg.seed, __version__)


def _timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


# ------------------------------------------------------------------ methods
def _run_field(ctx, rep, out, mapper):
    k = ctx.kappa
    rep.extra["field"] = {"min": k.min, "max": k.max, "contrast": k.contrast, "cells": int(k.values.size)}


def _run_fine(ctx, rep, out, mapper):
    u, dt = _timed(lambda: ctx.reference)
    g = ctx.grid
    rep.add(ReportRow("fine", g.n_fine_nodes, 0.0, 0.0, "p1", wall_time=dt))
    with open(out / "solution.csv", "w") as fh:
        fh.write("node,x,y,u\n")
        for n, ((x, y), v) in enumerate(zip(g.fine_coords, u)):
            fh.write(f"{n},{x!r},{y!r},{v!r}\n")


def _run_homogenize(ctx, rep, out, mapper):
    opts = ctx.cfg.homogenize
    for layers in opts.layers:
        t = time.perf_counter()
        ten = homogenize(ctx.grid, ctx.kappa, layers, opts.per, mapper)
        sol = solve_homogenized(ctx.grid, ctx.kappa, ten, ctx.f, ctx.bc, ctx.system, ctx.reference)
        variant = "plain" if layers == 0 else f"oversampled-{layers}"
        rep.add(ReportRow("homogenize", ctx.grid.n_coarse_nodes, sol.energy_error, sol.l2_error, variant,
                          wall_time=time.perf_counter() - t))
        write_tensor_csv(out / f"tensors_{variant}.csv", ten.tensors, variant)


def _run_msfem(ctx, rep, out, mapper):
    opts = ctx.cfg.msfem
    for variant in opts.variants:
        t = time.perf_counter()
        if variant == "linear-bc":
            basis = ms_basis(ctx.grid, ctx.kappa, mapper)
        else:
            layers = opts.layers or max(1, ctx.grid.refine // 2)
            basis = ms_basis_oversampled(ctx.grid, ctx.kappa, layers, mapper)
        sol = msfem_solve(basis, ctx.kappa, ctx.f, ctx.bc, ctx.system, ctx.reference)
        rep.add(ReportRow("msfem", ctx.grid.n_coarse_nodes, sol.energy_error, sol.l2_error, variant,
                          wall_time=time.perf_counter() - t))


def _offline_fragments(ctx, mapper):
    opts = ctx.cfg.gmsfem
    basis = ms_basis(ctx.grid, ctx.kappa, mapper)
    weight = compute_weight(ctx.grid, ctx.kappa, basis if opts.weight == "ms" else None)
    seed = ctx.cfg.seed if opts.snapshots == "randomized" else None
    count = opts.count
    if opts.snapshots == "randomized" and count is None:
        count = max(opts.counts) + 8
    frags = build_fragments(ctx.grid, ctx.kappa, opts.snapshots, opts.layers, count, seed, weight, mapper)
    pou = basis if opts.pou == "ms" else "linear"
    return frags, pou


def _gmsfem_rows(ctx, rep, off, counts, variant):
    for l in counts:
        t = time.perf_counter()
        sub = off.with_counts(np.minimum(l, [fr.available for fr in off.fragments]))
        sol = gmsfem_solve(sub, ctx.kappa, ctx.f, ctx.bc, ctx.system, ctx.reference)
        rep.add(ReportRow("gmsfem", sub.dof, sol.energy_error, sol.l2_error, variant, sub.lambda_star,
                          wall_time=time.perf_counter() - t))


def _fem_rows(ctx, rep):
    g = ctx.grid
    for n in ctx.cfg.fem.coarse:
        if g.Nx % n or (g.Ny * n) % g.Nx:
            raise ConfigError(f"polynomial baseline: {n} coarse blocks do not divide the {g.Nx}x{g.Ny} fine grid")
        ny = g.Ny * n // g.Nx
        if g.Ny % ny:
            raise ConfigError(f"polynomial baseline: {n} coarse blocks do not divide the fine grid")
        t = time.perf_counter()
        cg = build_grid(n, ny, g.Nx // n)
        basis = MsBasisSet(cg, sparse.csr_matrix(cg.hat_matrix), variant="p1")
        sol = msfem_solve(basis, ctx.kappa, ctx.f, ctx.bc, ctx.system, ctx.reference)
        rep.add(ReportRow("fem", cg.n_coarse_nodes, sol.energy_error, sol.l2_error, "p1",
                          wall_time=time.perf_counter() - t))


def _run_gmsfem(ctx, rep, out, mapper):
    opts = ctx.cfg.gmsfem
    frags, pou = _offline_fragments(ctx, mapper)
    off = assemble_offline(ctx.grid, frags, max(opts.counts), pou)
    _gmsfem_rows(ctx, rep, off, opts.counts, opts.snapshots)
    if opts.save_offline:
        save_offline(out / "offline.bin", off)
    if opts.dump_basis:
        dump_basis(out / "basis", off)
    _fem_rows(ctx, rep)


def _run_adapt(ctx, rep, out, mapper):
    opts = ctx.cfg.adapt
    frags, pou = _offline_fragments(ctx, mapper)
    start = assemble_offline(ctx.grid, frags, opts.initial, pou)
    res, dt = _timed(adapt_loop, start, ctx.kappa, ctx.f, ctx.bc, opts.theta, opts.tol, opts.max_dof,
                     opts.max_iter, opts.increment, ctx.system, ctx.reference)
    for h in res.history:
        rep.add(ReportRow("adapt", h.dof, h.energy_error, h.l2_error, "adaptive", None, h.iteration))
    rep.extra["adapt_wall_time"] = dt
    write_history_csv(out / "history.csv", res.history)
    if opts.uniform:
        top = max(1, int(np.ceil(res.history[-1].dof / ctx.grid.n_coarse_nodes)))
        avail = [fr.available for fr in frags]
        off = assemble_offline(ctx.grid, frags, np.minimum(top, avail), pou)
        for l in range(opts.initial, top + 1):
            sub = off.with_counts(np.minimum(l, avail))
            sol = gmsfem_solve(sub, ctx.kappa, ctx.f, ctx.bc, ctx.system, ctx.reference)
            rep.add(ReportRow("adapt", sub.dof, sol.energy_error, sol.l2_error, "uniform", sub.lambda_star))
    if opts.compare_online:
        o = ctx.cfg.online
        on = online_loop(start, ctx.kappa, ctx.f, ctx.bc, o.theta, o.max_iter, o.tol, o.select, o.limit,
                         ctx.system, ctx.reference)
        for h in on.history:
            rep.add(ReportRow("online", h.dof, h.energy_error, h.l2_error, o.select, None, h.iteration))
        write_history_csv(out / "history_online.csv", on.history)


def _run_online(ctx, rep, out, mapper):
    o = ctx.cfg.online
    frags, pou = _offline_fragments(ctx, mapper)
    start = assemble_offline(ctx.grid, frags, o.initial, pou)
    res = online_loop(start, ctx.kappa, ctx.f, ctx.bc, o.theta, o.max_iter, o.tol, o.select, o.limit,
                      ctx.system, ctx.reference)
    for h in res.history:
        rep.add(ReportRow("online", h.dof, h.energy_error, h.l2_error, o.select,
                          start.lambda_star if h.iteration == 0 else None, h.iteration))
    write_history_csv(out / "history.csv", res.history)


def _side_flux(values):
    left, right, bottom, top = (float(v) for v in values)

    def g(x, y):
        return np.select(
            [np.isclose(x, 0.0), np.isclose(x, 1.0), np.isclose(y, 0.0)], [left, right, bottom], top
        )

    return g


def _run_mixed(ctx, rep, out, mapper):
    opts = ctx.cfg.mixed
    f = cell_source_values(ctx.cfg, ctx.grid)
    kw = {"flux_bc": _side_flux(opts.flux)} if opts.boundary == "flux" else {"pressure_bc": ctx.bc}
    ref = fine_mixed_solve(ctx.grid, ctx.kappa, f, **kw)
    off = build_mixed_offline(ctx.grid, ctx.kappa, 1, mapper)
    avail = np.array([fr.available for fr in off.fragments])
    sol = None
    for l in opts.counts:
        t = time.perf_counter()
        sub = off.with_counts(np.minimum(l, avail))
        sol = mixed_coarse_solve(sub, ctx.kappa, f, reference=ref, **kw)
        lam = min((float(fr.eigenvalues[c]) if c < fr.available else np.inf)
                  for fr, c in zip(sub.fragments, sub.counts))
        rep.add(ReportRow("mixed", sub.dof, sol.velocity_error, sol.pressure_error, opts.boundary, lam,
                          wall_time=time.perf_counter() - t))
        rep.extra.setdefault("max_block_imbalance", {})[str(sub.dof)] = float(np.abs(sol.block_imbalance).max())
    if opts.export_velocity and sol is not None:
        write_velocity_csv(out / "velocity.csv", MixedGrid(ctx.grid), sol.flux)


def _run_dg(ctx, rep, out, mapper):
    opts = ctx.cfg.dg
    off = build_dg_offline(ctx.grid, ctx.kappa, 1, opts.layers, mapper)
    for l in opts.counts:
        t = time.perf_counter()
        sub = off.full() if l == "full" else off.with_counts(np.minimum(l, [fr.available for fr in off.fragments]))
        sol = ipdg_solve(sub, ctx.kappa, ctx.f, ctx.bc, opts.gamma, ctx.system, ctx.reference)
        lam = min((float(fr.eigenvalues[c]) if c < fr.available else np.inf)
                  for fr, c in zip(sub.fragments, sub.counts))
        rep.add(ReportRow("dg", sub.dof, sol.energy_error, sol.l2_error, "ipdg", lam,
                          wall_time=time.perf_counter() - t))
        rep.extra.setdefault("gamma", {})[str(sub.dof)] = sol.gamma
        rep.extra.setdefault("coercive", {})[str(sub.dof)] = sol.coercive


_RUNNERS = {
    "field": _run_field,
    "solve-fine": _run_fine,
    "homogenize": _run_homogenize,
    "msfem": _run_msfem,
    "gmsfem": _run_gmsfem,
    "adapt": _run_adapt,
    "online": _run_online,
    "mixed": _run_mixed,
    "dg": _run_dg,
}


def run(cfg: ExperimentConfig, command: str = "gmsfem", out_dir: str | Path | None = None) -> ExperimentReport:
    """Run one subcommand and write its outputs; returns the report."""
    if command not in _RUNNERS:
        raise ConfigError(f"unknown command {command!r}")
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg)
    rep = _new_report(cfg, command)
    with _mapper(cfg.threads) as mapper:
        _RUNNERS[command](ctx, rep, out, mapper)
    if cfg.output.write_field or command == "field":
        write_field(out / "field.txt", ctx.kappa)
    if command != "field":
        rep.write(out)
    return rep


def run_report(cfg: ExperimentConfig, inputs, offline: str | None, out_dir) -> ExperimentReport:
    """Merge saved reports, or re-solve from a stored offline space."""
    out = Path(out_dir or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    if offline:
        ctx = _Context(cfg)
        rep = _new_report(cfg, "gmsfem")
        off = load_offline(offline, ctx.grid)
        _gmsfem_rows(ctx, rep, off, cfg.gmsfem.counts, off.kind)
    else:
        if not inputs:
            raise ConfigError("report needs report directories/files or --offline")
        rep = _new_report(cfg, "report")
        for p in inputs:
            p = Path(p)
            src = read_report(p / "report.json" if p.is_dir() else p)
            for r in src.rows:
                rep.add(r)
    rep.write(out)
    sys.stdout.write(rep.to_csv())
    return rep


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmsfem", description="Multiscale solvers for 2D high-contrast elliptic problems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int, help="root seed (field and randomized snapshots)")
    common.add_argument("--out-dir", help="output directory (default from config, else ./out)")
    common.add_argument("--threads", type=int, help="worker threads for per-region work")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "report":
            sp.add_argument("inputs", nargs="*", help="report.json files or directories to merge")
            sp.add_argument("--offline", help="stored offline space to re-solve with the config's counts")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "threads": args.threads})
        if args.command == "report":
            run_report(cfg, args.inputs, args.offline, args.out_dir)
        else:
            rep = run(cfg, args.command, args.out_dir)
            if rep.rows:
                sys.stdout.write(rep.to_csv())
    except ConfigError as exc:
        print(f"gmsfem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, GmsfemError) as exc:
        print(f"gmsfem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # inputs the config validator cannot see, e.g. more modes than snapshots
        print(f"gmsfem: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
