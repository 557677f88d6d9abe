"""Experiment reports: error tables as CSV and JSON plus auxiliary tables."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ReportRow", "ExperimentReport", "format_number", "write_history_csv", "write_tensor_csv", "read_report"]

CSV_COLUMNS = ("method", "variant", "dof", "energy_error_pct", "l2_error_pct", "lambda_star", "iterations")


def format_number(x) -> str:
    """Stable text for a float: 12 significant digits, ``inf``/``nan`` spelled out, blank for None."""
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return format(x, ".12g")


@dataclass
class ReportRow:
    """One table row; errors are relative and stored as fractions, written as percent."""

    method: str
    dof: int
    energy_error: float
    l2_error: float = float("nan")
    variant: str = ""
    lambda_star: float | None = None
    iterations: int = 0
    wall_time: float = 0.0

    def __post_init__(self):
        if self.dof <= 0:
            raise ValueError("DOF must be positive")
        if not self.energy_error >= 0:
            raise ValueError("errors must be nonnegative")

    def csv_fields(self) -> list[str]:
        return [
            self.method,
            self.variant,
            str(int(self.dof)),
            format_number(100.0 * self.energy_error),
            format_number(100.0 * self.l2_error),
            format_number(self.lambda_star),
            str(int(self.iterations)),
        ]


@dataclass
class ExperimentReport:
    method: str
    config_hash: str
    seed: int
    version: str
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)

    def sorted_rows(self) -> list[ReportRow]:
        """Rows grouped by method and variant in first-seen order, sorted by DOF within each group."""
        order = {}
        for r in self.rows:
            order.setdefault((r.method, r.variant), len(order))
        return sorted(self.rows, key=lambda r: (order[(r.method, r.variant)], r.dof))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# config_hash", self.config_hash, "seed", self.seed, "version", self.version])
        w.writerow(CSV_COLUMNS)
        for r in self.sorted_rows():
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def to_json(self) -> str:
        rows = []
        for r in self.sorted_rows():
            d = asdict(r)
            d["energy_error_pct"] = 100.0 * r.energy_error
            d["l2_error_pct"] = 100.0 * r.l2_error
            rows.append({k: _jsonable(v) for k, v in d.items()})
        doc = {
            "metadata": {
                "method": self.method,
                "config_hash": self.config_hash,
                "seed": self.seed,
                "version": self.version,
            },
            "rows": rows,
            "extra": _jsonable(self.extra),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        pc, pj = d / "report.csv", d / "report.json"
        pc.write_text(self.to_csv())
        pj.write_text(self.to_json())
        return pc, pj


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else format_number(v)
    return v


def read_report(path: str | Path) -> ExperimentReport:
    """Load a ``report.json`` written by :meth:`ExperimentReport.write`."""
    doc = json.loads(Path(path).read_text())
    md = doc["metadata"]
    rep = ExperimentReport(md["method"], md["config_hash"], md["seed"], md["version"], extra=doc.get("extra", {}))
    for d in doc["rows"]:
        lam = d.get("lambda_star")
        rep.add(
            ReportRow(
                d["method"], int(d["dof"]), float(d["energy_error"]), float(d["l2_error"]), d.get("variant", ""),
                None if lam is None else float(lam), int(d.get("iterations", 0)), float(d.get("wall_time", 0.0)),
            )
        )
    return rep


def write_history_csv(path: str | Path, history) -> None:
    """Iteration history of an adaptive or online run (``AdaptRow`` items)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "kind", "dof", "energy_error_pct", "l2_error_pct", "indicator_sum", "n_marked"])
        for h in history:
            w.writerow([h.iteration, h.kind, h.dof, format_number(100 * h.energy_error),
                        format_number(100 * h.l2_error), format_number(h.indicator_sum), h.n_marked])


def write_tensor_csv(path: str | Path, tensors: np.ndarray, variant: str = "") -> None:
    """Upscaled 2×2 tensors, one row per coarse block (or triangle)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "variant", "k11", "k12", "k21", "k22"])
        for i, t in enumerate(np.asarray(tensors)):
            w.writerow([i, variant] + [format_number(v) for v in t.ravel()])
