import csv
import io

import pytest

from gmsfem import cli
from gmsfem.errors import SolverError

SMALL = """\
grid: {nx: 4, ny: 4, refine: 5}
field: {kind: channels, contrast: 10000, seed: 7}
"""


def _cfg(tmp_path, extra="", name="c.yaml"):
    p = tmp_path / name
    p.write_text(SMALL + extra)
    return str(p)


def _rows(path):
    lines = path.read_text().splitlines()[1:]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


@pytest.mark.parametrize("command", ["field", "solve-fine", "homogenize", "msfem", "online", "mixed", "dg"])
def test_subcommands_succeed(tmp_path, command, capsys):
    out = tmp_path / "o"
    extra = "online: {max_iter: 1}\nmixed: {counts: [1, 2]}\ndg: {counts: [1, 2]}\n"
    assert cli.main([command, "--config", _cfg(tmp_path, extra), "--out-dir", str(out)]) == 0
    assert (out / "field.txt").exists()
    if command != "field":
        assert (out / "report.csv").exists() and (out / "report.json").exists()


def test_gmsfem_sweep_rows_decrease(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["gmsfem", "--config", _cfg(tmp_path), "--out-dir", str(out)]) == 0
    rows = [r for r in _rows(out / "report.csv") if r["method"] == "gmsfem"]
    assert len(rows) == 5
    errs = [float(r["energy_error_pct"]) for r in rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert capsys.readouterr().out == (out / "report.csv").read_text()


def test_fem_baseline_does_not_converge(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "fem: {coarse: [2, 4, 5, 10]}\n")
    assert cli.main(["gmsfem", "--config", cfg, "--out-dir", str(out)]) == 0
    fem = [r for r in _rows(out / "report.csv") if r["method"] == "fem"]
    errs = [float(r["energy_error_pct"]) for r in fem]
    assert len(errs) == 4
    # hat functions stay near 100% until the coarse grid resolves the channels
    assert min(errs[:3]) > 90
    gms = [r for r in _rows(out / "report.csv") if r["method"] == "gmsfem"]
    # 5 modes per node (125 DOF) beat the finest P1 grid (121 DOF)
    assert float(gms[-1]["energy_error_pct"]) < errs[-1]


def test_fem_baseline_rejects_nondivisible(tmp_path, capsys):
    cfg = _cfg(tmp_path, "fem: {coarse: [3]}\n")
    assert cli.main(["gmsfem", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 2


def test_adapt_with_online_writes_two_histories(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "adapt: {compare_online: true, max_iter: 2}\n")
    assert cli.main(["adapt", "--config", cfg, "--out-dir", str(out)]) == 0
    assert (out / "history.csv").exists() and (out / "history_online.csv").exists()
    methods = {(r["method"], r["variant"]) for r in _rows(out / "report.csv")}
    assert {("adapt", "adaptive"), ("adapt", "uniform"), ("online", "nonoverlap")} <= methods


def test_randomized_runs_byte_identical(tmp_path, capsys):
    extra = "gmsfem: {snapshots: randomized, counts: [1, 2, 3]}\n"
    cfg = _cfg(tmp_path, extra)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["gmsfem", "--config", cfg, "--seed", "11", "--out-dir", str(a)]) == 0
    assert cli.main(["gmsfem", "--config", cfg, "--seed", "11", "--out-dir", str(b), "--threads", "2"]) == 0
    assert cli.main(["gmsfem", "--config", cfg, "--seed", "12", "--out-dir", str(c)]) == 0
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    assert (a / "report.csv").read_bytes() != (c / "report.csv").read_bytes()


def test_offline_round_trip_identical_rows(tmp_path, capsys):
    cfg = _cfg(tmp_path, "gmsfem: {save_offline: true, dump_basis: true}\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["gmsfem", "--config", cfg, "--out-dir", str(a)]) == 0
    assert (a / "offline.bin").exists() and any((a / "basis").iterdir())
    assert cli.main(["report", "--config", cfg, "--offline", str(a / "offline.bin"), "--out-dir", str(b)]) == 0
    assert (a / "report.csv").read_text() == (b / "report.csv").read_text()


def test_report_merges_runs(tmp_path, capsys):
    cfg = _cfg(tmp_path, "mixed: {counts: [1]}\ndg: {counts: [1]}\n")
    a, b, m = tmp_path / "a", tmp_path / "b", tmp_path / "m"
    assert cli.main(["mixed", "--config", cfg, "--out-dir", str(a)]) == 0
    assert cli.main(["dg", "--config", cfg, "--out-dir", str(b)]) == 0
    assert cli.main(["report", "--config", cfg, str(a), str(b / "report.json"), "--out-dir", str(m)]) == 0
    methods = [r["method"] for r in _rows(m / "report.csv")]
    assert methods == ["mixed", "dg"]


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: {nx: 0}\n")
    assert cli.main(["gmsfem", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    bad.write_text("unknown_key: 1\n")
    assert cli.main(["gmsfem", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert cli.main(["gmsfem", "--config", str(tmp_path / "missing.yaml")]) == 2
    many = _cfg(tmp_path, "gmsfem: {counts: [1000]}\n")
    assert cli.main(["gmsfem", "--config", many, "--out-dir", str(tmp_path / "o")]) == 2
    flux = _cfg(tmp_path, "mixed: {boundary: flux, counts: [1]}\n")
    assert cli.main(["mixed", "--config", flux, "--out-dir", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, capsys, monkeypatch):
    def boom(ctx, rep, out, mapper):
        raise SolverError("local solve failed in omega_3")

    monkeypatch.setitem(cli._RUNNERS, "solve-fine", boom)
    assert cli.main(["solve-fine", "--config", _cfg(tmp_path), "--out-dir", str(tmp_path / "o")]) == 3
    assert "omega_3" in capsys.readouterr().err


def test_hash_recorded_in_reports(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path)
    assert cli.main(["msfem", "--config", cfg, "--out-dir", str(out)]) == 0
    head = (out / "report.csv").read_text().splitlines()[0]
    from gmsfem.config import config_hash, load_config

    assert config_hash(load_config(cfg)) in head
    assert config_hash(load_config(cfg)) in (out / "report.json").read_text()
