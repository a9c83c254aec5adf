import csv
import json

import pytest
from click.testing import CliRunner

from sidtrie.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_build_index_writes_loadable_file(runner, tmp_path):
    out = tmp_path / "c.idx"
    res = runner.invoke(main, ["build-index", "--vocab", "16", "--sid-len", "4",
                               "--dense-depth", "2", "--constraints", "100",
                               "--index", str(out)])
    assert res.exit_code == 0, res.output
    from sidtrie import load
    idx = load(str(out))
    assert idx.config.vocab_size == 16


def test_build_index_rejects_bad_config(runner, tmp_path):
    res = runner.invoke(main, ["build-index", "--vocab", "4", "--sid-len", "2",
                               "--dense-depth", "5", "--constraints", "4",
                               "--index", str(tmp_path / "x.idx")])
    assert res.exit_code == 2


def test_verify_oracle_pass_and_config_error(runner):
    res = runner.invoke(main, ["verify-oracle", "--vocab", "8", "--sid-len", "3",
                               "--dense-depth", "1", "--constraints", "15",
                               "--beam", "15", "--batch", "2", "--cases", "3"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["verify-oracle", "--vocab", "1024", "--sid-len", "8",
                               "--constraints", "4", "--beam", "4", "--cases", "1"])
    assert res.exit_code == 2


def test_verify_oracle_from_saved_index(runner, tmp_path):
    out = tmp_path / "c.idx"
    runner.invoke(main, ["build-index", "--vocab", "8", "--sid-len", "3",
                         "--dense-depth", "0", "--constraints", "12", "--index", str(out)])
    res = runner.invoke(main, ["verify-oracle", "--index", str(out),
                               "--beam", "12", "--cases", "2"])
    assert res.exit_code == 0, res.output


def test_check_compliance_csv_output(runner, tmp_path):
    out = tmp_path / "comp.csv"
    res = runner.invoke(main, ["check-compliance", "--vocab", "16", "--sid-len", "3",
                               "--dense-depth", "1", "--constraints", "40",
                               "--beam", "4", "--decodes", "3",
                               "--methods", "static,ppv_exact",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(open(out)))
    assert {r["method"] for r in rows} == {"static", "ppv_exact"}
    assert all(int(r["violations"]) == 0 for r in rows)


def test_check_memory_renders_figure(runner, tmp_path):
    out = tmp_path / "mem.json"
    res = runner.invoke(main, ["check-memory", "--vocab", "16", "--sid-len", "4",
                               "--dense-depth", "1", "--constraints", "30,90",
                               "--out", str(out), "--format", "json"])
    assert res.exit_code == 0, res.output
    data = json.loads(out.read_text())
    assert len(data["rows"]) == 2
    assert (tmp_path / "mem.png").exists()


def test_bench_latency_csv_and_figure(runner, tmp_path):
    out = tmp_path / "lat.csv"
    res = runner.invoke(main, ["bench-latency", "--vocab", "16", "--sid-len", "3",
                               "--dense-depth", "1", "--constraints", "30",
                               "--beam", "4", "--batch", "1", "--trials", "2",
                               "--warmup", "1", "--methods", "static,ppv_exact",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(open(out)))
    assert {r["method"] for r in rows} == {"static", "ppv_exact"}
    assert (tmp_path / "lat.png").exists()


def test_bench_branch_reports_slope(runner, tmp_path):
    out = tmp_path / "branch.csv"
    res = runner.invoke(main, ["bench-branch", "--branch-factors", "8,16,32",
                               "--constraints", "200", "--trials", "2",
                               "--warmup", "1", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "slope" in res.output
    assert (tmp_path / "branch.png").exists()


def test_unknown_method_is_config_error(runner):
    res = runner.invoke(main, ["bench-latency", "--vocab", "8", "--sid-len", "3",
                               "--dense-depth", "1", "--constraints", "10",
                               "--methods", "static,definitely_not_real"])
    assert res.exit_code == 2
