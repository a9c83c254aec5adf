import csv
import io
import json

import numpy as np
import pytest

from sidtrie import DecoderConfig
from sidtrie.bench import (
    BenchReport,
    SweepSpec,
    fit_loglog_slope,
    gen_constraints,
    run_branch_suite,
    run_compliance_suite,
    run_latency_suite,
    run_memory_suite,
)


def small_spec(**overrides) -> SweepSpec:
    base = dict(
        methods=["static", "cpu_trie", "ppv_exact", "ppv_approx", "hash_bitmap"],
        vocab_sizes=[16], constraint_counts=[60], sid_length=4, dense_depth=1,
        beam_width=4, batch_size=2, trials=3, warmup=1, seed=0,
    )
    base.update(overrides)
    return SweepSpec(**base)


def test_gen_constraints_deterministic_and_exact_count():
    cfg = DecoderConfig(vocab_size=16, sid_length=4)
    a = gen_constraints(3, 200, cfg)
    b = gen_constraints(3, 200, cfg)
    assert np.array_equal(a.array, b.array)
    assert a.size == 200
    assert gen_constraints(4, 200, cfg).array.tobytes() != a.array.tobytes()


def test_gen_constraints_clustered_shares_prefixes():
    cfg = DecoderConfig(vocab_size=64, sid_length=4)
    uni = gen_constraints(0, 500, cfg, mode="uniform")
    clu = gen_constraints(0, 500, cfg, mode="clustered")
    def distinct_heads(cs):
        return len(np.unique(cs.array[:, :2], axis=0))
    assert clu.size == 500
    assert distinct_heads(clu) < distinct_heads(uni)


def test_gen_constraints_rejects_impossible_counts():
    cfg = DecoderConfig(vocab_size=2, sid_length=2)
    with pytest.raises(ValueError):
        gen_constraints(0, 5, cfg)
    with pytest.raises(ValueError):
        gen_constraints(0, 0, cfg)
    with pytest.raises(ValueError):
        gen_constraints(0, 2, cfg, mode="bogus")


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        small_spec(trials=0)
    with pytest.raises(ValueError):
        small_spec(methods=["static", "warp_drive"])
    with pytest.raises(ValueError):
        small_spec(vocab_sizes=[])


def test_latency_suite_isolated():
    report = run_latency_suite(small_spec())
    methods = {r["method"] for r in report.rows}
    assert methods == {"static", "cpu_trie", "ppv_exact", "ppv_approx", "hash_bitmap"}
    for row in report.rows:
        assert row["status"] == "ok"
        assert row["mean_ms"] > 0
        assert row["min_ms"] <= row["mean_ms"] <= row["max_ms"]
    assert report.environment["numpy"]


def test_latency_suite_e2e_mode():
    report = run_latency_suite(small_spec(timing="e2e", methods=["static"], trials=3))
    (row,) = report.rows
    assert row["status"] == "ok"
    assert np.isfinite(row["mean_ms"])


def test_compliance_suite_flags_only_inexact_methods():
    report = run_compliance_suite(small_spec(beam_width=6), decodes=10)
    by_method = {r["method"]: r for r in report.rows}
    for exact in ("static", "cpu_trie", "ppv_exact"):
        assert by_method[exact]["violations"] == 0
    assert by_method["ppv_approx"]["violations"] == 0  # subset of exact
    assert by_method["hash_bitmap"]["emitted"] > 0


def test_memory_suite_within_bounds():
    report = run_memory_suite(small_spec(constraint_counts=[20, 200]))
    assert len(report.rows) == 2
    for row in report.rows:
        assert row["within_bound"]
        assert row["actual_bytes"] <= row["layout_bound_bytes"]
        assert row["upper_bound_bytes"] > 0


def test_branch_suite_rows_and_slope_fit():
    report = run_branch_suite([8, 16, 32], constraint_count=300, trials=3, warmup=1,
                              beam_width=8, batch_size=1)
    assert [r["branch_factor"] for r in report.rows] == [8, 16, 32]
    for row in report.rows:
        assert row["effective_branch"] <= row["branch_factor"]
        assert row["mean_ms"] > 0
    assert abs(fit_loglog_slope([1, 10, 100], [2, 20, 200]) - 1.0) < 1e-9


def test_report_serialization_round_trip():
    report = BenchReport(rows=[{"method": "static", "mean_ms": 1.5, "n": np.int64(3),
                                "status": "ok"}], spec={"trials": 3})
    parsed = json.loads(report.to_json())
    assert parsed["rows"][0]["n"] == 3
    assert parsed["spec"]["trials"] == 3
    table = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert table[0]["method"] == "static"
    assert float(table[0]["mean_ms"]) == 1.5
