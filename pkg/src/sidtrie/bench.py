"""Benchmark harness: synthetic workload generation, correctness /
compliance / memory suites, and per-step masking latency sweeps with
machine-readable reports.

Timing protocol: the default ("isolated") mode records one reference decode
trajectory per cell, then times each method's per-step mask computation
over those fixed inputs -- the closest desk-scale analog of measuring the
constraint enforcement logic alone.  The "e2e" mode times full decodes and
subtracts the unconstrained loop.  Warmup iterations are excluded; means,
stddevs, mins and maxes are reported per step.
"""

from __future__ import annotations

import csv
import gc
import io
import json
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    CpuTrieMasker,
    HashBitmap,
    HashBitmapMasker,
    PpvApproxMasker,
    PpvExactMasker,
    SortedSidArray,
    measure_fp_rate,
)
from .config import ConstraintSet, DecoderConfig, ROOT_SENTINEL, BeamState
from .decoder import (
    LogitSource,
    NGramLogitSource,
    SeededRandomLogits,
    decode,
    decode_step,
    decode_with_masker,
    reference_unconstrained_decode,
)
from .index import TransitionIndex, actual_footprint, build_index, footprint_bound, memory_upper_bound
from .kernel import log_softmax, step_mask
from .trie import build_pointer_trie

METHODS = ("static", "unconstrained", "cpu_trie", "ppv_exact", "ppv_approx", "hash_bitmap")
EXACT_METHODS = ("static", "cpu_trie", "ppv_exact")


@dataclass
class SweepSpec:
    methods: list[str] = field(default_factory=lambda: ["static", "ppv_exact", "ppv_approx"])
    vocab_sizes: list[int] = field(default_factory=lambda: [2048])
    constraint_counts: list[int] = field(default_factory=lambda: [10**5])
    sid_length: int = 8
    dense_depth: int = 2
    beam_width: int = 70
    batch_size: int = 2
    trials: int = 100
    warmup: int = 10
    seed: int = 0
    mode: str = "uniform"        # constraint generation: uniform | clustered
    timing: str = "isolated"     # isolated | e2e
    ppv_top_k: int = 50

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.vocab_sizes or not self.constraint_counts:
            raise ValueError("sweep grids must be non-empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")


def gen_constraints(seed: int, count: int, config: DecoderConfig, mode: str = "uniform") -> ConstraintSet:
    """Deterministic synthetic constraint set of exactly ``count`` SIDs.

    Uniform mode samples token tuples uniformly at random and resamples
    collisions; clustered mode draws the leading half of the tokens from a
    small prefix pool so deep levels share prefixes heavily.
    """
    V, L = config.vocab_size, config.sid_length
    space = V**L
    if count > space:
        raise ValueError(f"count {count} exceeds |V|^L = {space}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))

    if mode == "clustered":
        head = max(1, L // 2)
        pool_size = max(1, min(count // 64 + 1, V**head))
        pool = _sample_unique(rng, pool_size, V, head)
        rows = np.empty((0, L), dtype=np.uint32)
        while rows.shape[0] < count:
            need = count - rows.shape[0]
            draw = np.empty((need + need // 4 + 16, L), dtype=np.uint32)
            draw[:, :head] = pool[rng.integers(0, pool_size, size=draw.shape[0])]
            draw[:, head:] = rng.integers(0, V, size=(draw.shape[0], L - head))
            rows = np.unique(np.concatenate([rows, draw]), axis=0)
        sel = rng.permutation(rows.shape[0])[:count]
        return ConstraintSet.from_array(rows[sel], config)
    if mode != "uniform":
        raise ValueError(f"unknown generation mode {mode!r}")

    return ConstraintSet.from_array(_sample_unique(rng, count, V, L), config)


def _sample_unique(rng: np.random.Generator, count: int, vocab: int, length: int) -> np.ndarray:
    """Uniform sample of ``count`` distinct token tuples."""
    space = vocab**length
    if space <= 4 * count and space <= 2**24:
        flat = rng.choice(space, size=count, replace=False)
        out = np.empty((count, length), dtype=np.uint32)
        for i in range(length - 1, -1, -1):
            out[:, i] = flat % vocab
            flat //= vocab
        return out
    rows = np.empty((0, length), dtype=np.uint32)
    while rows.shape[0] < count:
        need = count - rows.shape[0]
        draw = rng.integers(0, vocab, size=(need + need // 8 + 8, length)).astype(np.uint32)
        rows = np.unique(np.concatenate([rows, draw]), axis=0)
    # np.unique sorted the pool; a seeded permutation keeps the subset unbiased.
    sel = rng.permutation(rows.shape[0])[:count]
    return rows[sel]


def environment_metadata() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


@dataclass
class BenchReport:
    rows: list[dict]
    spec: dict
    environment: dict = field(default_factory=environment_metadata)

    def to_json(self) -> str:
        return json.dumps(
            {"environment": self.environment, "spec": self.spec, "rows": self.rows},
            indent=2, default=_json_default,
        )

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        fields = sorted({k for row in self.rows for k in row})
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


@contextmanager
def _quiesced():
    """Collector disabled while a timing loop runs; pauses otherwise land
    inside individual trials as multi-millisecond outliers."""
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


@dataclass
class _Cell:
    """Everything built once per (vocab, constraints) benchmark cell."""

    config: DecoderConfig
    constraints: ConstraintSet
    index: TransitionIndex
    maskers: dict


def _build_cell(spec: SweepSpec, vocab: int, count: int, methods: list[str]) -> _Cell:
    config = DecoderConfig(
        vocab_size=vocab,
        sid_length=spec.sid_length,
        dense_depth=spec.dense_depth,
        beam_width=spec.beam_width,
        batch_size=spec.batch_size,
    )
    constraints = gen_constraints(spec.seed, count, config, mode=spec.mode)
    index = build_index(constraints, config)
    maskers: dict = {}
    if "cpu_trie" in methods:
        maskers["cpu_trie"] = CpuTrieMasker(build_pointer_trie(constraints, config))
    if "ppv_exact" in methods or "ppv_approx" in methods:
        arr = SortedSidArray(constraints)
        if "ppv_exact" in methods:
            maskers["ppv_exact"] = PpvExactMasker(arr)
        if "ppv_approx" in methods:
            maskers["ppv_approx"] = PpvApproxMasker(arr, k=spec.ppv_top_k)
    if "hash_bitmap" in methods:
        maskers["hash_bitmap"] = HashBitmapMasker(HashBitmap(constraints))
    return _Cell(config=config, constraints=constraints, index=index, maskers=maskers)


def record_trajectory(cell: _Cell, seed: int):
    """One reference decode; returns per-step (nodes, prefixes, log_probs)."""
    config = cell.config
    source = NGramLogitSource(seed, config.vocab_size)
    root = cell.index.root_state if config.dense_depth == 0 else ROOT_SENTINEL
    state = BeamState.initial(config, root_node=root)
    steps = []
    for step in range(config.sid_length):
        logits = source.logits(state.tokens, step)
        lp = log_softmax(logits)
        B, M, V = lp.shape
        steps.append({
            "nodes": state.nodes.reshape(-1).copy(),
            "prefixes": state.tokens.reshape(B * M, step).copy(),
            "log_probs": lp.reshape(B * M, V).copy(),
        })
        state = decode_step(state, logits, cell.index, config)
    return steps


def _time_isolated(cell: _Cell, method: str, steps, trials: int, warmup: int) -> np.ndarray:
    """Per-trial seconds spent in mask computation across all L steps."""
    index = cell.index
    if method == "static":
        def one_pass():
            for s in steps:
                step_mask(s["nodes"], index, s["step_no"])
    elif method == "unconstrained":
        def one_pass():
            for _ in steps:
                pass
    else:
        masker = cell.maskers[method]
        def one_pass():
            for s in steps:
                masker.mask(s["prefixes"], s["step_no"], log_probs=s["log_probs"])
    for i, s in enumerate(steps):
        s["step_no"] = i
    out = np.empty(trials)
    with _quiesced():
        for _ in range(warmup):
            one_pass()
        for t in range(trials):
            t0 = time.perf_counter()
            one_pass()
            out[t] = time.perf_counter() - t0
    return out


def _time_e2e(cell: _Cell, method: str, trials: int, warmup: int, seed: int) -> np.ndarray:
    """Per-trial seconds for a full decode under the given method."""
    config = cell.config

    def one_decode(i: int):
        source = NGramLogitSource(seed, config.vocab_size)
        if method == "static":
            decode(source, cell.index, config)
        elif method == "unconstrained":
            reference_unconstrained_decode(source, config)
        else:
            decode_with_masker(source, config, cell.maskers[method])

    out = np.empty(trials)
    with _quiesced():
        for i in range(warmup):
            one_decode(i)
        for t in range(trials):
            t0 = time.perf_counter()
            one_decode(t)
            out[t] = time.perf_counter() - t0
    return out


def run_latency_suite(spec: SweepSpec) -> BenchReport:
    """Per-step masking overhead for every (method, vocab, |C|) cell.

    Out-of-memory cells are recorded with status "oom" and the sweep
    continues.
    """
    rows: list[dict] = []
    methods = [m for m in spec.methods if m != "unconstrained"]
    for vocab in spec.vocab_sizes:
        for count in spec.constraint_counts:
            base = {
                "vocab": vocab, "constraints": count, "sid_length": spec.sid_length,
                "dense_depth": spec.dense_depth, "beam": spec.beam_width,
                "batch": spec.batch_size, "trials": spec.trials, "seed": spec.seed,
                "mode": spec.mode, "timing": spec.timing,
            }
            try:
                cell = _build_cell(spec, vocab, count, methods)
            except (MemoryError, OverflowError) as exc:
                for method in methods:
                    rows.append({**base, "method": method, "status": f"oom:{type(exc).__name__}"})
                continue
            steps = record_trajectory(cell, spec.seed) if spec.timing == "isolated" else None
            if spec.timing == "e2e":
                uncon = _time_e2e(cell, "unconstrained", spec.trials, spec.warmup, spec.seed)
            for method in methods:
                try:
                    if spec.timing == "isolated":
                        per_trial = _time_isolated(cell, method, steps, spec.trials, spec.warmup)
                    else:
                        per_trial = _time_e2e(cell, method, spec.trials, spec.warmup, spec.seed) - uncon
                except MemoryError:
                    rows.append({**base, "method": method, "status": "oom:MemoryError"})
                    continue
                per_step_ms = per_trial / spec.sid_length * 1e3
                rows.append({
                    **base, "method": method, "status": "ok",
                    "mean_ms": float(per_step_ms.mean()),
                    "median_ms": float(np.median(per_step_ms)),
                    "std_ms": float(per_step_ms.std()),
                    "min_ms": float(per_step_ms.min()),
                    "max_ms": float(per_step_ms.max()),
                })
            del cell
    return BenchReport(rows=rows, spec=_spec_dict(spec))


def run_branch_suite(branch_factors: list[int], constraint_count: int,
                     trials: int = 50, warmup: int = 5, seed: int = 0,
                     beam_width: int = 70, batch_size: int = 2) -> BenchReport:
    """Sparse-kernel-only timing as the max branch factor grows.

    Each cell sets the vocabulary equal to the target branch factor and
    times the transition kernel at the root of a dense_depth=0 index, where
    the child count matches the vocabulary.
    """
    rows: list[dict] = []
    for b in branch_factors:
        sid_length = 2
        while b**sid_length < 4 * constraint_count:
            sid_length += 1
        config = DecoderConfig(vocab_size=b, sid_length=sid_length, dense_depth=0,
                               beam_width=beam_width, batch_size=batch_size)
        count = min(constraint_count, b**sid_length)
        constraints = gen_constraints(seed, count, config, mode="uniform")
        index = build_index(constraints, config)
        nodes = np.full(batch_size * beam_width, index.root_state, dtype=np.int64)
        from .kernel import vntk
        for _ in range(warmup):
            vntk(nodes, index, 0)
        per_trial = np.empty(trials)
        with _quiesced():
            for t in range(trials):
                t0 = time.perf_counter()
                vntk(nodes, index, 0)
                per_trial[t] = time.perf_counter() - t0
        rows.append({
            "branch_factor": b, "constraints": count, "sid_length": sid_length,
            "effective_branch": int(index.branch_factors[0]),
            "trials": trials, "seed": seed, "status": "ok",
            "mean_ms": float(per_trial.mean() * 1e3),
            "median_ms": float(np.median(per_trial) * 1e3),
            "std_ms": float(per_trial.std() * 1e3),
            "min_ms": float(per_trial.min() * 1e3),
            "max_ms": float(per_trial.max() * 1e3),
        })
        del index, constraints
    return BenchReport(rows=rows, spec={
        "branch_factors": branch_factors, "constraint_count": constraint_count,
        "trials": trials, "warmup": warmup, "seed": seed,
    })


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def run_compliance_suite(spec: SweepSpec, decodes: int = 100) -> BenchReport:
    """Decode repeatedly and verify emitted SIDs against C.

    Exact methods must show zero violations; the hash bitmap's out-of-C
    rate is measured and reported.
    """
    rows: list[dict] = []
    for vocab in spec.vocab_sizes:
        for count in spec.constraint_counts:
            cell = _build_cell(spec, vocab, count, list(spec.methods))
            for method in spec.methods:
                if method == "unconstrained":
                    continue
                emitted = 0
                violations = 0
                for i in range(decodes):
                    source = NGramLogitSource(spec.seed + 7919 * i, vocab)
                    if method == "static":
                        result = decode(source, cell.index, cell.config)
                    else:
                        result = decode_with_masker(source, cell.config, cell.maskers[method])
                    for b in range(cell.config.batch_size):
                        k = int(result.valid_counts[b])
                        if k:
                            ok = cell.constraints.contains(result.sids[b, :k])
                            emitted += k
                            violations += int((~ok).sum())
                rows.append({
                    "method": method, "vocab": vocab, "constraints": count,
                    "decodes": decodes, "emitted": emitted, "violations": violations,
                    "violation_rate": violations / emitted if emitted else 0.0,
                    "seed": spec.seed, "status": "ok",
                })
            del cell
    return BenchReport(rows=rows, spec=_spec_dict(spec))


def run_memory_suite(spec: SweepSpec, K1: int = 12, K2: int = 4) -> BenchReport:
    """Footprint accounting per cell: actual bytes, the closed-form upper
    bounds under both the paper-style and layout-matched constants, and the
    MB-per-million-constraints figure."""
    rows: list[dict] = []
    for vocab in spec.vocab_sizes:
        for count in spec.constraint_counts:
            config = DecoderConfig(vocab_size=vocab, sid_length=spec.sid_length,
                                   dense_depth=spec.dense_depth)
            constraints = gen_constraints(spec.seed, count, config, mode=spec.mode)
            index = build_index(constraints, config)
            actual = actual_footprint(index)
            bound = memory_upper_bound(K1, K2, config, count)
            layout = footprint_bound(config, count)
            rows.append({
                "vocab": vocab, "constraints": count, "sid_length": spec.sid_length,
                "dense_depth": spec.dense_depth, "mode": spec.mode,
                "actual_bytes": actual,
                "upper_bound_bytes": bound,
                "layout_bound_bytes": layout,
                "ratio_to_layout_bound": actual / layout,
                "within_bound": actual <= layout,
                "mb_per_million": bound / 1e6 / (count / 1e6),
                "status": "ok",
            })
            del index, constraints
    return BenchReport(rows=rows, spec={**_spec_dict(spec), "K1": K1, "K2": K2})


def _spec_dict(spec: SweepSpec) -> dict:
    return {k: getattr(spec, k) for k in spec.__dataclass_fields__}
