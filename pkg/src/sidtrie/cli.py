"""Command-line entry points for index construction and benchmarking.

Exit codes: 0 on success, 1 when a check or compliance run fails, 2 for
configuration errors.
"""

from __future__ import annotations

import math
import sys

import click
import numpy as np

from . import bench as bench_mod
from .bench import BenchReport, SweepSpec, fit_loglog_slope, gen_constraints
from .config import ConfigError, ConstraintError, DecoderConfig, ConstraintSet
from .decoder import SeededRandomLogits, decode
from .index import actual_footprint, build_index, footprint_bound
from .oracle import exhaustive_topk
from .serialize import save, load

EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2


def _csv_ints(_ctx, _param, value):
    try:
        return [int(v) for v in value.split(",") if v.strip() != ""]
    except ValueError:
        raise click.BadParameter("expected a comma-separated list of integers")


def _csv_strs(_ctx, _param, value):
    return [v.strip() for v in value.split(",") if v.strip()]


shared = [
    click.option("--vocab", default="256", callback=_csv_ints,
                 help="Vocabulary size(s), comma separated."),
    click.option("--sid-len", default=4, type=int, help="Tokens per identifier."),
    click.option("--dense-depth", default=1, type=int,
                 help="Levels served by dense bit tables."),
    click.option("--constraints", default="1000", callback=_csv_ints,
                 help="Constraint set size(s), comma separated."),
    click.option("--beam", default=10, type=int),
    click.option("--batch", default=1, type=int),
    click.option("--trials", default=20, type=int),
    click.option("--warmup", default=3, type=int),
    click.option("--seed", default=0, type=int),
    click.option("--mode", default="uniform", type=click.Choice(["uniform", "clustered"]),
                 help="Constraint generation mode."),
    click.option("--out", default=None, type=click.Path(), help="Report output path."),
    click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"])),
]


def _with_shared(f):
    for opt in reversed(shared):
        f = opt(f)
    return f


def _spec_from(vocab, sid_len, dense_depth, constraints, beam, batch, trials,
               warmup, seed, mode, methods=None, timing="isolated") -> SweepSpec:
    kwargs = dict(
        vocab_sizes=vocab, constraint_counts=constraints, sid_length=sid_len,
        dense_depth=dense_depth, beam_width=beam, batch_size=batch,
        trials=trials, warmup=warmup, seed=seed, mode=mode, timing=timing,
    )
    if methods is not None:
        kwargs["methods"] = methods
    return SweepSpec(**kwargs)


def _emit(report: BenchReport, out: str | None, fmt: str, plot_fn=None) -> None:
    text = report.to_json() if fmt == "json" else report.to_csv()
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        click.echo(f"wrote {out}")
        if plot_fn is not None:
            png = out.rsplit(".", 1)[0] + ".png"
            plot_fn(report, png)
            click.echo(f"wrote {png}")
    else:
        click.echo(text)


def _config_guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, ConstraintError, ValueError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)


@click.group()
def main():
    """Constrained decoding over flattened identifier tries."""


@main.command("build-index")
@_with_shared
@click.option("--index", "index_path", required=True, type=click.Path(),
              help="Destination for the binary index.")
def build_index_cmd(vocab, sid_len, dense_depth, constraints, beam, batch,
                    trials, warmup, seed, mode, out, fmt, index_path):
    """Generate a constraint set, build the index, and save it."""
    if len(vocab) != 1 or len(constraints) != 1:
        click.echo("configuration error: build-index takes exactly one --vocab "
                   "and one --constraints value", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    config = DecoderConfig(vocab_size=vocab[0], sid_length=sid_len,
                           dense_depth=dense_depth, beam_width=beam, batch_size=batch)

    def run():
        cs = gen_constraints(seed, constraints[0], config, mode=mode)
        return build_index(cs, config)

    index = _config_guard(run)
    save(index, index_path)
    click.echo(f"wrote {index_path} ({actual_footprint(index)} bytes, "
               f"{index.total_states} states, {index.edges.shape[0]} edges)")


@main.command("bench-latency")
@_with_shared
@click.option("--methods", default="static,cpu_trie,ppv_exact,ppv_approx,hash_bitmap",
              callback=_csv_strs)
@click.option("--timing", default="isolated", type=click.Choice(["isolated", "e2e"]))
@click.option("--plot/--no-plot", default=True)
def bench_latency_cmd(vocab, sid_len, dense_depth, constraints, beam, batch, trials,
                      warmup, seed, mode, out, fmt, methods, timing, plot):
    """Per-step masking latency sweep over (method, vocab, |C|) cells."""
    spec = _config_guard(_spec_from, vocab, sid_len, dense_depth, constraints, beam,
                         batch, trials, warmup, seed, mode, methods, timing)
    report = _config_guard(bench_mod.run_latency_suite, spec)
    from .plots import plot_latency, plot_vocab_scaling
    plot_fn = None
    if plot:
        plot_fn = plot_vocab_scaling if len(vocab) > 1 and len(constraints) == 1 else plot_latency
    _emit(report, out, fmt, plot_fn)


@main.command("bench-branch")
@_with_shared
@click.option("--branch-factors", default="64,128,256,512,1024,2048,4096,8192,16384",
              callback=_csv_ints)
@click.option("--plot/--no-plot", default=True)
def bench_branch_cmd(vocab, sid_len, dense_depth, constraints, beam, batch, trials,
                     warmup, seed, mode, out, fmt, branch_factors, plot):
    """Sparse kernel latency as the maximum branch factor grows."""
    report = _config_guard(
        bench_mod.run_branch_suite, branch_factors, constraints[0],
        trials=trials, warmup=warmup, seed=seed, beam_width=beam, batch_size=batch,
    )
    from .plots import plot_branch
    _emit(report, out, fmt, plot_branch if plot else None)
    ok = [r for r in report.rows if r["status"] == "ok"]
    xs = [r["branch_factor"] for r in ok]
    ys = [r["mean_ms"] for r in ok]
    hi = [i for i, x in enumerate(xs) if x >= sorted(xs)[len(xs) // 2]]
    if len(hi) >= 2:
        slope = fit_loglog_slope([xs[i] for i in hi], [ys[i] for i in hi])
        click.echo(f"upper-half log-log slope: {slope:.3f}")


@main.command("check-compliance")
@_with_shared
@click.option("--methods", default="static,cpu_trie,ppv_exact,ppv_approx,hash_bitmap",
              callback=_csv_strs)
@click.option("--decodes", default=100, type=int)
def check_compliance_cmd(vocab, sid_len, dense_depth, constraints, beam, batch, trials,
                         warmup, seed, mode, out, fmt, methods, decodes):
    """Decode under each method and count membership violations."""
    spec = _config_guard(_spec_from, vocab, sid_len, dense_depth, constraints, beam,
                         batch, trials, warmup, seed, mode, methods)
    report = _config_guard(bench_mod.run_compliance_suite, spec, decodes=decodes)
    _emit(report, out, fmt)
    failed = False
    for row in report.rows:
        tag = "ok"
        if row["method"] in bench_mod.EXACT_METHODS and row["violations"]:
            tag = "FAIL"
            failed = True
        click.echo(f"{row['method']:>12} vocab={row['vocab']} |C|={row['constraints']}: "
                   f"{row['violations']}/{row['emitted']} violations [{tag}]")
    sys.exit(EXIT_CHECK_FAILED if failed else 0)


@main.command("check-memory")
@_with_shared
def check_memory_cmd(vocab, sid_len, dense_depth, constraints, beam, batch, trials,
                     warmup, seed, mode, out, fmt):
    """Verify built indices stay within the closed-form footprint bound."""
    spec = _config_guard(_spec_from, vocab, sid_len, dense_depth, constraints, beam,
                         batch, trials, warmup, seed, mode)
    report = _config_guard(bench_mod.run_memory_suite, spec)
    from .plots import plot_memory
    _emit(report, out, fmt, plot_memory)
    failed = False
    for row in report.rows:
        ok = bool(row["within_bound"])
        failed |= not ok
        click.echo(f"vocab={row['vocab']} |C|={row['constraints']}: "
                   f"{row['actual_bytes']} <= {row['layout_bound_bytes']} bytes "
                   f"[{'ok' if ok else 'FAIL'}]")
    sys.exit(EXIT_CHECK_FAILED if failed else 0)


@main.command("verify-oracle")
@_with_shared
@click.option("--index", "index_path", default=None, type=click.Path(exists=True),
              help="Use a saved index instead of generating one.")
@click.option("--cases", default=20, type=int, help="Seeded decode cases to compare.")
def verify_oracle_cmd(vocab, sid_len, dense_depth, constraints, beam, batch, trials,
                      warmup, seed, mode, out, fmt, index_path, cases):
    """Compare constrained decodes against the exhaustive enumeration oracle.

    Beam search equals the global top-M only when the beam is wide enough
    to never prune a surviving prefix; pass --beam >= the constraint count
    for an exact comparison.
    """
    if index_path is not None:
        index = load(index_path)
        config = index.config
        cs = None
    else:
        if len(vocab) != 1 or len(constraints) != 1:
            click.echo("configuration error: verify-oracle takes exactly one --vocab "
                       "and one --constraints value", err=True)
            sys.exit(EXIT_CONFIG_ERROR)
        config = DecoderConfig(vocab_size=vocab[0], sid_length=sid_len,
                               dense_depth=dense_depth, beam_width=beam, batch_size=batch)

        def build():
            c = gen_constraints(seed, constraints[0], config, mode=mode)
            return c, build_index(c, config)

        cs, index = _config_guard(build)
    if cs is None:
        cs = _constraints_from_index(index)
    if config.vocab_size**config.sid_length > 10**6:
        click.echo("configuration error: oracle verification needs "
                   "|V|^L <= 1e6", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    config = DecoderConfig(vocab_size=config.vocab_size, sid_length=config.sid_length,
                           dense_depth=config.dense_depth, beam_width=beam, batch_size=batch)
    mismatches = 0
    for i in range(cases):
        source = SeededRandomLogits(seed + 104729 * i, config.vocab_size)
        got = decode(source, index, config)
        want = exhaustive_topk(source, cs, config)
        if not _results_equal(got, want):
            mismatches += 1
    click.echo(f"{cases - mismatches}/{cases} cases match the exhaustive oracle")
    sys.exit(EXIT_CHECK_FAILED if mismatches else 0)


def _constraints_from_index(index) -> ConstraintSet:
    from .index import enumerate_sids
    return ConstraintSet.from_array(enumerate_sids(index), index.config)


def _results_equal(got, want, tol: float = 1e-9) -> bool:
    if not np.array_equal(got.valid_counts, want.valid_counts):
        return False
    for b in range(got.sids.shape[0]):
        k = int(got.valid_counts[b])
        a = sorted((round(float(-s), 9), tuple(map(int, sid)))
                   for s, sid in zip(got.scores[b, :k], got.sids[b, :k]))
        w = sorted((round(float(-s), 9), tuple(map(int, sid)))
                   for s, sid in zip(want.scores[b, :k], want.sids[b, :k]))
        if a != w:
            return False
        if not np.allclose(np.sort(got.scores[b, :k]), np.sort(want.scores[b, :k]),
                           rtol=0, atol=tol):
            return False
    return True


if __name__ == "__main__":
    main()
