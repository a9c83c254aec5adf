"""Figure rendering for benchmark reports.

Each report command can render a PNG next to its delimited output; these
helpers take the already-computed report rows so plotting never re-runs a
benchmark.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchReport, fit_loglog_slope


def _ok(rows):
    return [r for r in rows if r.get("status") == "ok"]


def plot_latency(report: BenchReport, path: str) -> str:
    """Mean per-step latency vs |C|, one line per method, split by vocab."""
    rows = _ok(report.rows)
    vocabs = sorted({r["vocab"] for r in rows})
    fig, axes = plt.subplots(1, max(len(vocabs), 1), figsize=(5.5 * max(len(vocabs), 1), 4.2),
                             squeeze=False)
    for ax, vocab in zip(axes[0], vocabs):
        sub = [r for r in rows if r["vocab"] == vocab]
        for method in sorted({r["method"] for r in sub}):
            pts = sorted((r["constraints"], r["mean_ms"], r["std_ms"])
                         for r in sub if r["method"] == method)
            xs = np.array([p[0] for p in pts], dtype=float)
            ys = np.array([p[1] for p in pts])
            es = np.array([p[2] for p in pts])
            ax.plot(xs, ys, marker="o", label=method)
            ax.fill_between(xs, np.maximum(ys - es, 1e-9), ys + es, alpha=0.2)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("constraint set size")
        ax.set_ylabel("mean per-step mask latency (ms)")
        ax.set_title(f"|V| = {vocab}")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_vocab_scaling(report: BenchReport, path: str) -> str:
    """Mean per-step latency vs |V| at fixed |C|, one line per method."""
    rows = _ok(report.rows)
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for method in sorted({r["method"] for r in rows}):
        pts = sorted((r["vocab"], r["mean_ms"]) for r in rows if r["method"] == method)
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        label = method
        if len(xs) >= 2:
            label = f"{method} (slope {fit_loglog_slope(xs, ys):.2f})"
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("vocabulary size")
    ax.set_ylabel("mean per-step mask latency (ms)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_branch(report: BenchReport, path: str) -> str:
    """Sparse kernel latency vs branch factor with the fitted log-log slope."""
    rows = _ok(report.rows)
    pts = sorted((r["branch_factor"], r["mean_ms"], r["std_ms"]) for r in rows)
    xs = np.array([p[0] for p in pts], dtype=float)
    ys = np.array([p[1] for p in pts])
    es = np.array([p[2] for p in pts])
    fig, ax = plt.subplots(figsize=(6, 4.2))
    ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label="measured")
    if len(xs) >= 2:
        hi = xs >= np.median(xs)
        slope = fit_loglog_slope(xs[hi], ys[hi])
        # Anchor the reference line at the first upper-half point.
        x0, y0 = xs[hi][0], ys[hi][0]
        ax.plot(xs[hi], y0 * (xs[hi] / x0) ** slope, "--",
                label=f"upper-half fit, slope {slope:.2f}")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("max branch factor")
    ax.set_ylabel("kernel latency (ms)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_memory(report: BenchReport, path: str) -> str:
    """Actual index bytes against the closed-form bounds."""
    rows = _ok(report.rows)
    pts = sorted((r["constraints"], r["actual_bytes"], r["layout_bound_bytes"],
                  r["upper_bound_bytes"]) for r in rows)
    xs = [p[0] for p in pts]
    fig, ax = plt.subplots(figsize=(6, 4.2))
    ax.plot(xs, [p[1] for p in pts], marker="o", label="actual")
    ax.plot(xs, [p[2] for p in pts], marker="s", label="layout bound")
    ax.plot(xs, [p[3] for p in pts], marker="^", label="model bound")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("constraint set size")
    ax.set_ylabel("bytes")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
