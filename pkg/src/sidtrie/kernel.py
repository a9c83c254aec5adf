"""Per-step masking engine: log-softmax, dense lookups for the early
levels, the branch-free vectorized node-transition kernel for the deep
levels, and mask application.

All kernels operate on flattened (batch * beam) rows and are pure
functions of the immutable index, so they are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DecoderConfig
from .index import TransitionIndex


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over the last axis, max-subtracted for stability."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("logits must be finite")
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class MaskResult:
    """Dense validity mask over next tokens plus speculative next states.

    ``mask`` is (rows, |V|) boolean.  Next states are kept in the cheapest
    exact form per step kind and resolved per winner via
    ``resolve_states``; ``next_state_table`` materializes the full
    (rows, |V|) table when a caller wants it.
    """

    mask: np.ndarray
    kind: str                      # "dense" | "sparse"
    index: TransitionIndex
    step: int
    # dense steps
    table_rows: np.ndarray | None = None       # (rows,) row indices into the level table
    alive: np.ndarray | None = None
    # sparse steps: fixed-width speculative slices
    slice_tokens: np.ndarray | None = None     # (rows, B_t), sentinel |V| on invalid slots
    slice_states: np.ndarray | None = None     # (rows, B_t), 0 on invalid slots
    slice_valid: np.ndarray | None = None      # (rows, B_t) bool

    def resolve_states(self, rows: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        """Next-state IDs for chosen (row, token) pairs; 0 where invalid."""
        rows = np.asarray(rows)
        tokens = np.asarray(tokens)
        if self.kind == "dense":
            if self.step == 0:
                out = self.index.start_states[tokens]
            else:
                table = self.index.dense_states[self.step + 1]
                out = table[self.table_rows[rows], tokens]
            return np.where(self.alive[rows], out, 0).astype(np.uint32)
        hit = self.slice_tokens[rows] == tokens[:, None]
        return np.where(hit, self.slice_states[rows], 0).max(axis=1).astype(np.uint32)

    def next_state_table(self) -> np.ndarray:
        """Full (rows, |V|) next-state table (0 where invalid)."""
        V = self.index.config.vocab_size
        n = self.mask.shape[0]
        if self.kind == "dense":
            if self.step == 0:
                table = np.broadcast_to(self.index.start_states, (n, V)).copy()
            else:
                table = self.index.dense_states[self.step + 1][self.table_rows].copy()
            table[~self.alive] = 0
            return table
        buf = np.zeros((n, V + 1), dtype=np.uint32)
        np.put_along_axis(buf, self.slice_tokens.astype(np.intp), self.slice_states, axis=1)
        return buf[:, :V]


def dense_lookup(nodes: np.ndarray, index: TransitionIndex, step: int) -> MaskResult:
    """Constant-time mask lookup for steps below dense_depth.

    Step 0 reads the level-1 start mask (next state of token v is v + 1);
    step k >= 1 reads row (node - level offset) of the level-(k+1) tables.
    Dead beams (node 0) yield all-false masks.
    """
    cfg = index.config
    if step >= cfg.dense_depth:
        raise ValueError(f"dense_lookup called at step {step} >= dense_depth {cfg.dense_depth}")
    nodes = np.asarray(nodes)
    n = nodes.shape[0]
    alive = nodes != 0
    all_alive = bool(alive.all())
    if step == 0:
        valid = index.start_states != 0
        rows = None
        if all_alive:
            mask = np.broadcast_to(valid, (n, cfg.vocab_size))
        else:
            # Fill only live rows; dead rows stay all-false.
            mask = np.zeros((n, cfg.vocab_size), dtype=bool)
            mask[alive] = valid
    else:
        offset = index.level_offsets[step]
        rows = np.where(alive, nodes.astype(np.int64) - offset, 0)
        mask = index.dense_valid[step + 1][rows]
        if not all_alive:
            mask = mask & alive[:, None]
    return MaskResult(mask=mask, kind="dense", index=index, step=step,
                      table_rows=rows, alive=alive)


def vntk(nodes: np.ndarray, index: TransitionIndex, step: int, mode: str = "clamp") -> MaskResult:
    """Vectorized node-transition kernel for steps at or past dense_depth.

    Every beam executes the same fixed-size operations: a row-pointer pair
    lookup, a speculative fixed-width edge slice of branch_factors[step]
    entries, branch-free sanitization of over-read slots, and a scatter of
    the surviving tokens into a dense vocabulary mask.  The sink (node 0)
    has an empty row and falls out with an all-false mask.
    """
    cfg = index.config
    if not cfg.dense_depth <= step < cfg.sid_length:
        raise ValueError(f"vntk called at step {step} outside [{cfg.dense_depth}, {cfg.sid_length})")
    nodes = np.asarray(nodes, dtype=np.int64)
    width = int(index.branch_factors[step])

    starts = index.row_pointers[nodes]
    n_child = index.row_pointers[nodes + 1] - starts

    tokens, states = index.gather_edges(starts, width, mode=mode)

    slot = np.arange(width, dtype=np.int64)[None, :]
    valid = slot < n_child[:, None]
    tokens = np.where(valid, tokens, cfg.vocab_size)
    states = np.where(valid, states, 0).astype(np.uint32)

    # Scatter into a (V+1)-wide buffer; the sentinel column is dropped.
    buf = np.zeros((nodes.shape[0], cfg.vocab_size + 1), dtype=bool)
    np.put_along_axis(buf, tokens.astype(np.intp), valid, axis=1)
    return MaskResult(mask=buf[:, :cfg.vocab_size], kind="sparse", index=index, step=step,
                      slice_tokens=tokens, slice_states=states, slice_valid=valid)


def step_mask(nodes: np.ndarray, index: TransitionIndex, step: int) -> MaskResult:
    """Dispatch to the dense or sparse lookup for a decode step."""
    if step < index.config.dense_depth:
        return dense_lookup(nodes, index, step)
    return vntk(nodes, index, step)


def apply_mask(log_probs: np.ndarray, mask: np.ndarray, neg_inf: float) -> np.ndarray:
    """Keep log-probs where the mask is true, neg_inf elsewhere.

    No renormalization is performed after masking.
    """
    if log_probs.shape != mask.shape:
        raise ValueError(f"shape mismatch: {log_probs.shape} vs {mask.shape}")
    return np.where(mask, log_probs, neg_inf)
