"""Offline index construction: flatten a prefix trie into bit-packed dense
masks for the first ``dense_depth`` levels plus a stacked CSR transition
matrix for the deeper levels.

State numbering (deterministic):
  * state 0 is the sink (no outgoing edges; dead beams live here),
  * level-1 states are IDs 1..|V| in token order, so the state reached by
    first token v is v + 1 (invalid first tokens keep their ID but are
    masked and never entered),
  * valid states at levels 2..L are numbered contiguously, level by level,
    within a level in lexicographic prefix order,
  * when dense_depth == 0 an explicit root state is appended last so that
    step 0 is served by the CSR path like any other sparse step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ConstraintSet, DecoderConfig, MAX_STATES, validate_config
from .trie import PointerTrie, iter_sids

DEFAULT_DENSE_BUDGET = 1 << 30  # bytes; refuse dense tables past this


class StateOverflowError(OverflowError):
    """Total state count does not fit 32-bit IDs."""


class DenseBudgetError(MemoryError):
    """The dense-mask tables for the requested dense_depth exceed the cap."""


@dataclass
class TransitionIndex:
    """The flattened, immutable constraint index.

    Fields mirror the on-disk layout: bit-packed dense masks and next-state
    tables for levels <= dense_depth, then row pointers and a stacked
    (token, next_state) edge array for the sparse levels.
    """

    config: DecoderConfig
    start_mask: np.ndarray                 # packed uint8, ceil(V/8) bytes (empty when d == 0)
    dense_masks: dict[int, np.ndarray]     # k -> (rows_{k-1}, ceil(V/8)) packed uint8
    dense_states: dict[int, np.ndarray]    # k -> (rows_{k-1}, V) uint32
    row_pointers: np.ndarray               # (total_states + 1,) int64
    edges: np.ndarray                      # (n_edges, 2) uint32, [:, 0]=token, [:, 1]=next_state
    branch_factors: np.ndarray             # (L,) uint32, level 0 = root
    level_counts: np.ndarray               # (L,) int64, distinct l-prefix counts
    total_states: int
    root_state: int | None                 # explicit root ID when dense_depth == 0

    # Derived caches (not serialized, rebuilt on load).
    level_offsets: np.ndarray = field(default=None, repr=False)
    start_states: np.ndarray = field(default=None, repr=False)   # (V,) uint32
    dense_valid: dict[int, np.ndarray] = field(default=None, repr=False)
    _edges_padded: np.ndarray = field(default=None, repr=False)
    edge_reads: int = field(default=0, repr=False)
    count_edge_reads: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        if self.level_offsets is None:
            self._rebuild_caches()

    def _rebuild_caches(self) -> None:
        cfg = self.config
        V, L = cfg.vocab_size, cfg.sid_length
        offs = np.zeros(L + 2, dtype=np.int64)
        offs[1] = 1
        if L >= 2:
            offs[2] = 1 + V
            for lvl in range(2, L + 1):
                offs[lvl + 1] = offs[lvl] + self.level_counts[lvl - 1]
        self.level_offsets = offs
        if cfg.dense_depth >= 1:
            start_bits = np.unpackbits(self.start_mask, count=V).astype(bool)
            self.start_states = np.where(start_bits, np.arange(1, V + 1), 0).astype(np.uint32)
        else:
            self.start_states = np.zeros(0, dtype=np.uint32)
        self.dense_valid = {k: tbl != 0 for k, tbl in self.dense_states.items()}

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def max_sparse_branch(self) -> int:
        d = self.config.dense_depth
        return int(self.branch_factors[d:].max())

    def gather_edges(self, starts: np.ndarray, width: int, mode: str = "clamp"):
        """Fixed-width speculative slice of the stacked edge array.

        Reads exactly ``width`` entries per row regardless of actual child
        counts.  Out-of-range positions yield the fill pair
        (token = |V|, state = 0).  ``mode='padded'`` gathers from a
        sentinel-padded copy of the edge array instead of clamping; both
        modes return identical results.
        """
        starts = np.asarray(starts, dtype=np.int64)
        if self.count_edge_reads:
            self.edge_reads += int(starts.shape[0]) * width
        pos = starts[:, None] + np.arange(width, dtype=np.int64)[None, :]
        if mode == "clamp":
            over = pos >= self.n_edges
            pairs = self.edges[np.minimum(pos, self.n_edges - 1)]
            tokens = pairs[..., 0].copy()
            states = pairs[..., 1].copy()
            tokens[over] = self.config.vocab_size
            states[over] = 0
            return tokens, states
        if mode == "padded":
            if self._edges_padded is None:
                pad = np.empty((self.max_sparse_branch(), 2), dtype=np.uint32)
                pad[:, 0] = self.config.vocab_size
                pad[:, 1] = 0
                self._edges_padded = np.concatenate([self.edges, pad], axis=0)
            pairs = self._edges_padded[pos]
            return pairs[..., 0], pairs[..., 1]
        raise ValueError(f"unknown gather mode {mode!r}")

    def state_of_prefix(self, prefix) -> int:
        """Map a token prefix to its state ID (0 if the prefix is not in C)."""
        from .config import ROOT_SENTINEL
        cfg = self.config
        node = self.root_state if cfg.dense_depth == 0 else int(ROOT_SENTINEL)
        for t, tok in enumerate(int(x) for x in prefix):
            if t == 0 and cfg.dense_depth >= 1:
                node = int(self.start_states[tok])
            elif t < cfg.dense_depth:
                row = node - int(self.level_offsets[t])
                node = int(self.dense_states[t + 1][row, tok])
            else:
                lo, hi = int(self.row_pointers[node]), int(self.row_pointers[node + 1])
                row_tok = self.edges[lo:hi, 0]
                j = int(np.searchsorted(row_tok, tok))
                node = int(self.edges[lo + j, 1]) if j < len(row_tok) and row_tok[j] == tok else 0
            if node == 0:
                return 0
        return node


def pack_mask(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean matrix row-wise, MSB first, rows padded to whole bytes."""
    return np.packbits(bits.astype(np.uint8), axis=-1)


def build_index(
    constraints: ConstraintSet,
    config: DecoderConfig,
    dense_budget: int = DEFAULT_DENSE_BUDGET,
) -> TransitionIndex:
    """Construct the TransitionIndex directly from a constraint set.

    This is the vectorized production path; ``flatten`` wraps it for
    PointerTrie inputs and the two are cross-checked in the test suite.
    """
    validate_config(config)
    if constraints.config.vocab_size != config.vocab_size or \
            constraints.config.sid_length != config.sid_length:
        raise ValueError("constraint set was built for a different config")
    return _build_from_sorted(constraints.array, config, dense_budget)


def flatten(
    trie: PointerTrie,
    config: DecoderConfig,
    dense_budget: int = DEFAULT_DENSE_BUDGET,
) -> TransitionIndex:
    """Flatten a pointer trie into the hybrid dense + stacked-CSR index."""
    sids = np.array(list(iter_sids(trie)), dtype=np.uint32)
    return _build_from_sorted(sids, config, dense_budget)


def _build_from_sorted(arr: np.ndarray, config: DecoderConfig, dense_budget: int) -> TransitionIndex:
    V, L, d = config.vocab_size, config.sid_length, config.dense_depth
    n = arr.shape[0]
    if n == 0:
        raise ValueError("cannot build an index from an empty constraint set")

    # Rank every row's l-prefix among the distinct l-prefixes (lex order).
    ranks: list[np.ndarray] = []
    firsts: list[np.ndarray] = []
    counts = np.zeros(L, dtype=np.int64)
    prev_rank = None
    for lvl in range(L):
        col = arr[:, lvl]
        if lvl == 0:
            new = np.r_[True, col[1:] != col[:-1]]
        else:
            new = np.r_[True, (prev_rank[1:] != prev_rank[:-1]) | (col[1:] != col[:-1])]
        rank = np.cumsum(new) - 1
        ranks.append(rank)
        firsts.append(np.flatnonzero(new))
        counts[lvl] = rank[-1] + 1
        prev_rank = rank

    total_states = 1 + V + int(counts[1:].sum()) + (1 if d == 0 else 0)
    if total_states > MAX_STATES - 1:
        raise StateOverflowError(
            f"{total_states} states exceed the 32-bit ID space"
        )

    # State ID of each row's l-prefix, l = 1..L.
    offsets = np.zeros(L + 2, dtype=np.int64)
    offsets[1] = 1
    if L >= 2:
        offsets[2] = 1 + V
        for lvl in range(2, L + 1):
            offsets[lvl + 1] = offsets[lvl] + counts[lvl - 1]
    state_of: list[np.ndarray] = []
    for lvl in range(L):
        if lvl == 0:
            state_of.append(arr[:, 0].astype(np.int64) + 1)
        else:
            state_of.append(offsets[lvl + 1] + ranks[lvl])

    # Dense tables for levels 2..d (level 1 is the start mask).
    start_mask = np.zeros(0, dtype=np.uint8)
    dense_masks: dict[int, np.ndarray] = {}
    dense_states: dict[int, np.ndarray] = {}
    if d >= 1:
        bits = np.zeros(V, dtype=bool)
        bits[arr[firsts[0], 0]] = True
        start_mask = pack_mask(bits)
    dense_bytes = start_mask.nbytes
    for k in range(2, d + 1):
        rows = V if k == 2 else int(counts[k - 2])
        dense_bytes += rows * ((V + 7) // 8) + rows * V * 4
        if dense_bytes > dense_budget:
            raise DenseBudgetError(
                f"dense tables for dense_depth={d} need more than {dense_budget} bytes"
            )
        idx = firsts[k - 1]
        row_idx = state_of[k - 2][idx] - offsets[k - 1]
        tok = arr[idx, k - 1]
        child = state_of[k - 1][idx]
        table = np.zeros((rows, V), dtype=np.uint32)
        table[row_idx, tok] = child
        dense_states[k] = table
        dense_masks[k] = pack_mask(table != 0)

    # Stacked CSR edges for levels d..L-1 (parents), sorted by parent state
    # then token.  Parent IDs ascend with lex prefix order within a level
    # and level offsets ascend across levels, so per-level concatenation is
    # already globally sorted -- except the explicit root, appended last.
    parent_chunks: list[np.ndarray] = []
    token_chunks: list[np.ndarray] = []
    child_chunks: list[np.ndarray] = []
    if d == 0:
        root_state = total_states - 1
        idx = firsts[0]
        parent_chunks.append(np.full(len(idx), root_state, dtype=np.int64))
        token_chunks.append(arr[idx, 0].astype(np.uint32))
        child_chunks.append(state_of[0][idx].astype(np.uint32))
    else:
        root_state = None
    for lvl in range(max(d, 1), L):   # edges into level lvl+1
        idx = firsts[lvl]
        parent_chunks.append(state_of[lvl - 1][idx])
        token_chunks.append(arr[idx, lvl].astype(np.uint32))
        child_chunks.append(state_of[lvl][idx].astype(np.uint32))

    parents = np.concatenate(parent_chunks)
    edges = np.empty((len(parents), 2), dtype=np.uint32)
    edges[:, 0] = np.concatenate(token_chunks)
    edges[:, 1] = np.concatenate(child_chunks)
    if root_state is not None and len(parent_chunks) > 1:
        # Root edges were emitted first but the root ID is the largest;
        # restore CSR order with a stable sort on parent.
        order = np.argsort(parents, kind="stable")
        parents = parents[order]
        edges = edges[order]

    row_pointers = np.zeros(total_states + 1, dtype=np.int64)
    np.cumsum(np.bincount(parents, minlength=total_states), out=row_pointers[1:])

    # Max branch factors per level, level 0 = root.
    branch = np.zeros(L, dtype=np.uint32)
    branch[0] = counts[0]
    for lvl in range(1, L):
        branch[lvl] = np.bincount(ranks[lvl - 1][firsts[lvl]]).max()

    return TransitionIndex(
        config=config,
        start_mask=start_mask,
        dense_masks=dense_masks,
        dense_states=dense_states,
        row_pointers=row_pointers,
        edges=edges,
        branch_factors=branch,
        level_counts=counts,
        total_states=total_states,
        root_state=root_state,
    )


def enumerate_sids(index: TransitionIndex) -> np.ndarray:
    """Reconstruct the full constraint set from an index, in lex order.

    Level-by-level frontier expansion: dense levels expand through the
    next-state tables, sparse levels through the CSR rows.
    """
    cfg = index.config
    V, L, d = cfg.vocab_size, cfg.sid_length, cfg.dense_depth
    if d >= 1:
        states = index.start_states[index.start_states != 0].astype(np.int64)
        prefixes = (states - 1).astype(np.uint32)[:, None]
    else:
        states = np.array([index.root_state], dtype=np.int64)
        prefixes = np.zeros((1, 0), dtype=np.uint32)
    for lvl in range(1 if d >= 1 else 0, L):
        if lvl < d:
            rows = states - index.level_offsets[lvl]
            table = index.dense_states[lvl + 1][rows]          # (n, V)
            parent_idx, tok = np.nonzero(table)
            child = table[parent_idx, tok].astype(np.int64)
        else:
            lo = index.row_pointers[states]
            hi = index.row_pointers[states + 1]
            widths = (hi - lo).astype(np.int64)
            parent_idx = np.repeat(np.arange(len(states)), widths)
            pos = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]) \
                if len(states) else np.zeros(0, dtype=np.int64)
            tok = index.edges[pos, 0].astype(np.int64)
            child = index.edges[pos, 1].astype(np.int64)
        prefixes = np.concatenate(
            [prefixes[parent_idx], tok.astype(np.uint32)[:, None]], axis=1)
        states = child
    return prefixes


def memory_upper_bound(
    K1: int,
    K2: int,
    config: DecoderConfig,
    constraint_count: int,
) -> int:
    """Closed-form storage upper bound in bytes.

    Dense term: (1/8 + K2) * |V|^d, the bit mask plus K2 bytes per dense
    state.  Sparse term: K1 bytes for every potential node at levels
    d+1..L, of which there are at most min(|V|^l, |C|) per level.
    Exact integer arithmetic (the 1/8 rounds up).
    """
    if K1 <= 0 or K2 <= 0:
        raise ValueError("K1 and K2 must be positive")
    V, L, d = config.vocab_size, config.sid_length, config.dense_depth
    dense = (V**d + 7) // 8 + K2 * V**d
    sparse = K1 * sum(min(V**lvl, constraint_count) for lvl in range(d + 1, L + 1))
    return dense + sparse


# Layout constants matching this implementation, for the footprint-vs-bound
# property.  Each sparse node costs 8 bytes of stacked edge payload plus its
# 8-byte u64 row-pointer entry (the paper's K1=12 convention assumes a u32
# pointer bundled in).  K2 covers, per potential dense state: the 4-byte
# next-state entry, the mask bits of every dense level, and worst-case u64
# row pointers for all states at levels <= d.
LAYOUT_K1 = 16
LAYOUT_K2 = 25


def footprint_bound(config: DecoderConfig, constraint_count: int) -> int:
    """Upper bound on actual_footprint for this layout.

    memory_upper_bound with the layout constants, plus the row-pointer
    bytes of the always-allocated level-1 block (IDs 1..|V| exist even for
    invalid first tokens), the sink, the optional root, and the final
    pointer entry.
    """
    return memory_upper_bound(LAYOUT_K1, LAYOUT_K2, config, constraint_count) + \
        8 * (config.vocab_size + 3)


def actual_footprint(index: TransitionIndex) -> int:
    """Bytes held by the serializable index arrays (derived caches excluded)."""
    total = index.start_mask.nbytes
    for k in index.dense_masks:
        total += index.dense_masks[k].nbytes + index.dense_states[k].nbytes
    total += index.row_pointers.shape[0] * 8
    total += index.edges.nbytes
    return total
