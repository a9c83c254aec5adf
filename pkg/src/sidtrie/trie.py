"""Pointer trie over a constraint set.

This is the classic nested-dict prefix tree: each node maps a token index
to its child node.  It serves two purposes: it is the reference structure
the flattened index is checked against, and it is the data structure behind
the CPU-walk baseline masker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConstraintSet, DecoderConfig

# Shared immutable leaf; every level-L node has no children.
_LEAF: dict = {}

TrieNode = dict


@dataclass
class PointerTrie:
    root: TrieNode
    level_counts: list[int]   # number of distinct length-l prefixes, l = 1..L
    config: DecoderConfig


def build_pointer_trie(constraints: ConstraintSet, config: DecoderConfig) -> PointerTrie:
    """Build the nested-dict trie, level by level from the sorted SID array.

    Building from the sorted array (instead of per-SID insertion) keeps the
    node count exact and lets all leaves share one empty dict.
    """
    arr = constraints.array
    if arr.shape[1] != config.sid_length:
        raise ValueError("constraint set does not match config sid_length")
    n, L = arr.shape

    root: TrieNode = {}
    # nodes_at[l] holds, for each distinct l-prefix in lex order, its dict.
    level_counts: list[int] = []
    prev_nodes: list[TrieNode] = [root]
    prev_rank = np.zeros(n, dtype=np.int64)
    for lvl in range(L):
        col = arr[:, lvl]
        if lvl == 0:
            new = np.r_[True, col[1:] != col[:-1]]
        else:
            new = np.r_[True, (prev_rank[1:] != prev_rank[:-1]) | (col[1:] != col[:-1])]
        firsts = np.flatnonzero(new)
        rank = np.cumsum(new) - 1
        level_counts.append(len(firsts))
        last_level = lvl == L - 1
        nodes: list[TrieNode] = []
        for i in firsts:
            child: TrieNode = _LEAF if last_level else {}
            prev_nodes[prev_rank[i]][int(col[i])] = child
            nodes.append(child)
        prev_nodes = nodes
        prev_rank = rank
    return PointerTrie(root=root, level_counts=level_counts, config=config)


def max_branch_factors(trie: PointerTrie) -> np.ndarray:
    """Level-indexed max child counts, length L (level 0 is the root)."""
    L = trie.config.sid_length
    out = np.zeros(L, dtype=np.uint32)
    frontier = [trie.root]
    for lvl in range(L):
        out[lvl] = max(len(node) for node in frontier)
        if lvl < L - 1:
            frontier = [child for node in frontier for child in node.values()]
    return out


def walk(trie: PointerTrie, prefix) -> TrieNode | None:
    """Follow a token prefix from the root; None if the path leaves the trie."""
    node = trie.root
    for tok in prefix:
        node = node.get(int(tok))
        if node is None:
            return None
    return node


def iter_sids(trie: PointerTrie):
    """Yield all root-to-leaf paths in lexicographic order."""

    def rec(node: TrieNode, prefix: tuple[int, ...], depth: int):
        if depth == trie.config.sid_length:
            yield prefix
            return
        for tok in sorted(node):
            yield from rec(node[tok], prefix + (tok,), depth + 1)

    yield from rec(trie.root, (), 0)
