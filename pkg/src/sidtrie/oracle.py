"""Brute-force ground truth used to validate every fast path.

Nothing here shares code with the index or kernel modules: the constraint
indicator is a direct scan of the constraint set, and the reference top-M
ranking enumerates sequences outright.
"""

from __future__ import annotations

import numpy as np

from .config import ConstraintSet, DecoderConfig

ENUMERATION_GUARD = 10**6


def f_t(prefix, token: int, constraints: ConstraintSet) -> bool:
    """True iff some SID in C starts with (prefix, token).  Linear scan."""
    prefix = tuple(int(t) for t in prefix)
    t = len(prefix)
    if t + 1 > constraints.config.sid_length:
        raise ValueError("prefix plus token exceeds sid_length")
    probe = prefix + (int(token),)
    for row in constraints.array:
        if tuple(int(x) for x in row[: t + 1]) == probe:
            return True
    return False


def valid_token_mask(prefix, constraints: ConstraintSet) -> np.ndarray:
    """The (|V|,) boolean row of f_t over all candidate tokens."""
    arr = constraints.array
    t = len(prefix)
    sel = np.ones(arr.shape[0], dtype=bool)
    for i, tok in enumerate(int(x) for x in prefix):
        sel &= arr[:, i] == tok
    mask = np.zeros(constraints.config.vocab_size, dtype=bool)
    mask[arr[sel, t]] = True
    return mask


def _log_softmax_row(row: np.ndarray) -> np.ndarray:
    x = np.asarray(row, dtype=np.float64)
    m = x.max()
    z = x - m
    return z - np.log(np.exp(z).sum())


def exhaustive_topk(source, constraints: ConstraintSet, config: DecoderConfig):
    """True top-M over all sequences in C by summed per-step log-softmax.

    Tie-break: score descending, then token sequence lexicographically
    ascending.  Guarded to small instances (|V|^L <= 1e6).
    """
    from .decoder import DecodeResult  # local import to avoid a cycle

    V, L, M = config.vocab_size, config.sid_length, config.beam_width
    if V**L > ENUMERATION_GUARD:
        raise ValueError(f"|V|^L = {V**L} exceeds the enumeration guard {ENUMERATION_GUARD}")

    n = constraints.size
    sids = np.zeros((config.batch_size, M, L), dtype=np.uint32)
    scores = np.full((config.batch_size, M), config.neg_inf, dtype=np.float64)
    valid_counts = np.zeros(config.batch_size, dtype=np.int64)
    for b in range(config.batch_size):
        # Walk C in sorted order, reusing log-prob rows for shared prefixes.
        row_cache: list[np.ndarray] = []
        prev: tuple[int, ...] = ()
        totals = np.zeros(n, dtype=np.float64)
        for i, sid in enumerate(constraints.array):
            sid_t = tuple(int(x) for x in sid)
            common = 0
            while common < len(prev) and prev[common] == sid_t[common]:
                common += 1
            del row_cache[common:]
            for t in range(common, L):
                row_cache.append(_log_softmax_row(source.row(b, sid_t[:t], t)))
            totals[i] = sum(row_cache[t][sid_t[t]] for t in range(L))
            prev = sid_t
        order = sorted(range(n), key=lambda i: (-totals[i], tuple(constraints.array[i])))
        keep = order[: min(M, n)]
        valid_counts[b] = len(keep)
        for m, i in enumerate(keep):
            sids[b, m] = constraints.array[i]
            scores[b, m] = totals[i]
    return DecodeResult(sids=sids, scores=scores, valid_counts=valid_counts)
