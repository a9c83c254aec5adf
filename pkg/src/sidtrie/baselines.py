"""The four comparison maskers behind one prefix-driven interface:
a CPU pointer-trie walk, exact and approximate prefix verification over a
sorted flat SID array, and a hashed prefix bitmap.

All maskers take (rows, t) token prefixes for the current step and return
a (rows, |V|) boolean validity mask.  The two exact baselines are
bit-identical to the index kernels; the approximate one under-approximates
(subset) and the bitmap over-approximates (superset, no false negatives).
"""

from __future__ import annotations

import numpy as np

from .config import ConstraintSet, DecoderConfig
from .trie import PointerTrie, walk

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)


class CpuTrieMasker:
    """Per-beam pointer-chasing walk of the nested-dict trie."""

    def __init__(self, trie: PointerTrie):
        self.trie = trie
        self.vocab_size = trie.config.vocab_size

    def mask(self, prefixes: np.ndarray, step: int, log_probs=None) -> np.ndarray:
        out = np.zeros((prefixes.shape[0], self.vocab_size), dtype=bool)
        for r in range(prefixes.shape[0]):
            node = walk(self.trie, prefixes[r])
            if node:
                out[r, list(node.keys())] = True
        return out


class SortedSidArray:
    """All SIDs of C as fixed-width big-endian keys in one sorted array.

    Prefix membership is a range-nonemptiness test: two binary searches,
    one for the prefix padded with 0x00 and one padded with 0xFF.
    """

    def __init__(self, constraints: ConstraintSet):
        self.sid_length = constraints.config.sid_length
        self.vocab_size = constraints.config.vocab_size
        self.keys = constraints.keys()

    def _padded_keys(self, prefixes: np.ndarray, fill: int) -> np.ndarray:
        n, t = prefixes.shape
        buf = np.full((n, self.sid_length), fill, dtype=">u4")
        buf[:, :t] = prefixes.astype(">u4")
        return np.frombuffer(buf.tobytes(), dtype=f"S{4 * self.sid_length}")

    def prefix_exists(self, prefixes: np.ndarray) -> np.ndarray:
        """Vectorized: does any SID in C extend each given prefix."""
        prefixes = np.asarray(prefixes)
        if prefixes.ndim == 1:
            prefixes = prefixes[None, :]
        lo = np.searchsorted(self.keys, self._padded_keys(prefixes, 0), side="left")
        hi = np.searchsorted(self.keys, self._padded_keys(prefixes, 0xFFFFFFFF), side="right")
        return lo < hi


class PpvExactMasker:
    """Binary-search verification of every one of the |V| candidate extensions."""

    def __init__(self, array: SortedSidArray):
        self.array = array
        self.vocab_size = array.vocab_size

    def mask(self, prefixes: np.ndarray, step: int, log_probs=None) -> np.ndarray:
        n = prefixes.shape[0]
        V = self.vocab_size
        cand = np.empty((n, V, step + 1), dtype=np.uint32)
        cand[:, :, :step] = prefixes[:, None, :]
        cand[:, :, step] = np.arange(V, dtype=np.uint32)[None, :]
        return self.array.prefix_exists(cand.reshape(n * V, step + 1)).reshape(n, V)


class PpvApproxMasker:
    """Binary-search verification of only the top-k logits per step.

    Valid tokens ranked below k are masked out: the result is a subset of
    the exact mask, and a beam whose every top-k probe fails goes dead.
    """

    def __init__(self, array: SortedSidArray, k: int = 50):
        self.array = array
        self.vocab_size = array.vocab_size
        self.k = k

    def mask(self, prefixes: np.ndarray, step: int, log_probs: np.ndarray = None) -> np.ndarray:
        if log_probs is None:
            raise ValueError("the approximate verifier needs log_probs for top-k selection")
        n = prefixes.shape[0]
        V = self.vocab_size
        k = min(self.k, V)
        if k < V:
            top = np.argpartition(-log_probs, k - 1, axis=1)[:, :k]
        else:
            top = np.broadcast_to(np.arange(V), (n, V))
        cand = np.empty((n, k, step + 1), dtype=np.uint32)
        cand[:, :, :step] = prefixes[:, None, :]
        cand[:, :, step] = top
        exists = self.array.prefix_exists(cand.reshape(n * k, step + 1)).reshape(n, k)
        out = np.zeros((n, V), dtype=bool)
        np.put_along_axis(out, top, exists, axis=1)
        return out


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: a 64-bit avalanche over the input."""
    z = (x + _GOLDEN) & _U64(0xFFFFFFFFFFFFFFFF)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def _roll(state: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Fold one token column into the rolling prefix hash.

    Prefix length enters the hash implicitly through the number of folds,
    so (level, token sequence) pairs map to distinct states.
    """
    return _mix64(state ^ (tokens.astype(_U64) + _U64(1)))


class HashBitmap:
    """Bloom-filter style membership: every prefix of C sets one bit.

    No false negatives by construction; false positives at a rate set by
    the bitmap size (default: 8 bits per distinct prefix, rounded up to a
    power of two).
    """

    def __init__(self, constraints: ConstraintSet, n_bits: int | None = None):
        arr = constraints.array
        L = constraints.config.sid_length
        self.vocab_size = constraints.config.vocab_size
        if n_bits is None:
            # Distinct prefixes per level, counted off the lex-sorted rows.
            n_prefixes = 0
            diff = np.zeros(max(arr.shape[0] - 1, 0), dtype=bool)
            for lvl in range(L):
                if arr.shape[0] > 1:
                    diff |= arr[1:, lvl] != arr[:-1, lvl]
                n_prefixes += 1 + int(diff.sum())
            n_bits = 8 * n_prefixes
        self.n_bits = 1 << max(3, (n_bits - 1).bit_length())
        self._bit_mask = _U64(self.n_bits - 1)
        self.bits = np.zeros(self.n_bits // 8, dtype=np.uint8)
        state = np.full(arr.shape[0], _GOLDEN, dtype=_U64)
        for lvl in range(L):
            state = _roll(state, arr[:, lvl])
            self._set_bits(state & self._bit_mask)

    def _set_bits(self, idx: np.ndarray) -> None:
        byte = (idx >> _U64(3)).astype(np.int64)
        bit = (idx & _U64(7)).astype(np.uint8)
        np.bitwise_or.at(self.bits, byte, np.left_shift(np.uint8(1), bit))

    def _test_bits(self, idx: np.ndarray) -> np.ndarray:
        byte = (idx >> _U64(3)).astype(np.int64)
        bit = (idx & _U64(7)).astype(np.uint8)
        return (self.bits[byte] >> bit) & 1 != 0

    def prefix_state(self, prefixes: np.ndarray) -> np.ndarray:
        state = np.full(prefixes.shape[0], _GOLDEN, dtype=_U64)
        for t in range(prefixes.shape[1]):
            state = _roll(state, prefixes[:, t])
        return state

    def test_extension(self, prefixes: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        state = _roll(self.prefix_state(prefixes), tokens)
        return self._test_bits(state & self._bit_mask)


class HashBitmapMasker:
    def __init__(self, bitmap: HashBitmap):
        self.bitmap = bitmap
        self.vocab_size = bitmap.vocab_size

    def mask(self, prefixes: np.ndarray, step: int, log_probs=None) -> np.ndarray:
        bm = self.bitmap
        state = bm.prefix_state(prefixes)
        ext = _mix64(state[:, None] ^ (np.arange(self.vocab_size, dtype=_U64) + _U64(1)))
        return bm._test_bits(ext & bm._bit_mask)


def measure_fp_rate(bitmap: HashBitmap, constraints: ConstraintSet,
                    samples: int = 20000, seed: int = 0) -> float:
    """False-positive rate over random (valid prefix, random token) probes
    that the exact verifier rejects."""
    rng = np.random.Generator(np.random.PCG64(seed))
    arr = constraints.array
    L = constraints.config.sid_length
    sorted_arr = SortedSidArray(constraints)
    rows = rng.integers(0, arr.shape[0], size=samples)
    lengths = rng.integers(0, L, size=samples)
    tokens = rng.integers(0, constraints.config.vocab_size, size=samples).astype(np.uint32)
    fp = 0
    negatives = 0
    for t in range(L):
        sel = lengths == t
        if not sel.any():
            continue
        prefixes = arr[rows[sel], :t]
        cand = np.concatenate([prefixes, tokens[sel, None]], axis=1)
        exact = sorted_arr.prefix_exists(cand)
        approx = bitmap.test_extension(prefixes, tokens[sel])
        negatives += int((~exact).sum())
        fp += int((approx & ~exact).sum())
    return fp / negatives if negatives else 0.0
