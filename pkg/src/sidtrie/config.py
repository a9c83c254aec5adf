"""Core domain types shared by every module: decoder configuration,
Semantic ID collections, and per-decode beam state."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Log-probability sentinel for masked tokens.  A large finite negative is
# used instead of IEEE -inf so score arithmetic never produces NaN.
DEFAULT_NEG_INF = -1.0e10

# Node value carried by live beams before the first token is decoded when
# no explicit root state exists in the index (dense_depth >= 1).  Must not
# collide with a real state ID; construction caps state IDs below 2**32 - 1.
ROOT_SENTINEL = np.uint32(0xFFFFFFFF)

MAX_STATES = 2**32 - 1


class ConfigError(ValueError):
    """A DecoderConfig invariant does not hold."""


class ConstraintError(ValueError):
    """A constraint set or Semantic ID is malformed for its config."""


# A Semantic ID is a fixed-length tuple of token indices in [0, vocab_size).
SemanticId = tuple[int, ...]


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    sid_length: int
    dense_depth: int = 0
    beam_width: int = 1
    batch_size: int = 1
    neg_inf: float = DEFAULT_NEG_INF

    def validate(self) -> None:
        validate_config(self)


def validate_config(config: DecoderConfig) -> None:
    """Raise ConfigError naming the first violated invariant."""
    if config.vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {config.vocab_size}")
    if config.sid_length < 1:
        raise ConfigError(f"sid_length must be >= 1, got {config.sid_length}")
    if not 0 <= config.dense_depth < config.sid_length:
        raise ConfigError(
            f"dense_depth must satisfy 0 <= dense_depth < sid_length, "
            f"got dense_depth={config.dense_depth} with sid_length={config.sid_length}"
        )
    if config.beam_width < 1:
        raise ConfigError(f"beam_width must be >= 1, got {config.beam_width}")
    if config.batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {config.batch_size}")
    if not np.isfinite(config.neg_inf) or config.neg_inf > DEFAULT_NEG_INF:
        raise ConfigError(
            f"neg_inf must be finite and <= {DEFAULT_NEG_INF}, got {config.neg_inf}"
        )


def check_sid(tokens: Sequence[int], config: DecoderConfig) -> SemanticId:
    """Validate a single Semantic ID against the config and return it as a tuple."""
    tup = tuple(int(t) for t in tokens)
    if len(tup) != config.sid_length:
        raise ConstraintError(
            f"SID length {len(tup)} != sid_length {config.sid_length}"
        )
    for t in tup:
        if not 0 <= t < config.vocab_size:
            raise ConstraintError(f"token {t} out of range [0, {config.vocab_size})")
    return tup


def encode_keys(arr: np.ndarray) -> np.ndarray:
    """Encode an (n, t) token array as fixed-width big-endian byte keys.

    Big-endian per-token encoding preserves lexicographic order, so the
    resulting ``S``-dtype array sorts the same way as the token rows.
    """
    arr = np.ascontiguousarray(arr, dtype=">u4")
    n, t = arr.shape
    return np.frombuffer(arr.tobytes(), dtype=f"S{4 * t}")


class ConstraintSet:
    """Sorted, deduplicated collection of Semantic IDs (the restricted vocabulary).

    Storage is a (size, sid_length) uint32 array sorted lexicographically.
    Duplicate inputs are dropped silently; the count is kept in
    ``duplicates_dropped``.
    """

    def __init__(self, array: np.ndarray, config: DecoderConfig, duplicates_dropped: int = 0):
        self.array = array
        self.config = config
        self.duplicates_dropped = duplicates_dropped
        self._keys: np.ndarray | None = None

    @classmethod
    def from_array(cls, arr: np.ndarray, config: DecoderConfig) -> "ConstraintSet":
        validate_config(config)
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[1] != config.sid_length:
            raise ConstraintError(
                f"expected shape (n, {config.sid_length}), got {arr.shape}"
            )
        if arr.shape[0] == 0:
            raise ConstraintError("constraint set must contain at least one SID")
        if arr.min() < 0 or arr.max() >= config.vocab_size:
            bad = arr[(arr < 0) | (arr >= config.vocab_size)].flat[0]
            raise ConstraintError(f"token {bad} out of range [0, {config.vocab_size})")
        unique = np.unique(arr.astype(np.uint32), axis=0)
        return cls(unique, config, duplicates_dropped=arr.shape[0] - unique.shape[0])

    @classmethod
    def from_sids(cls, sids: Iterable[Sequence[int]], config: DecoderConfig) -> "ConstraintSet":
        rows = [check_sid(s, config) for s in sids]
        if not rows:
            raise ConstraintError("constraint set must contain at least one SID")
        return cls.from_array(np.array(rows, dtype=np.uint32), config)

    @property
    def size(self) -> int:
        return self.array.shape[0]

    @property
    def items(self) -> list[SemanticId]:
        return [tuple(int(t) for t in row) for row in self.array]

    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = encode_keys(self.array)
        return self._keys

    def contains(self, sids: np.ndarray) -> np.ndarray:
        """Vectorized membership test for an (m, sid_length) token array."""
        sids = np.asarray(sids, dtype=np.uint32)
        if sids.ndim == 1:
            sids = sids[None, :]
        probe = encode_keys(sids)
        keys = self.keys()
        pos = np.searchsorted(keys, probe)
        pos_c = np.minimum(pos, len(keys) - 1)
        return keys[pos_c] == probe

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConstraintSet) and np.array_equal(self.array, other.array)


@dataclass
class BeamState:
    """Per-(batch, beam) decode state: token prefixes, cumulative scores,
    and current trie-state IDs.

    Invariant: a beam whose score has hit neg_inf carries node 0 (the sink)
    and never revives.
    """

    tokens: np.ndarray   # (batch, beam, step) uint32
    scores: np.ndarray   # (batch, beam) float64
    nodes: np.ndarray    # (batch, beam) uint32
    step: int = 0

    @classmethod
    def initial(cls, config: DecoderConfig, root_node: int | np.uint32 = ROOT_SENTINEL) -> "BeamState":
        """One live beam per batch row; the rest start dead at the sink."""
        b, m = config.batch_size, config.beam_width
        scores = np.full((b, m), config.neg_inf, dtype=np.float64)
        scores[:, 0] = 0.0
        nodes = np.zeros((b, m), dtype=np.uint32)
        nodes[:, 0] = np.uint32(root_node)
        tokens = np.zeros((b, m, 0), dtype=np.uint32)
        return cls(tokens=tokens, scores=scores, nodes=nodes, step=0)


@dataclass
class LogitBlock:
    """Raw model scores for one decode step, shaped (batch, beam, vocab)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("logits must be finite")
