"""Constrained beam-search decoding over a TransitionIndex, plus the
unconstrained reference loop and a prefix-driven loop for baseline maskers.

Per step: log-softmax, constraint masking (dense lookup below dense_depth,
the vectorized transition kernel at or past it), top-M selection over all
(beam, token) candidates, then a gather of token buffers, scores, and node
IDs by the winner indices.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .config import BeamState, DecoderConfig, ROOT_SENTINEL
from .index import TransitionIndex
from .kernel import apply_mask, log_softmax, step_mask


@dataclass
class DecodeResult:
    """Top-M decoded SIDs per batch row, scores sorted non-increasing.

    Slots past ``valid_counts[b]`` are dead: score neg_inf, SID zeroed.
    """

    sids: np.ndarray          # (batch, M, L) uint32
    scores: np.ndarray        # (batch, M) float64
    valid_counts: np.ndarray  # (batch,) int64


class LogitSource:
    """Abstract per-step scorer standing in for the generative model.

    ``row`` must be deterministic in (batch_row, prefix, step) and must not
    depend on beam index; the batched ``logits`` view is derived from it.
    """

    vocab_size: int

    def row(self, batch_row: int, prefix: tuple[int, ...], step: int) -> np.ndarray:
        raise NotImplementedError

    def logits(self, tokens: np.ndarray, step: int) -> np.ndarray:
        b, m, _ = tokens.shape
        out = np.empty((b, m, self.vocab_size), dtype=np.float64)
        for i in range(b):
            for j in range(m):
                out[i, j] = self.row(i, tuple(int(t) for t in tokens[i, j]), step)
        return out


class SeededRandomLogits(LogitSource):
    """Gaussian logits keyed by (seed, batch_row, prefix, step)."""

    def __init__(self, seed: int, vocab_size: int, scale: float = 4.0):
        self.seed = seed
        self.vocab_size = vocab_size
        self.scale = scale

    def row(self, batch_row: int, prefix: tuple[int, ...], step: int) -> np.ndarray:
        key = struct.pack("<qqq", self.seed, batch_row, step)
        key += struct.pack(f"<{len(prefix)}q", *prefix) if prefix else b""
        digest = hashlib.blake2b(key, digest_size=8).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
        return rng.standard_normal(self.vocab_size) * self.scale


class NGramLogitSource(LogitSource):
    """Table-driven bigram scorer: the logit row depends only on the last
    decoded token (row 0 serves the empty prefix), shifted per batch row."""

    def __init__(self, seed: int, vocab_size: int, scale: float = 4.0):
        self.seed = seed
        self.vocab_size = vocab_size
        rng = np.random.Generator(np.random.PCG64(seed))
        self.table = rng.standard_normal((vocab_size + 1, vocab_size)) * scale

    def _context(self, last_plus_one: np.ndarray | int, batch_row: np.ndarray | int):
        return (last_plus_one + 8191 * batch_row) % (self.vocab_size + 1)

    def row(self, batch_row: int, prefix: tuple[int, ...], step: int) -> np.ndarray:
        last = prefix[-1] + 1 if prefix else 0
        return self.table[self._context(last, batch_row)]

    def logits(self, tokens: np.ndarray, step: int) -> np.ndarray:
        b, m, t = tokens.shape
        last = tokens[:, :, -1].astype(np.int64) + 1 if t else np.zeros((b, m), dtype=np.int64)
        ctx = self._context(last, np.arange(b, dtype=np.int64)[:, None])
        return self.table[ctx]


class UniformLogits(LogitSource):
    """All-zero logits; every token ties."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def row(self, batch_row: int, prefix: tuple[int, ...], step: int) -> np.ndarray:
        return np.zeros(self.vocab_size)

    def logits(self, tokens: np.ndarray, step: int) -> np.ndarray:
        b, m, _ = tokens.shape
        return np.zeros((b, m, self.vocab_size))


class BiasedLogits(LogitSource):
    """Wrap a source, adding a fixed bias to one token at one step."""

    def __init__(self, base: LogitSource, step: int, token: int, bias: float):
        self.base = base
        self.vocab_size = base.vocab_size
        self.bias_step = step
        self.token = token
        self.bias = bias

    def row(self, batch_row: int, prefix: tuple[int, ...], step: int) -> np.ndarray:
        out = np.array(self.base.row(batch_row, prefix, step), dtype=np.float64, copy=True)
        if step == self.bias_step:
            out[self.token] += self.bias
        return out


def _select_top(cand: np.ndarray, M: int):
    """Top-M per batch row over flattened (beam, token) candidates.

    Tie-break is total: score descending, then beam index ascending, then
    token index ascending (stable sort over the flat index).
    """
    b = cand.shape[0]
    flat = cand.reshape(b, -1)
    order = np.argsort(-flat, axis=1, kind="stable")[:, :M]
    return np.take_along_axis(flat, order, axis=1), order


def decode_step(
    state: BeamState,
    logits: np.ndarray,
    index: TransitionIndex,
    config: DecoderConfig,
) -> BeamState:
    """One constrained decode step: project, mask, select, update."""
    B, M = state.scores.shape
    V = config.vocab_size
    if state.step >= config.sid_length:
        raise ValueError(f"decode_step past sid_length ({state.step})")
    if logits.shape != (B, M, V):
        raise ValueError(f"logits shape {logits.shape} != {(B, M, V)}")

    log_probs = log_softmax(logits)
    flat_nodes = state.nodes.reshape(-1)
    result = step_mask(flat_nodes, index, state.step)
    masked = apply_mask(log_probs.reshape(B * M, V), result.mask, config.neg_inf).reshape(B, M, V)

    cand = state.scores[:, :, None] + masked
    top_scores, top_idx = _select_top(cand, M)
    win_beam = top_idx // V
    win_token = (top_idx % V).astype(np.uint32)

    dead = top_scores <= config.neg_inf
    new_scores = np.where(dead, config.neg_inf, top_scores)

    flat_rows = (np.arange(B)[:, None] * M + win_beam).reshape(-1)
    next_nodes = result.resolve_states(flat_rows, win_token.reshape(-1)).reshape(B, M)
    next_nodes = np.where(dead, 0, next_nodes).astype(np.uint32)
    win_token = np.where(dead, 0, win_token)

    prev_tokens = np.take_along_axis(state.tokens, win_beam[:, :, None], axis=1)
    new_tokens = np.concatenate([prev_tokens, win_token[:, :, None]], axis=2)

    return BeamState(tokens=new_tokens, scores=new_scores, nodes=next_nodes,
                     step=state.step + 1)


def decode(source: LogitSource, index: TransitionIndex, config: DecoderConfig) -> DecodeResult:
    """Full L-step constrained decode; every returned SID is a member of C."""
    root = index.root_state if config.dense_depth == 0 else ROOT_SENTINEL
    state = BeamState.initial(config, root_node=root)
    for step in range(config.sid_length):
        logits = source.logits(state.tokens, step)
        state = decode_step(state, logits, index, config)
    valid = (state.nodes != 0).sum(axis=1).astype(np.int64)
    sids = state.tokens.copy()
    sids[state.nodes == 0] = 0
    return DecodeResult(sids=sids, scores=state.scores, valid_counts=valid)


def reference_unconstrained_decode(source: LogitSource, config: DecoderConfig) -> DecodeResult:
    """The same loop with the masking phase removed."""
    return _decode_prefix_driven(source, config, masker=None)


def decode_with_masker(source: LogitSource, config: DecoderConfig, masker) -> DecodeResult:
    """Beam search driven by a prefix-based masker (the baseline interface).

    ``masker.mask(prefixes, step, log_probs)`` returns a (rows, |V|)
    boolean validity mask.
    """
    return _decode_prefix_driven(source, config, masker=masker)


def _decode_prefix_driven(source: LogitSource, config: DecoderConfig, masker) -> DecodeResult:
    B, M, V, L = config.batch_size, config.beam_width, config.vocab_size, config.sid_length
    scores = np.full((B, M), config.neg_inf, dtype=np.float64)
    scores[:, 0] = 0.0
    tokens = np.zeros((B, M, 0), dtype=np.uint32)
    for step in range(L):
        log_probs = log_softmax(source.logits(tokens, step))
        if masker is not None:
            flat = log_probs.reshape(B * M, V)
            mask = masker.mask(tokens.reshape(B * M, step), step, log_probs=flat)
            log_probs = apply_mask(flat, mask, config.neg_inf).reshape(B, M, V)
        cand = scores[:, :, None] + log_probs
        top_scores, top_idx = _select_top(cand, M)
        win_beam = top_idx // V
        win_token = (top_idx % V).astype(np.uint32)
        dead = top_scores <= config.neg_inf
        scores = np.where(dead, config.neg_inf, top_scores)
        win_token = np.where(dead, 0, win_token)
        prev = np.take_along_axis(tokens, win_beam[:, :, None], axis=1)
        tokens = np.concatenate([prev, win_token[:, :, None]], axis=2)
    live = scores > config.neg_inf
    sids = tokens.copy()
    sids[~live] = 0
    return DecodeResult(sids=sids, scores=scores, valid_counts=live.sum(axis=1).astype(np.int64))
