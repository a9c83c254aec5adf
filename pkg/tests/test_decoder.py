import numpy as np
import pytest

from sidtrie import (
    ConstraintSet,
    DecoderConfig,
    UniformLogits,
    build_index,
    decode,
    decode_step,
    reference_unconstrained_decode,
)
from sidtrie.config import BeamState, ROOT_SENTINEL
from sidtrie.decoder import BiasedLogits, NGramLogitSource, SeededRandomLogits, _select_top
from sidtrie.kernel import log_softmax
from sidtrie.bench import gen_constraints

from conftest import canonical, example_config, example_constraints


def test_example_uniform_logits_returns_all_three_paths():
    cfg = example_config(beam_width=3)
    idx = build_index(example_constraints(cfg), cfg)
    result = decode(UniformLogits(3), idx, cfg)
    assert result.valid_counts[0] == 3
    assert [tuple(map(int, s)) for s in result.sids[0]] == [(0, 1, 0), (2, 0, 1), (2, 0, 2)]
    # Uniform logits: all paths share the same score.
    assert np.allclose(result.scores[0], result.scores[0, 0])


def test_forced_single_sid_path():
    cfg = DecoderConfig(vocab_size=6, sid_length=4, dense_depth=1, beam_width=1)
    sid = (3, 0, 5, 2)
    cs = ConstraintSet.from_sids([sid], cfg)
    idx = build_index(cs, cfg)
    src = SeededRandomLogits(11, 6)
    result = decode(src, idx, cfg)
    assert tuple(map(int, result.sids[0, 0])) == sid
    want = sum(log_softmax(src.row(0, sid[:t], t))[sid[t]] for t in range(4))
    assert abs(result.scores[0, 0] - want) < 1e-12


def test_bias_steers_first_token():
    cfg = example_config(beam_width=3)
    idx = build_index(example_constraints(cfg), cfg)
    src = BiasedLogits(UniformLogits(3), step=0, token=2, bias=10.0)
    result = decode(src, idx, cfg)
    assert result.sids[0, 0, 0] == 2


def test_unconstrained_equivalence_when_constraints_cover_everything():
    cfg = DecoderConfig(vocab_size=4, sid_length=3, dense_depth=1, beam_width=5, batch_size=2)
    full = np.array(np.meshgrid(*[range(4)] * 3, indexing="ij")).reshape(3, -1).T
    cs = ConstraintSet.from_array(full, cfg)
    idx = build_index(cs, cfg)
    for seed in range(20):
        src = SeededRandomLogits(seed, 4)
        a = decode(src, idx, cfg)
        b = reference_unconstrained_decode(src, cfg)
        assert np.array_equal(a.sids, b.sids)
        assert np.abs(a.scores - b.scores).max() < 1e-9


def test_fewer_valid_sequences_than_beams():
    cfg = DecoderConfig(vocab_size=5, sid_length=3, dense_depth=1, beam_width=5)
    cs = ConstraintSet.from_sids([(0, 1, 2), (4, 4, 4)], cfg)
    idx = build_index(cs, cfg)
    result = decode(SeededRandomLogits(3, 5), idx, cfg)
    assert result.valid_counts[0] == 2
    assert (result.scores[0, 2:] == cfg.neg_inf).all()
    assert (result.sids[0, 2:] == 0).all()


def test_compliance_and_monotone_scores():
    for seed in range(5):
        cfg = DecoderConfig(vocab_size=16, sid_length=4, dense_depth=2,
                            beam_width=8, batch_size=2)
        cs = gen_constraints(seed, 100, cfg)
        idx = build_index(cs, cfg)
        root = ROOT_SENTINEL
        state = BeamState.initial(cfg, root_node=root)
        src = NGramLogitSource(seed, 16)
        prev = state.scores.copy()
        for step in range(4):
            state = decode_step(state, src.logits(state.tokens, step), idx, cfg)
            # log-probs are <= 0, so the best cumulative score cannot rise.
            assert (state.scores.max(axis=1) <= prev.max(axis=1) + 1e-12).all()
            prev = state.scores.copy()
        live = state.nodes != 0
        assert cs.contains(state.tokens[live]).all()


def test_determinism():
    cfg = DecoderConfig(vocab_size=12, sid_length=4, dense_depth=1, beam_width=6, batch_size=3)
    cs = gen_constraints(7, 80, cfg)
    idx = build_index(cs, cfg)
    a = decode(SeededRandomLogits(9, 12), idx, cfg)
    b = decode(SeededRandomLogits(9, 12), idx, cfg)
    assert a.sids.tobytes() == b.sids.tobytes()
    assert a.scores.tobytes() == b.scores.tobytes()
    assert np.array_equal(a.valid_counts, b.valid_counts)


def test_scores_sorted_non_increasing():
    cfg = DecoderConfig(vocab_size=10, sid_length=3, dense_depth=1, beam_width=7, batch_size=2)
    cs = gen_constraints(1, 50, cfg)
    idx = build_index(cs, cfg)
    result = decode(SeededRandomLogits(2, 10), idx, cfg)
    assert (np.diff(result.scores, axis=1) <= 1e-12).all()


def test_select_top_tie_break():
    cand = np.array([[[1.0, 1.0], [1.0, 2.0]]])  # (batch, beam, token)
    scores, idx = _select_top(cand, 3)
    # Winner is (beam 1, token 1); ties decided by beam then token index.
    assert idx[0].tolist() == [3, 0, 1]
    assert scores[0].tolist() == [2.0, 1.0, 1.0]


def test_decode_step_shape_checks():
    cfg = example_config()
    idx = build_index(example_constraints(cfg), cfg)
    state = BeamState.initial(cfg, root_node=idx.root_state)
    with pytest.raises(ValueError):
        decode_step(state, np.zeros((1, 3, 4)), idx, cfg)
    state = BeamState(tokens=np.zeros((1, 3, 3), dtype=np.uint32),
                      scores=np.zeros((1, 3)), nodes=np.zeros((1, 3), dtype=np.uint32),
                      step=3)
    with pytest.raises(ValueError):
        decode_step(state, np.zeros((1, 3, 3)), idx, cfg)


def test_logit_sources_are_deterministic_and_beam_independent():
    for src in (SeededRandomLogits(4, 8), NGramLogitSource(4, 8)):
        a = src.row(0, (1, 2), 2)
        b = src.row(0, (1, 2), 2)
        assert np.array_equal(a, b)
        tokens = np.tile(np.array([1, 2], dtype=np.uint32), (2, 3, 1))
        block = src.logits(tokens, 2)
        assert np.array_equal(block[0, 0], block[0, 2])
        assert np.array_equal(block[0, 0], src.row(0, (1, 2), 2))
