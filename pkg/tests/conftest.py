import numpy as np
import pytest

from sidtrie import ConstraintSet, DecoderConfig, build_index
from sidtrie.bench import gen_constraints

# The three-SID worked example used throughout: tokens stored 0-based, so
# label k is token index k-1.
EXAMPLE_SIDS = [(0, 1, 0), (2, 0, 1), (2, 0, 2)]
EXAMPLE_VOCAB = 3


def example_config(dense_depth: int = 0, beam_width: int = 3, batch_size: int = 1) -> DecoderConfig:
    return DecoderConfig(vocab_size=EXAMPLE_VOCAB, sid_length=3, dense_depth=dense_depth,
                         beam_width=beam_width, batch_size=batch_size)


def example_constraints(config: DecoderConfig) -> ConstraintSet:
    return ConstraintSet.from_sids(EXAMPLE_SIDS, config)


@pytest.fixture
def example_index():
    config = example_config()
    return build_index(example_constraints(config), config)


def random_case(seed: int, vocab: int, length: int, count: int, dense_depth: int,
                beam_width: int = 4, batch_size: int = 1):
    """Seeded (config, constraints, index) triple for property tests."""
    config = DecoderConfig(vocab_size=vocab, sid_length=length, dense_depth=dense_depth,
                           beam_width=beam_width, batch_size=batch_size)
    constraints = gen_constraints(seed, min(count, vocab**length), config)
    return config, constraints, build_index(constraints, config)


def canonical(result, batch_row: int):
    """Order-independent (score, sid) tuples for a batch row's live beams."""
    k = int(result.valid_counts[batch_row])
    return sorted(
        (round(float(-s), 9), tuple(int(t) for t in sid))
        for s, sid in zip(result.scores[batch_row, :k], result.sids[batch_row, :k])
    )


def all_prefixes(constraints, length: int):
    """Distinct prefixes of each level 0..length-1, lex order per level."""
    out = {}
    arr = constraints.array
    for lvl in range(length):
        out[lvl] = [tuple(int(t) for t in row) for row in np.unique(arr[:, :lvl], axis=0)]
    return out
