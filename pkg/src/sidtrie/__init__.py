"""Constrained beam-search decoding over flattened identifier tries.

Build a :class:`TransitionIndex` from a :class:`ConstraintSet`, then call
:func:`decode` with any :class:`LogitSource`; every emitted identifier is a
member of the constraint set.
"""

from .config import (
    BeamState,
    ConfigError,
    ConstraintError,
    ConstraintSet,
    DecoderConfig,
    DEFAULT_NEG_INF,
    ROOT_SENTINEL,
    validate_config,
)
from .decoder import (
    DecodeResult,
    LogitSource,
    NGramLogitSource,
    SeededRandomLogits,
    UniformLogits,
    decode,
    decode_step,
    decode_with_masker,
    reference_unconstrained_decode,
)
from .index import (
    TransitionIndex,
    actual_footprint,
    build_index,
    enumerate_sids,
    flatten,
    footprint_bound,
    memory_upper_bound,
)
from .kernel import MaskResult, apply_mask, dense_lookup, log_softmax, step_mask, vntk
from .serialize import deserialize, load, save, serialize
from .trie import PointerTrie, build_pointer_trie

__all__ = [
    "BeamState",
    "ConfigError",
    "ConstraintError",
    "ConstraintSet",
    "DecodeResult",
    "DecoderConfig",
    "DEFAULT_NEG_INF",
    "LogitSource",
    "MaskResult",
    "NGramLogitSource",
    "PointerTrie",
    "ROOT_SENTINEL",
    "SeededRandomLogits",
    "TransitionIndex",
    "UniformLogits",
    "actual_footprint",
    "apply_mask",
    "build_index",
    "build_pointer_trie",
    "decode",
    "decode_step",
    "decode_with_masker",
    "dense_lookup",
    "deserialize",
    "enumerate_sids",
    "flatten",
    "footprint_bound",
    "load",
    "log_softmax",
    "memory_upper_bound",
    "reference_unconstrained_decode",
    "save",
    "serialize",
    "step_mask",
    "validate_config",
    "vntk",
]

__version__ = "0.1.0"
