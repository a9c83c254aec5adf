"""Binary index format.

Little-endian layout:

    magic "STMT"        4 bytes
    format version      u16
    vocab_size          u32
    sid_length          u16
    dense_depth         u16
    total_states        u64
    total_edges         u64
    level_counts        L x u64
    branch_factors      L x u32
    start_mask          ceil(V/8) bytes        (only when dense_depth >= 1)
    for k = 2..dense_depth:
        dense_masks[k]  rows_k x ceil(V/8) bytes
        dense_states[k] rows_k x V x u32, row-major
    row_pointers        (total_states + 1) x u64
    edges               total_edges x (u32 token, u32 next_state)
    crc32               u32 over all preceding bytes
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np

from .config import DecoderConfig
from .index import TransitionIndex

MAGIC = b"STMT"
FORMAT_VERSION = 1


class IndexFormatError(ValueError):
    """Base class for malformed index streams."""


class BadMagicError(IndexFormatError):
    pass


class VersionMismatchError(IndexFormatError):
    pass


class TruncatedStreamError(IndexFormatError):
    pass


class ChecksumError(IndexFormatError):
    pass


def serialize(index: TransitionIndex) -> bytes:
    cfg = index.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack("<IHH", cfg.vocab_size, cfg.sid_length, cfg.dense_depth))
    buf.write(struct.pack("<QQ", index.total_states, index.n_edges))
    buf.write(index.level_counts.astype("<u8").tobytes())
    buf.write(index.branch_factors.astype("<u4").tobytes())
    buf.write(index.start_mask.tobytes())
    for k in range(2, cfg.dense_depth + 1):
        buf.write(index.dense_masks[k].tobytes())
        buf.write(index.dense_states[k].astype("<u4").tobytes())
    buf.write(index.row_pointers.astype("<u8").tobytes())
    buf.write(np.ascontiguousarray(index.edges, dtype="<u4").tobytes())
    payload = buf.getvalue()
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStreamError(
                f"stream ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype: str, count: int, shape=None) -> np.ndarray:
        dt = np.dtype(dtype)
        arr = np.frombuffer(self.take(dt.itemsize * count), dtype=dt)
        return arr.reshape(shape) if shape is not None else arr


def deserialize(data: bytes, neg_inf: float | None = None) -> TransitionIndex:
    """Parse a serialized index.  Raises a distinct error per failure class."""
    if len(data) < 4:
        raise TruncatedStreamError("stream shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < 4 + 4:
        raise TruncatedStreamError("stream ends inside the header")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumError("CRC32 mismatch")

    r = _Reader(data[:-4])
    r.take(4)  # magic
    (version,) = struct.unpack("<H", r.take(2))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    vocab, sid_len, dense_depth = struct.unpack("<IHH", r.take(8))
    total_states, total_edges = struct.unpack("<QQ", r.take(16))
    level_counts = r.array("<u8", sid_len).astype(np.int64)
    branch_factors = r.array("<u4", sid_len).astype(np.uint32)

    kwargs = {"neg_inf": neg_inf} if neg_inf is not None else {}
    cfg = DecoderConfig(vocab_size=vocab, sid_length=sid_len, dense_depth=dense_depth, **kwargs)

    mask_row_bytes = (vocab + 7) // 8
    start_mask = (
        r.array("<u1", mask_row_bytes).astype(np.uint8)
        if dense_depth >= 1 else np.zeros(0, dtype=np.uint8)
    )
    dense_masks: dict[int, np.ndarray] = {}
    dense_states: dict[int, np.ndarray] = {}
    for k in range(2, dense_depth + 1):
        rows = vocab if k == 2 else int(level_counts[k - 2])
        dense_masks[k] = r.array("<u1", rows * mask_row_bytes, (rows, mask_row_bytes)).astype(np.uint8)
        dense_states[k] = r.array("<u4", rows * vocab, (rows, vocab)).astype(np.uint32)

    row_pointers = r.array("<u8", total_states + 1).astype(np.int64)
    edges = r.array("<u4", total_edges * 2, (total_edges, 2)).astype(np.uint32)
    if r.pos != len(r.data):
        raise TruncatedStreamError(f"{len(r.data) - r.pos} unexpected trailing bytes")

    return TransitionIndex(
        config=cfg,
        start_mask=start_mask,
        dense_masks=dense_masks,
        dense_states=dense_states,
        row_pointers=row_pointers,
        edges=edges,
        branch_factors=branch_factors,
        level_counts=level_counts,
        total_states=int(total_states),
        root_state=int(total_states) - 1 if dense_depth == 0 else None,
    )


def save(index: TransitionIndex, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(index))


def load(path: str, neg_inf: float | None = None) -> TransitionIndex:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), neg_inf=neg_inf)
