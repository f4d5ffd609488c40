"""Binary message format for node summaries.

Every node ships one message per experiment round. Layout, all
little-endian:

    offset  size  field
    0       4     magic "KAG1"
    4       2     format version, currently 1
    6       4     node id (u32)
    10      4     node row count n_i (u32)
    14      4     feature count p (u32)
    18      1     W mode: 0 binary-median, 1 fixed16, 2 raw32
    19      .     chi bits, one per feature, +1 -> 1, MSB first,
                  zero-padded to a byte boundary (ceil(p/8) bytes)
    ...     .     W block, mode dependent:
                    binary-median: one bit per feature, packed as above
                    fixed16:       u16 per feature, round(rank/p * 65535)
                    raw32:         IEEE float32 per feature

Quantization happens when a NodeSummary is built from NodeStatistics, not
during byte serialization, so serialize/decode is an exact inverse pair on
valid summaries. binary-median thresholds W at its midpoint median;
fixed16 stores average ranks (ties keep equal codes), which preserves the
W ordering; raw32 stores W rounded to float32.

Files hold one or more messages, each prefixed by a u32 byte length.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, MessageLengthError, ProtocolError
from .knockoff import NodeStatistics

MAGIC = b"KAG1"
VERSION = 1
HEADER = struct.Struct("<4sHIIIB")

MODE_BINARY = "binary-median"
MODE_FIXED16 = "fixed16"
MODE_RAW32 = "raw32"
MODES = (MODE_BINARY, MODE_FIXED16, MODE_RAW32)
_MODE_CODE = {MODE_BINARY: 0, MODE_FIXED16: 1, MODE_RAW32: 2}
_CODE_MODE = {v: k for k, v in _MODE_CODE.items()}

_U32_MAX = 2**32 - 1


@dataclass
class NodeSummary:
    """A node's message in decoded form; w is already quantized per mode."""

    node_id: int
    n_rows: int
    mode: str
    chi: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if not 0 <= self.node_id <= _U32_MAX:
            raise InvalidInputError(f"node_id out of u32 range: {self.node_id}")
        if not 1 <= self.n_rows <= _U32_MAX:
            raise InvalidInputError(f"n_rows out of range: {self.n_rows}")
        self.chi = np.asarray(self.chi, dtype=np.int8)
        self.w = np.asarray(self.w, dtype=np.float64)
        p = self.w.shape[0]
        if self.chi.ndim != 1 or self.w.ndim != 1 or self.chi.shape[0] != p or p == 0:
            raise InvalidInputError("chi and w must be 1-D, equal length, nonempty")
        if not np.all(np.abs(self.chi) == 1):
            raise InvalidInputError("chi entries must be +1 or -1")
        if not np.all(np.isfinite(self.w)) or self.w.min() < 0.0:
            raise InvalidInputError("w entries must be finite and nonnegative")
        if self.mode == MODE_BINARY and not np.all((self.w == 0.0) | (self.w == 1.0)):
            raise InvalidInputError("binary-median w entries must be 0 or 1")
        if self.mode == MODE_FIXED16 and self.w.max() > 1.0:
            raise InvalidInputError("fixed16 w entries must lie in [0, 1]")

    @property
    def p(self) -> int:
        return self.w.shape[0]


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..p with ties sharing their average rank."""
    p = values.shape[0]
    order = np.argsort(values, kind="stable")
    ranks = np.empty(p)
    ranks[order] = np.arange(1, p + 1, dtype=np.float64)
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=ranks)
    return (sums / counts)[inverse]


def summarize(stats: NodeStatistics, mode: str, node_id: int) -> NodeSummary:
    """Quantize node statistics into the message payload for a mode."""
    if mode not in MODES:
        raise InvalidInputError(f"unknown mode {mode!r}")
    W = stats.W
    if mode == MODE_BINARY:
        w = (W > np.median(W)).astype(np.float64)
    elif mode == MODE_FIXED16:
        codes = np.round(_average_ranks(W) / stats.p * 65535.0)
        w = codes / 65535.0
    else:
        w = np.float32(W).astype(np.float64)
    return NodeSummary(node_id=node_id, n_rows=stats.n_rows, mode=mode,
                       chi=stats.chi.copy(), w=w)


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="big").tobytes()


def serialize_summary(summary: NodeSummary) -> bytes:
    """Byte-exact message for a summary."""
    p = summary.p
    parts = [
        HEADER.pack(MAGIC, VERSION, summary.node_id, summary.n_rows, p,
                    _MODE_CODE[summary.mode]),
        _pack_bits(summary.chi == 1),
    ]
    if summary.mode == MODE_BINARY:
        parts.append(_pack_bits(summary.w == 1.0))
    elif summary.mode == MODE_FIXED16:
        codes = np.round(summary.w * 65535.0).astype("<u2")
        parts.append(codes.tobytes())
    else:
        parts.append(np.float32(summary.w).astype("<f4").tobytes())
    return b"".join(parts)


def encode_summary(stats: NodeStatistics, mode: str, node_id: int) -> bytes:
    """Quantize and serialize in one step."""
    return serialize_summary(summarize(stats, mode, node_id))


def message_bits(p: int, mode: str) -> int:
    """Exact message size in bits for p features in a mode."""
    if mode not in MODES:
        raise InvalidInputError(f"unknown mode {mode!r}")
    if p < 1:
        raise InvalidInputError(f"p must be positive, got {p}")
    chi_bits = 8 * math.ceil(p / 8)
    w_bits = {MODE_BINARY: chi_bits, MODE_FIXED16: 16 * p, MODE_RAW32: 32 * p}[mode]
    return HEADER.size * 8 + chi_bits + w_bits


def decode_summary(buf: bytes) -> NodeSummary:
    """Parse one message; raises ProtocolError/MessageLengthError on bad input."""
    if len(buf) < HEADER.size:
        raise MessageLengthError(f"message shorter than header: {len(buf)} bytes")
    magic, version, node_id, n_rows, p, mode_code = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if mode_code not in _CODE_MODE:
        raise ProtocolError(f"unknown mode byte {mode_code}")
    mode = _CODE_MODE[mode_code]
    if p < 1:
        raise ProtocolError("feature count must be positive")
    if n_rows < 1:
        raise ProtocolError("row count must be positive")
    expected = message_bits(p, mode) // 8
    if len(buf) != expected:
        raise MessageLengthError(f"message is {len(buf)} bytes, expected {expected}")
    chi_bytes = math.ceil(p / 8)
    off = HEADER.size
    chi_bits = np.unpackbits(np.frombuffer(buf, np.uint8, chi_bytes, off),
                             count=p, bitorder="big")
    chi = (chi_bits.astype(np.int8) * 2) - 1
    off += chi_bytes
    if mode == MODE_BINARY:
        w_bits = np.unpackbits(np.frombuffer(buf, np.uint8, chi_bytes, off),
                               count=p, bitorder="big")
        w = w_bits.astype(np.float64)
    elif mode == MODE_FIXED16:
        codes = np.frombuffer(buf, "<u2", p, off)
        w = codes.astype(np.float64) / 65535.0
    else:
        vals = np.frombuffer(buf, "<f4", p, off)
        if not np.all(np.isfinite(vals)) or (vals < 0).any():
            raise ProtocolError("raw32 W entries must be finite and nonnegative")
        w = vals.astype(np.float64)
    return NodeSummary(node_id=node_id, n_rows=n_rows, mode=mode, chi=chi, w=w)


def write_summary_file(path, summaries) -> None:
    """Write messages with u32 length prefixes; one file holds any number."""
    blob = bytearray()
    for s in summaries:
        msg = serialize_summary(s)
        blob += struct.pack("<I", len(msg))
        blob += msg
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def split_messages(blob: bytes) -> list[bytes]:
    """Split a length-prefixed stream into raw messages."""
    out = []
    off = 0
    total = len(blob)
    while off < total:
        if off + 4 > total:
            raise MessageLengthError("truncated length prefix")
        (length,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + length > total:
            raise MessageLengthError(
                f"record claims {length} bytes but only {total - off} remain"
            )
        out.append(blob[off : off + length])
        off += length
    return out


def read_summary_file(path) -> list[NodeSummary]:
    """Read and decode every message in a length-prefixed file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return [decode_summary(msg) for msg in split_messages(blob)]
