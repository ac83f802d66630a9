"""Canonical Huffman coding of low-precision code symbols.

Used only to *measure* message sizes; nominal accounting stays the default.
The encoded stream is self-describing given ``bits`` and ``dim``: a code-length
table followed by the payload. ``delta`` travels beside it as one 32-bit float.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .codec import LowPrecisionTensor, code_range

DELTA_BITS = 32
_WIDTH_FIELD = 5
_COUNT_FIELD = 16


def huffman_lengths(counts: dict) -> dict:
    """Code length per symbol. A lone symbol still costs one bit."""
    symbols = sorted(s for s, c in counts.items() if c > 0)
    if not symbols:
        return {}
    if len(symbols) == 1:
        return {symbols[0]: 1}
    # (weight, tie-break, symbols-in-subtree); tie-break keeps results stable
    heap = [(counts[s], i, [s]) for i, s in enumerate(symbols)]
    heapq.heapify(heap)
    lengths = dict.fromkeys(symbols, 0)
    tick = len(heap)
    while len(heap) > 1:
        w1, _, s1 = heapq.heappop(heap)
        w2, _, s2 = heapq.heappop(heap)
        for s in s1 + s2:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, tick, s1 + s2))
        tick += 1
    return lengths


def canonical_codes(lengths: dict) -> dict:
    """Assign canonical codewords: shorter first, then by symbol value."""
    code = 0
    prev_len = 0
    out = {}
    for sym, ln in sorted(lengths.items(), key=lambda kv: (kv[1], kv[0])):
        code <<= ln - prev_len
        out[sym] = (code, ln)
        code += 1
        prev_len = ln
    return out


def _table_bits(lengths: dict, bits: int) -> int:
    width = max(1, max(lengths.values()).bit_length())
    dense = (1 << bits) * width
    sparse = _COUNT_FIELD + len(lengths) * (bits + width)
    return 1 + _WIDTH_FIELD + min(dense, sparse)


def _counts(codes) -> dict:
    values, counts = np.unique(np.asarray(codes, dtype=np.int64), return_counts=True)
    return dict(zip(values.tolist(), counts.tolist()))


def entropy_bits(codes, bits) -> tuple[int, int]:
    """``(table_bits, payload_bits)`` of the Huffman stream, without building it."""
    counts = _counts(codes)
    lengths = huffman_lengths(counts)
    payload = sum(counts[s] * lengths[s] for s in counts)
    return _table_bits(lengths, bits), payload


@dataclass(frozen=True)
class EncodedMessage:
    delta: float
    bits: int
    dim: int
    table_bits: int
    payload_bits: int
    stream: bytes

    @property
    def header_bits(self) -> int:
        return DELTA_BITS + self.table_bits

    @property
    def total_bits(self) -> int:
        return self.header_bits + self.payload_bits


class _BitWriter:
    def __init__(self):
        self.chunks = []

    def write(self, value, width):
        # MSB-first within the field
        self.chunks.append(((int(value) >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8))

    def write_bits(self, arr):
        self.chunks.append(np.asarray(arr, dtype=np.uint8))

    def getvalue(self):
        flat = np.concatenate(self.chunks) if self.chunks else np.zeros(0, np.uint8)
        return flat.size, np.packbits(flat, bitorder="little").tobytes()


class _BitReader:
    def __init__(self, buf, nbits):
        self.flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")[:nbits]
        self.pos = 0

    def read(self, width):
        field = self.flat[self.pos : self.pos + width]
        if field.size < width:
            raise ValueError("truncated Huffman stream")
        self.pos += width
        value = 0
        for b in field.tolist():
            value = (value << 1) | b
        return value


def huffman_encode(t: LowPrecisionTensor) -> EncodedMessage:
    counts = _counts(t.codes)
    lengths = huffman_lengths(counts)
    book = canonical_codes(lengths)
    lo, _ = code_range(t.bits)
    width = max(1, max(lengths.values()).bit_length())

    w = _BitWriter()
    dense = (1 << t.bits) * width
    sparse = _COUNT_FIELD + len(lengths) * (t.bits + width)
    w.write(width, _WIDTH_FIELD)
    if dense <= sparse:
        w.write(0, 1)
        for sym in range(lo, lo + (1 << t.bits)):
            w.write(lengths.get(sym, 0), width)
    else:
        w.write(1, 1)
        w.write(len(lengths), _COUNT_FIELD)
        for sym in sorted(lengths):
            w.write(sym - lo, t.bits)
            w.write(lengths[sym], width)
    table_bits, _ = w.getvalue()

    # codeword matrix indexed by symbol offset, MSB-first
    max_len = max(lengths.values())
    n_sym = 1 << t.bits
    words = np.zeros((n_sym, max_len), dtype=np.uint8)
    lens = np.zeros(n_sym, dtype=np.int64)
    for sym, (code, ln) in book.items():
        words[sym - lo, :ln] = (code >> np.arange(ln - 1, -1, -1)) & 1
        lens[sym - lo] = ln
    idx = t.codes - lo
    rows = words[idx]
    mask = np.arange(max_len) < lens[idx][:, None]
    w.write_bits(rows[mask])

    total, stream = w.getvalue()
    return EncodedMessage(t.delta, t.bits, t.dim, table_bits, total - table_bits, stream)


def huffman_decode(msg: EncodedMessage) -> LowPrecisionTensor:
    r = _BitReader(msg.stream, msg.table_bits + msg.payload_bits)
    lo, _ = code_range(msg.bits)
    width = r.read(_WIDTH_FIELD)
    lengths = {}
    if r.read(1) == 0:
        for sym in range(lo, lo + (1 << msg.bits)):
            ln = r.read(width)
            if ln:
                lengths[sym] = ln
    else:
        for _ in range(r.read(_COUNT_FIELD)):
            sym = r.read(msg.bits) + lo
            lengths[sym] = r.read(width)
    lookup = {(ln, code): sym for sym, (code, ln) in canonical_codes(lengths).items()}

    bits = r.flat[r.pos :].tolist()
    out = np.empty(msg.dim, dtype=np.int64)
    code = ln = j = 0
    for b in bits:
        code = (code << 1) | b
        ln += 1
        sym = lookup.get((ln, code))
        if sym is not None:
            out[j] = sym
            j += 1
            code = ln = 0
            if j == msg.dim:
                break
    if j != msg.dim:
        raise ValueError("Huffman stream ended early")
    return LowPrecisionTensor(out, msg.delta, msg.bits)


def entropy_encode(t: LowPrecisionTensor) -> int:
    """Measured size in bits: 32-bit delta, code-length table and payload."""
    table, payload = entropy_bits(t.codes, t.bits)
    return DELTA_BITS + table + payload
