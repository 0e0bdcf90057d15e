"""Canonical JPEG Huffman tables (counts + symbols), their decode/encode forms,
and the standard tables of ITU-T T.81 Annex K.3."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import FormatError

LUT_BITS = 16


@dataclass(frozen=True)
class HuffmanTable:
    counts: tuple  # number of codes of each length 1..16
    symbols: tuple

    def __post_init__(self):
        if len(self.counts) != 16:
            raise FormatError("Huffman table needs 16 length counts")
        if sum(self.counts) != len(self.symbols):
            raise FormatError("Huffman counts do not match symbol count")
        if len(set(self.symbols)) != len(self.symbols):
            raise FormatError("duplicate symbol in Huffman table")

    @cached_property
    def codes(self) -> dict:
        """symbol -> (code, length), assigned canonically."""
        out = {}
        code = 0
        k = 0
        for length in range(1, 17):
            for _ in range(self.counts[length - 1]):
                out[self.symbols[k]] = (code, length)
                code += 1
                k += 1
            if code > (1 << length):
                raise FormatError("Huffman code space overflow")
            code <<= 1
        return out

    @cached_property
    def decode_lut(self) -> np.ndarray:
        """16-bit lookahead table: entry = (length << 8) | symbol, 0 for invalid prefixes."""
        lut = np.zeros(1 << LUT_BITS, dtype=np.uint16)
        for sym, (code, length) in self.codes.items():
            lo = code << (LUT_BITS - length)
            hi = (code + 1) << (LUT_BITS - length)
            lut[lo:hi] = (length << 8) | sym
        return lut

    @cached_property
    def encode_arrays(self):
        """``(codes, lengths)`` indexed by symbol; length 0 marks a missing symbol."""
        codes = np.zeros(256, dtype=np.uint32)
        lengths = np.zeros(256, dtype=np.uint8)
        for sym, (code, length) in self.codes.items():
            codes[sym] = code
            lengths[sym] = length
        return codes, lengths

    def has_all(self, symbols) -> bool:
        codes = self.codes
        return all(int(s) in codes for s in symbols)

    def to_segment_body(self, tclass: int, tid: int) -> bytes:
        return bytes([(tclass << 4) | tid, *self.counts, *self.symbols])


DC_LUMINANCE = HuffmanTable(
    (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0), tuple(range(12))
)
DC_CHROMINANCE = HuffmanTable(
    (0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0), tuple(range(12))
)
AC_LUMINANCE = HuffmanTable(
    (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D),
    (
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61,
        0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52,
        0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25,
        0x26, 0x27, 0x28, 0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
        0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64,
        0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83,
        0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99,
        0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
        0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3,
        0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8,
        0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
    ),
)
AC_CHROMINANCE = HuffmanTable(
    (0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77),
    (
        0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61,
        0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33,
        0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18,
        0x19, 0x1A, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
        0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63,
        0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A,
        0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97,
        0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
        0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA,
        0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7,
        0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
    ),
)


def standard_table(tclass: int, tid: int) -> HuffmanTable:
    """Annex K table for a (class, id) slot: id 0 gets luminance, others chrominance."""
    if tclass == 0:
        return DC_LUMINANCE if tid == 0 else DC_CHROMINANCE
    return AC_LUMINANCE if tid == 0 else AC_CHROMINANCE


def parse_dht(body: bytes, offset: int = 0) -> dict:
    """Parse a DHT segment body into ``{(class, id): HuffmanTable}``."""
    tables = {}
    pos = 0
    while pos < len(body):
        if pos + 17 > len(body):
            raise FormatError(f"truncated DHT segment near byte {offset + pos}")
        tc_th = body[pos]
        tclass, tid = tc_th >> 4, tc_th & 0x0F
        if tclass > 1 or tid > 3:
            raise FormatError(f"bad Huffman table slot {tclass}/{tid}")
        counts = tuple(body[pos + 1 : pos + 17])
        n = sum(counts)
        syms = tuple(body[pos + 17 : pos + 17 + n])
        if len(syms) != n:
            raise FormatError(f"truncated DHT symbols near byte {offset + pos}")
        tables[(tclass, tid)] = HuffmanTable(counts, syms)
        pos += 17 + n
    return tables
