"""Pure-Python baseline Huffman scan decoder/encoder (fallback for ``_entropy``)."""

from __future__ import annotations

import numpy as np

from ..errors import EncodingError, ParseError


class _Reader:
    __slots__ = ("data", "pos", "end", "buf", "nbits", "pad_bits")

    def __init__(self, data, start, end):
        self.data = data
        self.pos = start
        self.end = end
        self.buf = 0
        self.nbits = 0
        self.pad_bits = 0

    def fill(self):
        data = self.data
        while self.nbits <= 56:
            if self.pos < self.end:
                b = data[self.pos]
                if b == 0xFF:
                    if self.pos + 1 < self.end and data[self.pos + 1] == 0:
                        self.pos += 2
                    else:
                        self.end = self.pos
                        self.buf = (self.buf << 8) & 0xFFFFFFFFFFFFFFFF
                        self.nbits += 8
                        self.pad_bits += 8
                        continue
                else:
                    self.pos += 1
                self.buf = ((self.buf << 8) | b) & 0xFFFFFFFFFFFFFFFF
            else:
                self.buf = (self.buf << 8) & 0xFFFFFFFFFFFFFFFF
                self.pad_bits += 8
            self.nbits += 8


def decode_scan(data, start, end, comp_seq, n_mcu, dc_luts, ac_luts):
    per_mcu = len(comp_seq)
    nblocks = n_mcu * per_mcu
    comp_seq = [int(c) for c in comp_seq]
    dc_luts = [lut.tolist() for lut in dc_luts]
    ac_luts = [lut.tolist() for lut in ac_luts]
    dc_size = [0] * nblocks
    dc_bits = [0] * nblocks
    eob = [0] * nblocks
    counts = [0] * nblocks
    rr = []
    vv = []
    rd = _Reader(bytes(data), start, end)

    def huff(lut):
        if rd.nbits < 32:
            rd.fill()
        e = lut[(rd.buf >> (rd.nbits - 16)) & 0xFFFF]
        if e == 0:
            return -1
        rd.nbits -= e >> 8
        return e & 0xFF

    def bits(s):
        if s == 0:
            return 0
        if rd.nbits < 32:
            rd.fill()
        rd.nbits -= s
        return (rd.buf >> rd.nbits) & ((1 << s) - 1)

    def fail(msg, b):
        if rd.nbits < rd.pad_bits:
            raise ParseError(f"entropy-coded data truncated in block {b}", rd.end)
        raise ParseError(f"{msg} in block {b}", rd.pos)

    for b in range(nblocks):
        c = comp_seq[b % per_mcu]
        sym = huff(dc_luts[c])
        if sym < 0 or sym > 15:
            fail("invalid DC Huffman code", b)
        dc_size[b] = sym
        dc_bits[b] = bits(sym)
        k = 1
        n = 0
        ac = ac_luts[c]
        while k < 64:
            sym = huff(ac)
            if sym < 0:
                fail("invalid AC Huffman code", b)
            r = sym >> 4
            s = sym & 15
            if s == 0:
                if r == 15:
                    rr.append(15)
                    vv.append(0)
                    n += 1
                    k += 16
                    continue
                if r == 0:
                    eob[b] = 1
                    break
                fail("non-baseline EOBn symbol", b)
            k += r
            raw = bits(s)
            vv.append(raw if raw >> (s - 1) else raw - (1 << s) + 1)
            rr.append(r)
            n += 1
            k += 1
        if k > 64:
            fail("AC coefficients overflow", b)
        counts[b] = n
        if rd.nbits < rd.pad_bits:
            raise ParseError(f"entropy-coded data truncated in block {b}", rd.end)

    return (
        np.array(dc_size, dtype=np.uint8),
        np.array(dc_bits, dtype=np.uint16),
        np.array(eob, dtype=np.uint8),
        np.array(counts, dtype=np.int32),
        np.array(rr, dtype=np.uint8),
        np.array(vv, dtype=np.int16),
    )


def encode_scan(comp_seq, n_mcu, dc_size, dc_bits, eob, counts, rr, vv,
                dc_codes, dc_lens, ac_codes, ac_lens):
    per_mcu = len(comp_seq)
    nblocks = n_mcu * per_mcu
    comp_seq = [int(c) for c in comp_seq]
    dc_size = dc_size.tolist()
    dc_bits = dc_bits.tolist()
    eob = eob.tolist()
    counts = counts.tolist()
    rr = rr.tolist()
    vv = vv.tolist()
    dc_codes = dc_codes.tolist()
    dc_lens = dc_lens.tolist()
    ac_codes = ac_codes.tolist()
    ac_lens = ac_lens.tolist()

    out = bytearray()
    acc = 0
    nacc = 0

    def put(code, length):
        nonlocal acc, nacc
        acc = (acc << length) | (code & ((1 << length) - 1))
        nacc += length
        while nacc >= 8:
            nacc -= 8
            byte = (acc >> nacc) & 0xFF
            out.append(byte)
            if byte == 0xFF:
                out.append(0)
        acc &= (1 << nacc) - 1

    p = 0
    for b in range(nblocks):
        c = comp_seq[b % per_mcu]
        s = dc_size[b]
        length = dc_lens[c][s]
        if length == 0:
            raise EncodingError(f"DC group {s} has no Huffman code (block {b})")
        put(dc_codes[c][s], length)
        if s:
            put(dc_bits[b], s)
        codes, lens = ac_codes[c], ac_lens[c]
        for _ in range(counts[b]):
            r = rr[p]
            v = vv[p]
            p += 1
            if v == 0:
                if r != 15:
                    raise EncodingError(f"zero-valued pair that is not ZRL in block {b}")
                sym, s = 0xF0, 0
            else:
                s = abs(v).bit_length()
                if s > 10:
                    raise EncodingError(f"AC magnitude exceeds baseline range in block {b}")
                sym = (r << 4) | s
            length = lens[sym]
            if length == 0:
                raise EncodingError(f"AC symbol 0x{sym:02x} has no Huffman code (block {b})")
            put(codes[sym], length)
            if s:
                put(v + (1 << s) - 1 if v < 0 else v, s)
        if eob[b]:
            length = lens[0]
            if length == 0:
                raise EncodingError(f"AC symbol 0x00 has no Huffman code (block {b})")
            put(codes[0], length)
    if nacc:
        put(0x7F, 8 - nacc)
    return bytes(out)
