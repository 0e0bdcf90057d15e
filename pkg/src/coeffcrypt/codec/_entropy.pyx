# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled baseline Huffman scan decoder/encoder.

Mirrors ``_entropy_py`` exactly; ``kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint16_t, uint32_t, int16_t, int32_t, uint64_t, int64_t

from coeffcrypt.errors import EncodingError, ParseError

cnp.import_array()


cdef struct Reader:
    const uint8_t* data
    Py_ssize_t pos
    Py_ssize_t end
    uint64_t buf
    int nbits
    int pad_bits


cdef inline void _fill(Reader* rd) noexcept nogil:
    cdef uint8_t b
    while rd.nbits <= 56:
        if rd.pos < rd.end:
            b = rd.data[rd.pos]
            if b == 0xFF:
                if rd.pos + 1 < rd.end and rd.data[rd.pos + 1] == 0:
                    rd.pos += 2
                else:
                    # marker inside the segment: stop feeding real data
                    rd.end = rd.pos
                    rd.buf <<= 8
                    rd.nbits += 8
                    rd.pad_bits += 8
                    continue
            else:
                rd.pos += 1
            rd.buf = (rd.buf << 8) | b
            rd.nbits += 8
        else:
            rd.buf <<= 8
            rd.nbits += 8
            rd.pad_bits += 8


cdef inline int _huff(Reader* rd, const uint16_t* lut) noexcept nogil:
    """Returns the decoded symbol, or -1 for an invalid code."""
    cdef uint16_t e
    cdef int length
    if rd.nbits < 32:
        _fill(rd)
    e = lut[(rd.buf >> (rd.nbits - 16)) & 0xFFFF]
    if e == 0:
        return -1
    length = e >> 8
    rd.nbits -= length
    return e & 0xFF


cdef inline uint32_t _bits(Reader* rd, int s) noexcept nogil:
    if s == 0:
        return 0
    if rd.nbits < 32:
        _fill(rd)
    rd.nbits -= s
    return <uint32_t>((rd.buf >> rd.nbits) & ((1 << s) - 1))


def decode_scan(const uint8_t[::1] data, Py_ssize_t start, Py_ssize_t end,
                const int32_t[::1] comp_seq, Py_ssize_t n_mcu,
                const uint16_t[:, ::1] dc_luts, const uint16_t[:, ::1] ac_luts):
    cdef Py_ssize_t per_mcu = comp_seq.shape[0]
    cdef Py_ssize_t nblocks = n_mcu * per_mcu
    dc_size_a = np.zeros(nblocks, dtype=np.uint8)
    dc_bits_a = np.zeros(nblocks, dtype=np.uint16)
    eob_a = np.zeros(nblocks, dtype=np.uint8)
    counts_a = np.zeros(nblocks, dtype=np.int32)
    r_a = np.zeros(nblocks * 63, dtype=np.uint8)
    v_a = np.zeros(nblocks * 63, dtype=np.int16)
    cdef uint8_t[::1] dc_size = dc_size_a
    cdef uint16_t[::1] dc_bits = dc_bits_a
    cdef uint8_t[::1] eob = eob_a
    cdef int32_t[::1] counts = counts_a
    cdef uint8_t[::1] rr = r_a
    cdef int16_t[::1] vv = v_a

    cdef Reader rd
    rd.data = &data[0]
    rd.pos = start
    rd.end = end
    rd.buf = 0
    rd.nbits = 0
    rd.pad_bits = 0

    cdef Py_ssize_t b, npairs = 0
    cdef int c, sym, s, r, k, n
    cdef uint32_t raw
    cdef int err = 0
    cdef Py_ssize_t err_block = 0

    with nogil:
        for b in range(nblocks):
            c = comp_seq[b % per_mcu]
            sym = _huff(&rd, &dc_luts[c, 0])
            if sym < 0 or sym > 15:
                err = 1
                err_block = b
                break
            dc_size[b] = sym
            dc_bits[b] = _bits(&rd, sym)
            k = 1
            n = 0
            while k < 64:
                sym = _huff(&rd, &ac_luts[c, 0])
                if sym < 0:
                    err = 2
                    break
                r = sym >> 4
                s = sym & 15
                if s == 0:
                    if r == 15:
                        rr[npairs] = 15
                        vv[npairs] = 0
                        npairs += 1
                        n += 1
                        k += 16
                        continue
                    if r == 0:
                        eob[b] = 1
                        break
                    err = 3
                    break
                k += r
                raw = _bits(&rd, s)
                if raw >> (s - 1):
                    vv[npairs] = <int16_t>raw
                else:
                    vv[npairs] = <int16_t>(<int32_t>raw - (1 << s) + 1)
                rr[npairs] = r
                npairs += 1
                n += 1
                k += 1
            if err:
                err_block = b
                break
            if k > 64:
                err = 4
                err_block = b
                break
            counts[b] = n
            if rd.nbits < rd.pad_bits:
                err = 5
                err_block = b
                break

    if err == 5 or (err and rd.nbits < rd.pad_bits):
        raise ParseError(f"entropy-coded data truncated in block {err_block}", rd.end)
    if err == 1:
        raise ParseError(f"invalid DC Huffman code in block {err_block}", rd.pos)
    if err == 2:
        raise ParseError(f"invalid AC Huffman code in block {err_block}", rd.pos)
    if err == 3:
        raise ParseError(f"non-baseline EOBn symbol in block {err_block}", rd.pos)
    if err == 4:
        raise ParseError(f"AC coefficients overflow block {err_block}", rd.pos)
    return dc_size_a, dc_bits_a, eob_a, counts_a, r_a[:npairs].copy(), v_a[:npairs].copy()


cdef struct Writer:
    uint8_t* out
    Py_ssize_t pos
    uint64_t buf
    int nbits


cdef inline void _put(Writer* w, uint32_t code, int length) noexcept nogil:
    cdef uint8_t byte
    w.buf = (w.buf << length) | (code & ((1 << length) - 1))
    w.nbits += length
    while w.nbits >= 8:
        w.nbits -= 8
        byte = (w.buf >> w.nbits) & 0xFF
        w.out[w.pos] = byte
        w.pos += 1
        if byte == 0xFF:
            w.out[w.pos] = 0
            w.pos += 1


def encode_scan(const int32_t[::1] comp_seq, Py_ssize_t n_mcu,
                const uint8_t[::1] dc_size, const uint16_t[::1] dc_bits,
                const uint8_t[::1] eob, const int32_t[::1] counts,
                const uint8_t[::1] rr, const int16_t[::1] vv,
                const uint32_t[:, ::1] dc_codes, const uint8_t[:, ::1] dc_lens,
                const uint32_t[:, ::1] ac_codes, const uint8_t[:, ::1] ac_lens):
    cdef Py_ssize_t per_mcu = comp_seq.shape[0]
    cdef Py_ssize_t nblocks = n_mcu * per_mcu
    # worst case: every symbol 16 bits + 16 extra bits, doubled by stuffing
    out_a = np.empty(16 + nblocks * 8 * 65, dtype=np.uint8)
    cdef uint8_t[::1] outv = out_a
    cdef Writer w
    w.out = &outv[0]
    w.pos = 0
    w.buf = 0
    w.nbits = 0
    cdef Py_ssize_t b, p = 0, j
    cdef int c, s, r, sym, length
    cdef int32_t v, mag
    cdef int err = 0
    cdef Py_ssize_t err_block = 0
    cdef int err_sym = 0
    with nogil:
        for b in range(nblocks):
            c = comp_seq[b % per_mcu]
            s = dc_size[b]
            length = dc_lens[c, s]
            if length == 0:
                err = 1
                err_sym = s
                err_block = b
                break
            _put(&w, dc_codes[c, s], length)
            if s:
                _put(&w, dc_bits[b], s)
            for j in range(counts[b]):
                r = rr[p]
                v = vv[p]
                p += 1
                if v == 0:
                    if r != 15:
                        err = 2
                        err_block = b
                        break
                    sym = 0xF0
                    s = 0
                else:
                    mag = -v if v < 0 else v
                    s = 0
                    while mag:
                        s += 1
                        mag >>= 1
                    if s > 10:
                        err = 3
                        err_block = b
                        break
                    sym = (r << 4) | s
                length = ac_lens[c, sym]
                if length == 0:
                    err = 4
                    err_sym = sym
                    err_block = b
                    break
                _put(&w, ac_codes[c, sym], length)
                if s:
                    if v < 0:
                        _put(&w, <uint32_t>(v + (1 << s) - 1), s)
                    else:
                        _put(&w, <uint32_t>v, s)
            if err:
                break
            if eob[b]:
                length = ac_lens[c, 0]
                if length == 0:
                    err = 4
                    err_sym = 0
                    err_block = b
                    break
                _put(&w, ac_codes[c, 0], length)
        if not err and w.nbits:
            _put(&w, 0x7F, 8 - w.nbits)
    if err == 1:
        raise EncodingError(f"DC group {err_sym} has no Huffman code (block {err_block})")
    if err == 2:
        raise EncodingError(f"zero-valued pair that is not ZRL in block {err_block}")
    if err == 3:
        raise EncodingError(f"AC magnitude exceeds baseline range in block {err_block}")
    if err == 4:
        raise EncodingError(f"AC symbol 0x{err_sym:02x} has no Huffman code (block {err_block})")
    return bytes(out_a[:w.pos])
