"""Baseline JPEG container parsing and writing around the scan kernels."""

from __future__ import annotations

import re
import struct

import numpy as np

from ..errors import EncodingError, FormatError, ParseError, UnsupportedFormatError
from . import kernels
from .huffman import HuffmanTable, parse_dht, standard_table
from .model import CoeffImage, Component

SOI, EOI, SOS, DHT, DQT, DRI, SOF0 = 0xD8, 0xD9, 0xDA, 0xC4, 0xDB, 0xDD, 0xC0
_UNSUPPORTED_SOF = {
    0xC1: "extended sequential", 0xC2: "progressive", 0xC3: "lossless",
    0xC5: "differential", 0xC6: "differential", 0xC7: "differential",
    0xC9: "arithmetic", 0xCA: "arithmetic", 0xCB: "arithmetic",
    0xCD: "arithmetic", 0xCE: "arithmetic", 0xCF: "arithmetic",
}
_SCAN_END = re.compile(b"\xff[^\x00\xd0-\xd7]", re.DOTALL)


def _segments(data: bytes):
    """Yield ``(marker, payload_start, payload_end)`` up to and including SOS."""
    if len(data) < 2 or data[0] != 0xFF or data[1] != SOI:
        raise ParseError("missing SOI marker; not a JPEG stream", 0)
    pos = 2
    n = len(data)
    while True:
        if pos >= n:
            raise ParseError("stream ended before the scan", pos)
        if data[pos] != 0xFF:
            raise ParseError("expected a marker", pos)
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise ParseError("stream ended inside a marker", pos)
        marker = data[pos]
        pos += 1
        if marker == EOI:
            raise ParseError("EOI before any scan", pos - 2)
        if 0xD0 <= marker <= 0xD7 or marker == 0x01:
            continue
        if pos + 2 > n:
            raise ParseError("truncated segment length", pos)
        (length,) = struct.unpack_from(">H", data, pos)
        if length < 2 or pos + length > n:
            raise ParseError(f"segment 0x{marker:02X} runs past end of stream", pos)
        yield marker, pos + 2, pos + length
        pos += length
        if marker == SOS:
            return


def _parse_dqt(body: bytes, offset: int) -> dict:
    tables = {}
    pos = 0
    while pos < len(body):
        pq, tq = body[pos] >> 4, body[pos] & 15
        size = 1 + 64 * (2 if pq else 1)
        if pq > 1 or tq > 3 or pos + size > len(body):
            raise ParseError("malformed DQT segment", offset + pos)
        tables[tq] = bytes(body[pos:pos + size])
        pos += size
    return tables


def decode_jpeg(data) -> CoeffImage:
    """Parse a baseline, Huffman-coded, 3-component JPEG into a :class:`CoeffImage`."""
    data = bytes(data)
    quant, huff, extra = {}, {}, []
    frame = None
    scan_start = None
    scan_hdr = None
    for marker, lo, hi in _segments(data):
        body = data[lo:hi]
        if marker == DQT:
            quant.update(_parse_dqt(body, lo))
        elif marker == DHT:
            huff.update(parse_dht(body, lo))
        elif marker == DRI:
            if len(body) != 2:
                raise ParseError("malformed DRI segment", lo)
            if struct.unpack(">H", body)[0] != 0:
                raise UnsupportedFormatError("restart intervals are not supported")
        elif marker in _UNSUPPORTED_SOF:
            raise UnsupportedFormatError(f"{_UNSUPPORTED_SOF[marker]} JPEG is not supported")
        elif marker == SOF0:
            if frame is not None:
                raise ParseError("duplicate frame header", lo)
            frame = (body, lo)
        elif marker == SOS:
            scan_hdr = (body, lo)
            scan_start = hi
        elif marker == 0xCC:
            raise UnsupportedFormatError("arithmetic coding is not supported")
        else:
            extra.append((marker, body))
    if frame is None:
        raise ParseError("no baseline frame header before the scan", scan_hdr[1] if scan_hdr else 0)

    body, lo = frame
    if len(body) < 6:
        raise ParseError("truncated frame header", lo)
    precision, height, width, nf = struct.unpack_from(">BHHB", body)
    if precision != 8:
        raise UnsupportedFormatError(f"{precision}-bit samples are not supported")
    if nf != 3:
        raise UnsupportedFormatError(f"{nf}-component images are not supported (need 3)")
    if len(body) != 6 + 3 * nf:
        raise ParseError("malformed frame header", lo)
    if height == 0 or width == 0:
        raise UnsupportedFormatError("DNL-defined or empty image dimensions are not supported")
    comps = []
    for i in range(nf):
        cid, hv, tq = body[6 + 3 * i: 9 + 3 * i]
        h, v = hv >> 4, hv & 15
        if not (1 <= h <= 4 and 1 <= v <= 4):
            raise ParseError("bad sampling factors", lo + 6 + 3 * i)
        comps.append([cid, h, v, tq])
    hmax = max(c[1] for c in comps)
    vmax = max(c[2] for c in comps)
    mcus_x = -(-width // (8 * hmax))
    mcus_y = -(-height // (8 * vmax))

    body, lo = scan_hdr
    ns = body[0] if body else 0
    if ns != 3 or len(body) != 4 + 2 * ns:
        raise UnsupportedFormatError("only a single interleaved 3-component scan is supported")
    ss, se, ahal = body[1 + 2 * ns:4 + 2 * ns]
    if (ss, se, ahal) != (0, 63, 0):
        raise UnsupportedFormatError("scan is not baseline sequential")
    for i in range(ns):
        cs, tdta = body[1 + 2 * i], body[2 + 2 * i]
        if cs != comps[i][0]:
            raise UnsupportedFormatError("scan component order differs from frame order")
        comps[i] += [tdta >> 4, tdta & 15]
    for cid, h, v, tq, td, ta in comps:
        if tq not in quant:
            raise FormatError(f"component {cid} references missing quantization table {tq}")
        for key in ((0, td), (1, ta)):
            if key not in huff:
                raise FormatError(f"component {cid} references missing Huffman table {key}")

    m = _SCAN_END.search(data, scan_start)
    scan_end = m.start() if m else len(data)
    if m is not None and data[scan_end + 1] != EOI:
        # anything but EOI after the scan means a second scan or DNL
        raise UnsupportedFormatError(
            f"marker 0x{data[scan_end + 1]:02X} after the scan; only a single scan is supported")

    comp_seq = np.concatenate([np.full(h * v, i, dtype=np.int32) for i, (_, h, v, *_r) in enumerate(comps)])
    dc_luts = np.stack([huff[(0, c[4])].decode_lut for c in comps])
    ac_luts = np.stack([huff[(1, c[5])].decode_lut for c in comps])
    n_mcu = mcus_x * mcus_y
    buf = np.frombuffer(data, dtype=np.uint8)
    dc_size, dc_bits, eob, counts, rr, vv = kernels.decode_scan(
        buf, scan_start, scan_end, comp_seq, n_mcu, dc_luts, ac_luts
    )
    if m is None:
        raise ParseError("missing EOI marker after the scan", len(data))

    block_comp = np.tile(comp_seq, n_mcu)
    pair_comp = np.repeat(block_comp, counts)
    eob = eob.astype(bool)
    components = []
    for i, (cid, h, v, tq, td, ta) in enumerate(comps):
        bm = block_comp == i
        pm = pair_comp == i
        cnt = counts[bm].astype(np.int64)
        components.append(Component(
            cid=cid, h=h, v=v, tq=tq, td=td, ta=ta,
            blocks_w=mcus_x * h, blocks_h=mcus_y * v,
            dc_size=dc_size[bm], dc_bits=dc_bits[bm], eob=eob[bm],
            offsets=np.concatenate([[0], np.cumsum(cnt)]),
            r=rr[pm], v_=vv[pm],
        ))
    return CoeffImage(
        width=width, height=height, components=components,
        quant_tables=quant, huffman=huff, segments=extra,
        mcus_x=mcus_x, mcus_y=mcus_y,
    )


def _ac_symbols(comp: Component) -> set:
    v = comp.values.astype(np.int32)
    size = np.zeros(v.shape, dtype=np.int32)
    nz = v != 0
    size[nz] = np.floor(np.log2(np.abs(v[nz]))).astype(np.int32) + 1
    syms = set(np.unique((comp.r.astype(np.int32) << 4) | size).tolist())
    if comp.eob.any():
        syms.add(0)
    return syms


def required_symbols(img: CoeffImage) -> dict:
    """Huffman symbols each ``(class, id)`` slot must code for ``img``."""
    need = {}
    for comp in img.components:
        need.setdefault((0, comp.td), set()).update(np.unique(comp.dc_size).tolist())
        need.setdefault((1, comp.ta), set()).update(_ac_symbols(comp))
    return need


def resolve_tables(img: CoeffImage) -> dict:
    """Tables used to encode ``img``: the preserved ones, with any slot that lacks
    a needed symbol replaced by the standard table for that slot."""
    tables = dict(img.huffman)
    for key, syms in required_symbols(img).items():
        table = tables.get(key)
        if table is None or not table.has_all(syms):
            std = standard_table(*key)
            if not std.has_all(syms):
                missing = sorted(s for s in syms if s not in std.codes)
                raise EncodingError(f"symbols {missing} cannot be coded in baseline tables")
            tables[key] = std
    return tables


def _segment(marker: int, payload: bytes) -> bytes:
    if len(payload) + 2 > 0xFFFF:
        raise EncodingError(f"segment 0x{marker:02X} too long")
    return bytes([0xFF, marker]) + struct.pack(">H", len(payload) + 2) + payload


def encode_jpeg(img: CoeffImage, tables: dict | None = None) -> bytes:
    """Serialize ``img`` as a baseline JPEG.

    Uses ``tables`` when given, otherwise :func:`resolve_tables`.  Raises
    :class:`EncodingError` if a symbol has no code.
    """
    comps = img.components
    if tables is None:
        tables = resolve_tables(img)
    comp_seq = np.concatenate([np.full(c.h * c.v, i, dtype=np.int32) for i, c in enumerate(comps)])
    n_mcu = img.n_mcu
    nblocks = n_mcu * comp_seq.size
    for i, c in enumerate(comps):
        if c.blknum != n_mcu * c.h * c.v:
            raise EncodingError(f"component {i} has {c.blknum} blocks, grid needs {n_mcu * c.h * c.v}")

    block_comp = np.tile(comp_seq, n_mcu)
    block_idx = np.empty(nblocks, dtype=np.int64)
    for i in range(len(comps)):
        sel = block_comp == i
        block_idx[sel] = np.arange(int(sel.sum()))
    dc_size = np.empty(nblocks, dtype=np.uint8)
    dc_bits = np.empty(nblocks, dtype=np.uint16)
    eob = np.empty(nblocks, dtype=np.uint8)
    counts = np.empty(nblocks, dtype=np.int32)
    starts = np.empty(nblocks, dtype=np.int64)
    base = 0
    for i, c in enumerate(comps):
        sel = block_comp == i
        j = block_idx[sel]
        dc_size[sel] = c.dc_size[j]
        dc_bits[sel] = c.dc_bits[j]
        eob[sel] = c.eob[j]
        counts[sel] = c.counts[j]
        starts[sel] = base + c.offsets[:-1][j]
        base += c.r.size
    all_r = np.concatenate([c.r for c in comps])
    all_v = np.concatenate([c.values for c in comps])
    total = int(counts.sum())
    if total:
        first = np.repeat(starts - (np.cumsum(counts) - counts), counts)
        pidx = first + np.arange(total)
        rr, vv = all_r[pidx], all_v[pidx]
    else:
        rr, vv = np.zeros(0, np.uint8), np.zeros(0, np.int16)

    def code_arrays(cls, ids):
        codes = np.zeros((len(ids), 256), dtype=np.uint32)
        lens = np.zeros((len(ids), 256), dtype=np.uint8)
        for k, tid in enumerate(ids):
            if (cls, tid) not in tables:
                raise EncodingError(f"no Huffman table in slot {(cls, tid)}")
            codes[k], lens[k] = tables[(cls, tid)].encode_arrays
        return codes, lens

    dc_codes, dc_lens = code_arrays(0, [c.td for c in comps])
    ac_codes, ac_lens = code_arrays(1, [c.ta for c in comps])
    scan = kernels.encode_scan(
        comp_seq, n_mcu, dc_size, dc_bits, eob, counts,
        np.ascontiguousarray(rr, dtype=np.uint8), np.ascontiguousarray(vv, dtype=np.int16),
        dc_codes, dc_lens, ac_codes, ac_lens,
    )

    out = [b"\xff\xd8"]
    for marker, payload in img.segments:
        out.append(_segment(marker, payload))
    out.append(_segment(DQT, b"".join(img.quant_tables[k] for k in sorted(img.quant_tables))))
    sof = struct.pack(">BHHB", 8, img.height, img.width, len(comps))
    for c in comps:
        sof += bytes([c.cid, (c.h << 4) | c.v, c.tq])
    out.append(_segment(SOF0, sof))
    used = sorted({(0, c.td) for c in comps} | {(1, c.ta) for c in comps})
    out.append(_segment(DHT, b"".join(tables[k].to_segment_body(*k) for k in used)))
    sos = bytes([len(comps)])
    for c in comps:
        sos += bytes([c.cid, (c.td << 4) | c.ta])
    sos += bytes([0, 63, 0])
    out.append(_segment(SOS, sos))
    out.append(scan)
    out.append(b"\xff\xd9")
    return b"".join(out)


def roundtrip(data) -> bytes:
    return encode_jpeg(decode_jpeg(data))


__all__ = ["decode_jpeg", "encode_jpeg", "resolve_tables", "required_symbols", "HuffmanTable"]
