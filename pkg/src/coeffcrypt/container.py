"""Binary container for key material.

Layout: ``b"CCKY"``, version byte, kind byte, then a kind-specific body.
Integers are big-endian.  Permutations use the perm_crypto layout (u32
length, u32 entries) except the per-block intra permutations, whose entries
fit in a byte.  Every component section starts with its component index.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .perm import SeedKey, perm_from_bytes, perm_to_bytes

MAGIC = b"CCKY"
VERSION = 1
KIND_VALKEY, KIND_POSKEY, KIND_ENCPOSKEY, KIND_USERKEY, KIND_INCVALKEY = 1, 2, 3, 4, 5


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def need(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"key container truncated at byte {self.pos}")

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        self.need(size)
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out if len(out) > 1 else out[0]

    def raw(self, n):
        self.need(n)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.raw(dt.itemsize * count), dtype=dt).copy()

    def perm(self):
        arr, self.pos = perm_from_bytes(self.buf, self.pos)
        return arr

    def text(self):
        n = self.unpack(">H")
        return self.raw(n).decode("utf-8")

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes in key container")


def _text(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(">H", len(b)) + b


def _header(kind: int) -> bytes:
    return MAGIC + bytes([VERSION, kind])


def _open(buf: bytes, kinds) -> tuple:
    buf = bytes(buf)
    if buf[:4] != MAGIC:
        raise FormatError("not a key container (bad magic)")
    if len(buf) < 6:
        raise FormatError("key container truncated in header")
    if buf[4] != VERSION:
        raise FormatError(f"unsupported key container version {buf[4]}")
    if buf[5] not in kinds:
        raise FormatError(f"key container holds kind {buf[5]}, expected one of {sorted(kinds)}")
    return buf[5], _Reader(buf, 6)


def _comp_index(rd: _Reader, expect: int):
    c = rd.unpack(">B")
    if c != expect:
        raise FormatError(f"component section {c} out of order (expected {expect})")


# ---------------------------------------------------------------- value keys


def _tables_body(pmtv, pmtdcl) -> bytes:
    out = [struct.pack(">HH", pmtv[0].shape[0], pmtdcl[0].shape[0])]
    for c in range(3):
        out.append(bytes([c]))
        out.extend(perm_to_bytes(row) for row in pmtv[c])
        out.extend(perm_to_bytes(row) for row in pmtdcl[c])
    return b"".join(out)


def _read_tables(rd: _Reader):
    n1, n2 = rd.unpack(">HH")
    pmtv, pmtdcl = [], []
    for c in range(3):
        _comp_index(rd, c)
        pmtv.append(np.stack([rd.perm() for _ in range(n1)]))
        pmtdcl.append(np.stack([rd.perm() for _ in range(n2)]))
    return pmtv, pmtdcl


def dump_valkey(key) -> bytes:
    return _header(KIND_VALKEY) + _tables_body(key.pmtv, key.pmtdcl)


def load_valkey(buf):
    from .cipher import ValKey

    _, rd = _open(buf, {KIND_VALKEY})
    key = ValKey(*_read_tables(rd))
    rd.done()
    return key


def dump_incvalkey(key) -> bytes:
    return _header(KIND_INCVALKEY) + _tables_body(key.pmtv, key.pmtdcl)


def load_incvalkey(buf):
    from .keyproto import IncValKey

    _, rd = _open(buf, {KIND_INCVALKEY})
    key = IncValKey(*_read_tables(rd))
    rd.done()
    return key


# ---------------------------------------------------------------- position keys


def poskey_body(key) -> bytes:
    """Serialization of a position key without header or tag (also the MAC input)."""
    out = [_text(key.iid)]
    for c, pk in enumerate(key.components):
        out.append(bytes([c]))
        out.append(perm_to_bytes(pk.pmtb))
        out.append(pk.counts.astype(np.uint8).tobytes())
        out.append(struct.pack(">I", pk.pmtp.size))
        out.append(pk.pmtp.astype(np.uint8).tobytes())
        out.append(pk.bitkey.astype(">u2").tobytes())
        out.append(pk.bitkey_len.astype(np.uint8).tobytes())
        out.append(pk.plain_dc_len.astype(np.uint8).tobytes())
    return b"".join(out)


def dump_poskey(key) -> bytes:
    from .keyproto import EncPosKey

    if isinstance(key, EncPosKey):
        return _header(KIND_ENCPOSKEY) + poskey_body(key) + key.tag
    return _header(KIND_POSKEY) + poskey_body(key)


def load_poskey(buf):
    from .cipher import PosKey, PosKeyComponent
    from .keyproto import EncPosKey

    kind, rd = _open(buf, {KIND_POSKEY, KIND_ENCPOSKEY})
    iid = rd.text()
    comps = []
    for c in range(3):
        _comp_index(rd, c)
        pmtb = rd.perm()
        n = pmtb.size
        counts = rd.array(np.uint8, n).astype(np.int32)
        total = rd.unpack(">I")
        if total != int(counts.sum()):
            raise FormatError("intra-block permutation size disagrees with block sizes")
        pmtp = rd.array(np.uint8, total).astype(np.int32)
        bitkey = rd.array(">u2", n).astype(np.uint16)
        bitkey_len = rd.array(np.uint8, n)
        plain = rd.array(np.uint8, n)
        comps.append(PosKeyComponent(pmtb, counts, pmtp, bitkey, bitkey_len, plain))
    if kind == KIND_ENCPOSKEY:
        tag = rd.raw(32)
        rd.done()
        return EncPosKey(iid, comps, tag)
    rd.done()
    return PosKey(iid, comps)


# ---------------------------------------------------------------- user keys


def dump_userkey(key) -> bytes:
    out = [_header(KIND_USERKEY)]
    seeds = key.seeds or {}
    out.append(struct.pack(">H", len(seeds)))
    for role in sorted(seeds):
        out.append(_text(role) + seeds[role].secret)
    for c in range(3):
        out.append(bytes([c]))
        for s in range(1, 64):
            out.append(key.upmtp[c][s, :s].astype(np.uint8).tobytes())
        out.append(np.asarray(key.ubits[c], dtype=">u2").tobytes())
    blocks = sorted(key.blocks)
    out.append(struct.pack(">I", len(blocks)))
    for c, n in blocks:
        p, mask = key.blocks[(c, n)]
        out.append(bytes([c]) + perm_to_bytes(p) + np.asarray(mask, dtype=np.uint8).tobytes())
    out.append(key.tagmask)
    return b"".join(out)


def load_userkey(buf):
    from .keyproto import UserKey

    _, rd = _open(buf, {KIND_USERKEY})
    nseeds = rd.unpack(">H")
    seeds = {}
    for _ in range(nseeds):
        role = rd.text()
        seeds[role] = SeedKey(rd.raw(32), role)
    upmtp, ubits = [], []
    for c in range(3):
        _comp_index(rd, c)
        mat = np.zeros((64, 64), dtype=np.int32)
        for s in range(1, 64):
            mat[s, :s] = rd.array(np.uint8, s)
        upmtp.append(mat)
        ubits.append(rd.array(">u2", 17).astype(np.int64))
    blocks = {}
    for _ in range(rd.unpack(">I")):
        c = rd.unpack(">B")
        p = rd.perm()
        blocks[(c, int(p.size))] = (p, rd.array(np.uint8, p.size))
    tagmask = rd.raw(32)
    rd.done()
    return UserKey(upmtp, ubits, blocks, tagmask, seeds or None)
