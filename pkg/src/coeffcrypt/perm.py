"""Keyed permutation and keystream generation, plus permutation apply/unapply.

Permutations are one-based integer arrays: a permutation of length ``n`` holds
each of ``1..n`` exactly once.  ``enc_perm(D, K)[i] = D[K[i]]`` and
``dec_perm`` is its exact inverse, so that

    enc_perm(dec_perm(K2, K1), enc_perm(K1, K)) == enc_perm(K2, K)

holds for all equal-length permutations.  The key-conversion protocol in
:mod:`coeffcrypt.keyproto` is built on that identity.

The PRF is SHAKE-256 over ``domain || role || secret || tag``; tags are
length-prefixed token lists so distinct tags never serialize identically.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ContractError, FormatError, RangeError

KEY_BYTES = 32
_WORD_SPACE = 1 << 32

Token = Union[str, int, bytes]


@dataclass(frozen=True)
class SeedKey:
    """A 32-byte secret with a role label that takes part in derivation."""

    secret: bytes
    role: str = ""

    def __post_init__(self):
        if len(self.secret) != KEY_BYTES:
            raise RangeError(f"seed keys are {KEY_BYTES} bytes, got {len(self.secret)}")

    def hex(self) -> str:
        return self.secret.hex()

    @classmethod
    def from_hex(cls, text: str, role: str = "") -> "SeedKey":
        return cls(bytes.fromhex(text), role)

    def __repr__(self):
        return f"SeedKey(role={self.role!r}, secret=<{KEY_BYTES} bytes>)"


@dataclass(frozen=True)
class DomainTag:
    tokens: tuple = ()

    def __init__(self, *tokens: Token):
        object.__setattr__(self, "tokens", tuple(tokens))

    def serialize(self) -> bytes:
        out = [struct.pack(">I", len(self.tokens))]
        for tok in self.tokens:
            if isinstance(tok, bool):
                raise ContractError("boolean tag tokens are ambiguous")
            if isinstance(tok, (int, np.integer)):
                kind, body = b"i", str(int(tok)).encode()
            elif isinstance(tok, str):
                kind, body = b"s", tok.encode("utf-8")
            elif isinstance(tok, (bytes, bytearray)):
                kind, body = b"b", bytes(tok)
            else:
                raise ContractError(f"unsupported tag token type {type(tok).__name__}")
            out.append(kind + struct.pack(">I", len(body)) + body)
        return b"".join(out)


def _as_tag(tag) -> DomainTag:
    if isinstance(tag, DomainTag):
        return tag
    if isinstance(tag, (tuple, list)):
        return DomainTag(*tag)
    return DomainTag(tag)


class _Xof:
    """Prefix-stable reader over SHAKE-256 output."""

    def __init__(self, purpose: bytes, key: SeedKey, tag: DomainTag):
        role = key.role.encode("utf-8")
        self._h = hashlib.shake_256(
            b"coeffcrypt.prf\x00" + purpose + b"\x00"
            + struct.pack(">I", len(role)) + role + key.secret + tag.serialize()
        )

    def read(self, nbytes: int) -> bytes:
        return self._h.digest(nbytes)

    def words(self, count: int) -> list:
        return np.frombuffer(self._h.digest(4 * count), dtype=">u4").tolist()


def rand_perm(key: SeedKey, n: int, tag=()) -> np.ndarray:
    """Keyed uniformly random permutation of ``1..n`` (Fisher-Yates, rejection sampled)."""
    n = int(n)
    if n < 1:
        raise RangeError("permutation length must be at least 1")
    tag = _as_tag(tag)
    items = list(range(1, n + 1))
    if n == 1:
        return np.array(items, dtype=np.int32)
    xof = _Xof(b"perm", key, tag)
    budget = n + 8
    words = xof.words(budget)
    pos = 0
    for i in range(n - 1, 0, -1):
        bound = i + 1
        limit = _WORD_SPACE - _WORD_SPACE % bound
        while True:
            if pos == budget:
                budget *= 2
                words = xof.words(budget)
            u = words[pos]
            pos += 1
            if u < limit:
                break
        j = u % bound
        items[i], items[j] = items[j], items[i]
    return np.array(items, dtype=np.int32)


class _WordStream:
    """Sequential 32-bit words from one XOF, grown geometrically on demand."""

    def __init__(self, xof: _Xof, hint: int):
        self._xof = xof
        self._budget = max(64, hint)
        self._words = np.frombuffer(xof.read(4 * self._budget), dtype=">u4").astype(np.int64)
        self._pos = 0

    def take(self, count: int) -> np.ndarray:
        while self._pos + count > self._budget:
            self._budget *= 2
            self._words = np.frombuffer(self._xof.read(4 * self._budget), dtype=">u4").astype(np.int64)
        out = self._words[self._pos:self._pos + count]
        self._pos += count
        return out


def rand_perm_batch(key: SeedKey, sizes, tag=()) -> np.ndarray:
    """Independent keyed permutations for many sizes at once.

    Returns the concatenation of one one-based permutation of ``1..sizes[j]``
    per entry, in order (zero sizes contribute nothing).  Rows of equal size
    are shuffled together, Fisher-Yates style with rejection sampling, from a
    single XOF stream.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size and sizes.min() < 0:
        raise RangeError("permutation sizes must be non-negative")
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    out = np.empty(int(offsets[-1]), dtype=np.int32)
    stream = _WordStream(_Xof(b"permbatch", key, _as_tag(tag)), int(offsets[-1]) + 64)
    for s in np.unique(sizes).tolist():
        if s == 0:
            continue
        rows = np.flatnonzero(sizes == s)
        m = rows.size
        mat = np.tile(np.arange(1, s + 1, dtype=np.int32), (m, 1))
        ridx = np.arange(m)
        for i in range(s - 1, 0, -1):
            bound = i + 1
            limit = _WORD_SPACE - _WORD_SPACE % bound
            w = stream.take(m).copy()
            bad = np.flatnonzero(w >= limit)
            while bad.size:
                w[bad] = stream.take(bad.size)
                bad = bad[w[bad] >= limit]
            j = w % bound
            tmp = mat[ridx, j].copy()
            mat[ridx, j] = mat[:, i]
            mat[:, i] = tmp
        dest = offsets[rows][:, None] + np.arange(s)
        out[dest.ravel()] = mat.ravel()
    return out


def stm_ciph(key: SeedKey, len_bits: int, tag=()) -> np.ndarray:
    """Deterministic keystream of exactly ``len_bits`` bits (uint8 array of 0/1)."""
    len_bits = int(len_bits)
    if len_bits < 1:
        raise RangeError("keystream length must be at least 1 bit")
    raw = _Xof(b"stream", key, _as_tag(tag)).read((len_bits + 7) // 8)
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:len_bits]


def stm_ciph_int(key: SeedKey, len_bits: int, tag=()) -> int:
    """Keystream as an integer, most significant bit first."""
    len_bits = int(len_bits)
    if len_bits < 1:
        raise RangeError("keystream length must be at least 1 bit")
    raw = _Xof(b"stream", key, _as_tag(tag)).read((len_bits + 7) // 8)
    return int.from_bytes(raw, "big") >> (8 * len(raw) - len_bits)


def stm_ciph_bytes(key: SeedKey, nbytes: int, tag=()) -> bytes:
    return _Xof(b"stream", key, _as_tag(tag)).read(int(nbytes))


def is_permutation(p) -> bool:
    p = np.asarray(p)
    if p.ndim != 1 or p.size == 0:
        return False
    seen = np.zeros(p.size + 1, dtype=bool)
    if p.min() < 1 or p.max() > p.size:
        return False
    seen[p] = True
    return bool(seen[1:].all())


def check_permutation(p) -> np.ndarray:
    arr = np.asarray(p)
    if not is_permutation(arr):
        raise ContractError("key is not a permutation of 1..n")
    return arr


def identity(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=np.int32)


def inverse(p) -> np.ndarray:
    p = np.asarray(p)
    inv = np.empty_like(p)
    inv[p - 1] = np.arange(1, p.size + 1, dtype=p.dtype)
    return inv


def enc_perm(data, key):
    """``out[i] = data[key[i]]`` with one-based ``key``."""
    key = np.asarray(key)
    if len(data) != key.size:
        raise ContractError(f"length mismatch: data {len(data)} vs key {key.size}")
    idx = key - 1
    if isinstance(data, np.ndarray):
        return data[idx]
    out = [data[i] for i in idx.tolist()]
    return tuple(out) if isinstance(data, tuple) else out


def dec_perm(data, key):
    """Inverse of :func:`enc_perm`: ``out[key[i]] = data[i]``."""
    key = np.asarray(key)
    if len(data) != key.size:
        raise ContractError(f"length mismatch: data {len(data)} vs key {key.size}")
    idx = key - 1
    if isinstance(data, np.ndarray):
        out = np.empty_like(data)
        out[idx] = data
        return out
    out = [None] * key.size
    for src, dst in enumerate(idx.tolist()):
        out[dst] = data[src]
    return tuple(out) if isinstance(data, tuple) else out


def perm_to_bytes(p) -> bytes:
    p = np.asarray(p, dtype=">u4")
    return struct.pack(">I", p.size) + p.tobytes()


def perm_from_bytes(buf: bytes, offset: int = 0):
    """Returns ``(permutation, next_offset)``."""
    if offset + 4 > len(buf):
        raise FormatError("truncated permutation length")
    (n,) = struct.unpack_from(">I", buf, offset)
    end = offset + 4 + 4 * n
    if end > len(buf):
        raise FormatError("truncated permutation body")
    arr = np.frombuffer(buf, dtype=">u4", count=n, offset=offset + 4).astype(np.int32)
    return arr, end


@dataclass
class KeySource:
    """Source of fresh secrets.

    Unseeded sources draw from :mod:`secrets`.  A seeded source is a counter-mode
    SHAKE-256 DRBG, which makes whole simulation runs reproducible.
    """

    seed: bytes | None = None
    counter: int = 0
    _label: str = field(default="keysource", repr=False)

    @classmethod
    def seeded(cls, seed) -> "KeySource":
        if isinstance(seed, int):
            seed = str(seed).encode()
        elif isinstance(seed, str):
            seed = seed.encode()
        return cls(seed=bytes(seed))

    def token(self, nbytes: int = KEY_BYTES) -> bytes:
        if self.seed is None:
            return secrets.token_bytes(nbytes)
        self.counter += 1
        h = hashlib.shake_256(
            b"coeffcrypt.drbg\x00" + struct.pack(">I", len(self.seed)) + self.seed
            + struct.pack(">Q", self.counter)
        )
        return h.digest(nbytes)

    def seed_key(self, role: str) -> SeedKey:
        return SeedKey(self.token(KEY_BYTES), role)

    def seed_keys(self, roles: Iterable[str]) -> dict:
        return {r: self.seed_key(r) for r in roles}

    def rng(self) -> np.random.Generator:
        """A numpy generator seeded from this source (for non-secret sampling)."""
        return np.random.default_rng(int.from_bytes(self.token(16), "big"))


def xor_bits(a: Sequence[int], b: Sequence[int]) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ContractError("bit strings differ in length")
    return a ^ b
