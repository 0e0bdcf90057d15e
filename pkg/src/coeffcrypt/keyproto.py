"""Key-over-key encryption so the key centre never sees a raw position key.

The owner encrypts each image's position key under its own user key
``U_O`` (``img_key_enc``: every permutation ``P`` becomes ``P o U_O^-1`` and
every bit string is XORed).  Authorizing a user ``U_U`` hands the key centre
the link key ``user_key_enc(U_O, U_U) = U_O o U_U``.  The key centre composes
(``kmc_transform``) and gets ``P o U_U``, which only the user can strip.  The
group path inserts the increment key ``user_key_dec(U_O, U_G) = U_O o U_G^-1``
ahead of the group's link key.

Block permutations of a user key exist only for block counts it has been
materialized for.  A key that still carries its seeds derives missing sizes
on demand; combined keys (link and increment keys) carry no seeds, so their
size domain is fixed when they are built and is extended by re-sending.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import container, perm
from .cipher import (COMPONENTS, DCLEN_DOMAIN, VALUE_DOMAIN, EncryptedImage, PosKey,
                     PosKeyComponent, SqntTable, ValKey, _VALUE_POS)
from .codec import decode_jpeg, encode_jpeg
from .errors import ContractError, FormatError, TamperError
from .perm import KeySource, SeedKey

MAX_PAIRS = 63
MAX_BITKEY = 16
TAG_BYTES = 32
_MAC_DOMAIN = b"coeffcrypt.poskey-mac\x00"


def user_seed_roles():
    return [f"{k}{c}" for k in ("key_Ublo", "key_Uinblo", "key_Udc") for c in COMPONENTS] + ["key_Utag"]


@dataclass(eq=False)
class UserKey:
    upmtp: list  # per component: int32 (64, 64); row s holds a permutation of 1..s in [:s]
    ubits: list  # per component: int64 (17,); entry L is an L-bit mask, entry 0 is 0
    blocks: dict  # (component, blknum) -> (block permutation, per-block dc-length mask bytes)
    tagmask: bytes
    seeds: dict | None = field(default=None, repr=False)

    def block_key(self, c: int, n: int):
        entry = self.blocks.get((c, n))
        if entry is not None:
            return entry
        if not self.seeds:
            raise ContractError(f"user key has no block permutation of size {n} for component {COMPONENTS[c]}")
        name = COMPONENTS[c]
        entry = (
            perm.rand_perm(self.seeds[f"key_Ublo{name}"], n, ("Upmtb", name, n)),
            np.frombuffer(perm.stm_ciph_bytes(self.seeds[f"key_Udc{name}"], n, ("Udclen", name, n)),
                          dtype=np.uint8).copy(),
        )
        self.blocks[(c, n)] = entry
        return entry

    def sizes(self) -> set:
        return set(self.blocks)

    def materialize(self, sizes) -> "UserKey":
        for c, n in sizes:
            self.block_key(int(c), int(n))
        return self

    def public_copy(self, sizes=None) -> "UserKey":
        """Copy without seeds, restricted to ``sizes`` when given."""
        keys = self.sizes() if sizes is None else set(sizes)
        blocks = {k: self.block_key(*k) for k in keys}
        return UserKey([m.copy() for m in self.upmtp], [b.copy() for b in self.ubits], blocks, self.tagmask)

    def __eq__(self, other):
        if not isinstance(other, UserKey):
            return NotImplemented
        return (
            all(np.array_equal(a, b) for a, b in zip(self.upmtp, other.upmtp))
            and all(np.array_equal(a, b) for a, b in zip(self.ubits, other.ubits))
            and self.blocks.keys() == other.blocks.keys()
            and all(np.array_equal(self.blocks[k][0], other.blocks[k][0])
                    and np.array_equal(self.blocks[k][1], other.blocks[k][1]) for k in self.blocks)
            and self.tagmask == other.tagmask
        )


def gen_user_key(seeds, sizes=()) -> UserKey:
    """Derive a user key from its seeds (a role mapping or a :class:`KeySource`)."""
    if isinstance(seeds, KeySource):
        seeds = seeds.seed_keys(user_seed_roles())
    upmtp, ubits = [], []
    for name in COMPONENTS:
        mat = np.zeros((MAX_PAIRS + 1, MAX_PAIRS + 1), dtype=np.int32)
        for s in range(1, MAX_PAIRS + 1):
            mat[s, :s] = perm.rand_perm(seeds[f"key_Uinblo{name}"], s, ("Upmtp", name, s))
        upmtp.append(mat)
        bits = np.zeros(MAX_BITKEY + 1, dtype=np.int64)
        for L in range(1, MAX_BITKEY + 1):
            bits[L] = perm.stm_ciph_int(seeds[f"key_Udc{name}"], L, ("UbitKey", name, L))
        ubits.append(bits)
    tagmask = perm.stm_ciph_bytes(seeds["key_Utag"], TAG_BYTES, ("Utag",))
    key = UserKey(upmtp, ubits, {}, tagmask, dict(seeds))
    return key.materialize(sizes)


def identity_user_key(sizes=()) -> UserKey:
    upmtp = []
    for _ in COMPONENTS:
        mat = np.zeros((MAX_PAIRS + 1, MAX_PAIRS + 1), dtype=np.int32)
        for s in range(1, MAX_PAIRS + 1):
            mat[s, :s] = np.arange(1, s + 1)
        upmtp.append(mat)
    blocks = {(c, n): (perm.identity(n), np.zeros(n, dtype=np.uint8)) for c, n in sizes}
    return UserKey(upmtp, [np.zeros(MAX_BITKEY + 1, dtype=np.int64) for _ in COMPONENTS], blocks,
                   bytes(TAG_BYTES))


def _combine(a: UserKey, b: UserKey, sizes, op) -> UserKey:
    if sizes is None:
        sizes = a.sizes() | b.sizes()
    upmtp = []
    for ma, mb in zip(a.upmtp, b.upmtp):
        mat = np.zeros_like(ma)
        for s in range(1, MAX_PAIRS + 1):
            mat[s, :s] = op(ma[s, :s], mb[s, :s])
        upmtp.append(mat)
    ubits = [x ^ y for x, y in zip(a.ubits, b.ubits)]
    blocks = {}
    for c, n in sorted(sizes):
        pa, da = a.block_key(c, n)
        pb, db = b.block_key(c, n)
        blocks[(c, n)] = (op(pa, pb), da ^ db)
    return UserKey(upmtp, ubits, blocks, bytes(x ^ y for x, y in zip(a.tagmask, b.tagmask)))


def user_key_enc(a: UserKey, b: UserKey, sizes=None) -> UserKey:
    """Entrywise ``enc_perm(a, b)`` on permutations and XOR on bit strings."""
    return _combine(a, b, sizes, perm.enc_perm)


def user_key_dec(a: UserKey, b: UserKey, sizes=None) -> UserKey:
    """Entrywise ``dec_perm(a, b)`` on permutations and XOR on bit strings."""
    return _combine(a, b, sizes, perm.dec_perm)


@dataclass(eq=False)
class EncPosKey(PosKey):
    """A position key under one or more user-key layers, with its masked MAC tag."""

    tag: bytes = bytes(TAG_BYTES)

    def __eq__(self, other):
        if not isinstance(other, EncPosKey):
            return NotImplemented
        return PosKey.__eq__(self, other) and self.tag == other.tag


def mac_digest(poskey: PosKey) -> bytes:
    return hashlib.sha256(_MAC_DOMAIN + container.poskey_body(poskey)).digest()


def _xor_bytes(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _transform(key: PosKey, ukey: UserKey, forward: bool):
    comps = []
    for c, pk in enumerate(key.components):
        n = pk.blknum
        ub, dmask = ukey.block_key(c, n)
        if forward:
            pmtb = pk.pmtb[ub - 1]
        else:
            pmtb = np.empty_like(pk.pmtb)
            pmtb[ub - 1] = pk.pmtb
        counts = pk.counts.astype(np.int64)
        total = int(counts.sum())
        starts = np.repeat(pk.offsets[:-1], counts)
        local = np.arange(total) - starts
        sizes = np.repeat(counts, counts)
        dest = starts + ukey.upmtp[c][sizes, local] - 1
        if forward:
            pmtp = pk.pmtp[dest]
        else:
            pmtp = np.empty_like(pk.pmtp)
            pmtp[dest] = pk.pmtp
        if pk.bitkey_len.size and pk.bitkey_len.max() > MAX_BITKEY:
            raise ContractError("bit key longer than the user key's bit strings")
        bitkey = pk.bitkey.astype(np.int64) ^ ukey.ubits[c][pk.bitkey_len]
        comps.append(PosKeyComponent(pmtb, pk.counts, pmtp, bitkey, pk.bitkey_len,
                                     pk.plain_dc_len ^ dmask))
    return comps


def img_key_enc(poskey: PosKey, ukey: UserKey) -> EncPosKey:
    """Owner-side layer: ``dec_perm`` every permutation with the owner's user key."""
    if isinstance(poskey, EncPosKey):
        raise ContractError("img_key_enc expects a plain position key")
    comps = _transform(poskey, ukey, forward=False)
    return EncPosKey(poskey.iid, comps, _xor_bytes(mac_digest(poskey), ukey.tagmask))


def kmc_transform(enc: EncPosKey, link: UserKey) -> EncPosKey:
    """Key-centre layer: ``enc_perm`` with a link or increment key, collapsing the
    previous layer by the permutation composition law."""
    comps = _transform(enc, link, forward=True)
    return EncPosKey(enc.iid, comps, _xor_bytes(enc.tag, link.tagmask))


def user_recover_pos_key(enc2: EncPosKey, ukey: UserKey) -> PosKey:
    """Strip the user's layer and verify the MAC tag."""
    comps = _transform(enc2, ukey, forward=False)
    cand = PosKey(enc2.iid, comps)
    if _xor_bytes(enc2.tag, ukey.tagmask) != mac_digest(cand):
        raise TamperError(f"position key for {enc2.iid} failed authentication")
    return cand


def derive_inc_usr_key(u_oid: UserKey, u_gid: UserKey, sizes=None) -> UserKey:
    return user_key_dec(u_oid, u_gid, sizes)


# ---------------------------------------------------------------- value-layer increments


@dataclass(eq=False)
class IncValKey:
    """Per-table deltas ``dec_perm(owner_table, group_table)``."""

    pmtv: list
    pmtdcl: list

    def __post_init__(self):
        self.pmtv = [np.asarray(t, dtype=np.int32).reshape(-1, 20) for t in self.pmtv]
        self.pmtdcl = [np.asarray(t, dtype=np.int32).reshape(-1, 10) for t in self.pmtdcl]

    @property
    def n_pmt1(self):
        return self.pmtv[0].shape[0]

    @property
    def n_pmt2(self):
        return self.pmtdcl[0].shape[0]

    def __eq__(self, other):
        if not isinstance(other, IncValKey):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.pmtv + self.pmtdcl, other.pmtv + other.pmtdcl))


def derive_inc_val_key(v_oid: ValKey, v_gid: ValKey) -> IncValKey:
    if (v_oid.n_pmt1, v_oid.n_pmt2) != (v_gid.n_pmt1, v_gid.n_pmt2):
        raise ContractError("owner and group value keys have different table counts")
    pmtv = [np.stack([perm.dec_perm(o, g) for o, g in zip(vo, vg)]) for vo, vg in zip(v_oid.pmtv, v_gid.pmtv)]
    pmtdcl = [np.stack([perm.dec_perm(o, g) for o, g in zip(vo, vg)])
              for vo, vg in zip(v_oid.pmtdcl, v_gid.pmtdcl)]
    return IncValKey(pmtv, pmtdcl)


def _inc_value_lut(inc_rows: np.ndarray) -> np.ndarray:
    # a ciphertext symbol at domain position x moves to position j with inc[j] = x
    lut = np.zeros((inc_rows.shape[0], 21), dtype=np.int16)
    for t, row in enumerate(inc_rows):
        inv = perm.inverse(row)
        lut[t, VALUE_DOMAIN + 10] = VALUE_DOMAIN[inv[_VALUE_POS[VALUE_DOMAIN + 10] - 1] - 1]
    return lut


def _inc_dclen_lut(inc_rows: np.ndarray) -> np.ndarray:
    return np.stack([perm.inverse(row) - 1 for row in inc_rows]).astype(np.int64)


def reencrypt_coefficients(cimg, inc: IncValKey, dc_residue=None):
    """Move the value layer of a ciphertext from the owner's tables to the group's.

    Returns ``(image, residue)``: the residue keeps keystream bits that drop
    out when a block's encrypted DC length shrinks, so decryption stays exact.
    """
    comps, residues = [], []
    for c, comp in enumerate(cimg.components):
        sq = SqntTable.cyclic(comp.blknum, inc.n_pmt1, inc.n_pmt2)
        vals = comp.values
        pair_tab = np.repeat(sq.sqnt1 - 1, comp.counts)
        in_range = (vals != 0) & (np.abs(vals) <= 10)
        new_v = vals.copy()
        new_v[in_range] = _inc_value_lut(inc.pmtv[c])[pair_tab[in_range], vals[in_range] + 10]
        L = comp.dc_size.astype(np.int64)
        full = comp.dc_bits.astype(np.int64)
        if dc_residue is not None:
            full = full | (np.asarray(dc_residue[c], dtype=np.int64) << L)
        small = L <= DCLEN_DOMAIN[-1]
        new_L = L.copy()
        new_L[small] = _inc_dclen_lut(inc.pmtdcl[c])[sq.sqnt2[small] - 1, L[small]]
        mask = np.left_shift(1, new_L) - 1
        comps.append(comp.with_arrays(dc_size=new_L, dc_bits=full & mask, v=new_v))
        residues.append((full >> new_L).astype(np.uint16))
    return cimg.with_components(comps), residues


def cs_reencrypt_for_group(enc_img: EncryptedImage, inc: IncValKey, gid: str = "") -> EncryptedImage:
    cimg, residue = reencrypt_coefficients(decode_jpeg(enc_img.jpeg), inc, enc_img.dc_residue)
    if not any(r.any() for r in residue):
        residue = None
    return EncryptedImage(enc_img.iid, encode_jpeg(cimg), owner=enc_img.owner,
                          scope=f"group:{gid}" if gid else enc_img.scope,
                          n_pmt1=enc_img.n_pmt1, n_pmt2=enc_img.n_pmt2, dc_residue=residue)


# ---------------------------------------------------------------- wrap envelope

WRAP_KEY_BYTES = 32
NONCE_BYTES = 12


def wrap_for_group(enc2: EncPosKey, key: bytes, nonce: bytes | None = None, source: KeySource | None = None) -> bytes:
    """AES-256-GCM over the serialized key: ``nonce || ciphertext || tag``."""
    if len(key) != WRAP_KEY_BYTES:
        raise ContractError("wrap keys are 32 bytes")
    if nonce is None:
        nonce = (source or KeySource()).token(NONCE_BYTES)
    aad = b"coeffcrypt.wrap\x00" + enc2.iid.encode("utf-8")
    return nonce + AESGCM(key).encrypt(nonce, container.dump_poskey(enc2), aad)


def unwrap(blob: bytes, key: bytes, iid: str) -> EncPosKey:
    if len(key) != WRAP_KEY_BYTES:
        raise ContractError("wrap keys are 32 bytes")
    if len(blob) < NONCE_BYTES + 16:
        raise TamperError("wrapped key too short")
    aad = b"coeffcrypt.wrap\x00" + iid.encode("utf-8")
    try:
        body = AESGCM(key).decrypt(blob[:NONCE_BYTES], blob[NONCE_BYTES:], aad)
    except InvalidTag as exc:
        raise TamperError(f"wrapped key for {iid} failed authentication") from exc
    out = container.load_poskey(body)
    if not isinstance(out, EncPosKey):
        raise FormatError("wrapped payload is not an encrypted position key")
    return out


def poskey_sizes(poskey: PosKey) -> set:
    """``(component, blknum)`` pairs a user key must cover to process ``poskey``."""
    return {(c, pk.blknum) for c, pk in enumerate(poskey.components)}
