"""Coefficient-domain image encryption.

Three stages run in a fixed order on every component: block permutation,
permutation of the ``(r, v)`` pairs inside each block, then value
substitution.  Substitution replaces every AC value in ``[-10, -1] U [1, 10]``
through one of ``N_pmt1`` per-component tables (table chosen cyclically by
ciphertext block position) and replaces each block's DC-difference bits with
``L`` keystream bits, where ``L`` comes from one of ``N_pmt2`` length tables.
The XOR of the keystream bits with the plaintext DC bits is kept as
``bitkey`` in the one-time :class:`PosKey`.

Tables are stored as one-based index permutations over an ordered domain
(``VALUE_DOMAIN`` or ``DCLEN_DOMAIN``), so the increment-key algebra of
:mod:`coeffcrypt.perm` applies to them unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import perm
from .codec import CoeffImage, Component, decode_jpeg, encode_jpeg
from .errors import ContractError, KeyMismatchError
from .perm import KeySource, SeedKey

VALUE_DOMAIN = np.array(list(range(-10, 0)) + list(range(1, 11)), dtype=np.int16)
DCLEN_DOMAIN = np.arange(10, dtype=np.int16)
DEFAULT_N_PMT = 5
DC_STREAM_BITS = 16
COMPONENTS = ("Y", "U", "V")

# position of v in VALUE_DOMAIN (1-based), indexed by v + 10; 0 for v = 0
_VALUE_POS = np.zeros(21, dtype=np.int32)
_VALUE_POS[VALUE_DOMAIN + 10] = np.arange(1, 21)


# --------------------------------------------------------------------------- keys


@dataclass(eq=False)
class ValKey:
    """Owner value key: substitution tables per component."""

    pmtv: list  # per component: int32 (N_pmt1, 20), rows are 1-based perms of VALUE_DOMAIN positions
    pmtdcl: list  # per component: int32 (N_pmt2, 10), rows are 1-based perms of DCLEN_DOMAIN positions

    def __post_init__(self):
        self.pmtv = [np.asarray(t, dtype=np.int32).reshape(-1, 20) for t in self.pmtv]
        self.pmtdcl = [np.asarray(t, dtype=np.int32).reshape(-1, 10) for t in self.pmtdcl]
        if len(self.pmtv) != 3 or len(self.pmtdcl) != 3:
            raise ContractError("value keys carry tables for exactly three components")
        n1 = {t.shape[0] for t in self.pmtv}
        n2 = {t.shape[0] for t in self.pmtdcl}
        if len(n1) != 1 or len(n2) != 1 or 0 in n1 or 0 in n2:
            raise ContractError("every component needs the same non-zero table count")
        for t in self.pmtv + self.pmtdcl:
            for row in t:
                perm.check_permutation(row)

    @property
    def n_pmt1(self) -> int:
        return self.pmtv[0].shape[0]

    @property
    def n_pmt2(self) -> int:
        return self.pmtdcl[0].shape[0]

    def value_table(self, c: int, t: int) -> np.ndarray:
        """Table ``t`` (0-based) of component ``c`` as the substituted symbol sequence."""
        return VALUE_DOMAIN[self.pmtv[c][t] - 1]

    def value_lut(self, c: int) -> np.ndarray:
        """(N_pmt1, 21) lookup: row t maps ``v + 10`` to its substitute; 0 stays 0."""
        lut = np.zeros((self.n_pmt1, 21), dtype=np.int16)
        lut[:, VALUE_DOMAIN + 10] = VALUE_DOMAIN[self.pmtv[c] - 1]
        return lut

    def value_inverse_lut(self, c: int) -> np.ndarray:
        lut = np.zeros((self.n_pmt1, 21), dtype=np.int16)
        rows = np.arange(self.n_pmt1)[:, None]
        lut[rows, VALUE_DOMAIN[self.pmtv[c] - 1] + 10] = VALUE_DOMAIN
        return lut

    def dclen_lut(self, c: int) -> np.ndarray:
        """(N_pmt2, 10) lookup: row t maps a DC group index 0..9 to its encrypted length."""
        return (self.pmtdcl[c] - 1).astype(np.int16)

    def __eq__(self, other):
        if not isinstance(other, ValKey):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.pmtv + self.pmtdcl, other.pmtv + other.pmtdcl))


def val_seed_roles():
    return [f"key_v{c}" for c in COMPONENTS] + [f"key_l{c}" for c in COMPONENTS]


def gen_val_key(seeds, n_pmt1: int = DEFAULT_N_PMT, n_pmt2: int = DEFAULT_N_PMT) -> ValKey:
    """Derive a :class:`ValKey` from the six value seeds (``key_v*``, ``key_l*``).

    ``seeds`` is a mapping from role to :class:`SeedKey`, or a :class:`KeySource`
    from which fresh seeds are drawn.
    """
    if n_pmt1 < 1 or n_pmt2 < 1:
        raise ContractError("table counts must be at least 1")
    if isinstance(seeds, KeySource):
        seeds = seeds.seed_keys(val_seed_roles())
    pmtv, pmtdcl = [], []
    for c, name in enumerate(COMPONENTS):
        kv, kl = seeds[f"key_v{name}"], seeds[f"key_l{name}"]
        pmtv.append(np.stack([perm.rand_perm(kv, 20, ("pmtv", name, t)) for t in range(1, n_pmt1 + 1)]))
        pmtdcl.append(np.stack([perm.rand_perm(kl, 10, ("pmtDCL", name, t)) for t in range(1, n_pmt2 + 1)]))
    return ValKey(pmtv, pmtdcl)


@dataclass(eq=False)
class PosKeyComponent:
    """Position key of one component, indexed by ciphertext block position."""

    pmtb: np.ndarray  # int32 (n,)
    counts: np.ndarray  # int32 (n,) pairs per block
    pmtp: np.ndarray  # int32 flat, one 1-based perm per block, concatenated
    bitkey: np.ndarray  # uint16 (n,)
    bitkey_len: np.ndarray  # uint8 (n,)
    plain_dc_len: np.ndarray  # uint8 (n,)

    def __post_init__(self):
        self.pmtb = np.ascontiguousarray(self.pmtb, dtype=np.int32)
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int32)
        self.pmtp = np.ascontiguousarray(self.pmtp, dtype=np.int32)
        self.bitkey = np.ascontiguousarray(self.bitkey, dtype=np.uint16)
        self.bitkey_len = np.ascontiguousarray(self.bitkey_len, dtype=np.uint8)
        self.plain_dc_len = np.ascontiguousarray(self.plain_dc_len, dtype=np.uint8)

    @property
    def blknum(self) -> int:
        return int(self.pmtb.size)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts, dtype=np.int64)])

    def block_perm(self, j: int) -> np.ndarray:
        o = self.offsets
        return self.pmtp[o[j]:o[j + 1]]

    def __eq__(self, other):
        if not isinstance(other, PosKeyComponent):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in
                   ("pmtb", "counts", "pmtp", "bitkey", "bitkey_len", "plain_dc_len"))


@dataclass(eq=False)
class PosKey:
    """One-time position key of an image."""

    iid: str
    components: list

    def __eq__(self, other):
        if not isinstance(other, PosKey) or type(self) is not type(other):
            return NotImplemented
        return self.iid == other.iid and all(a == b for a, b in zip(self.components, other.components))


@dataclass
class SqntTable:
    """Cyclic table-selection sequences; entry i is the 1-based table for block i."""

    sqnt1: np.ndarray
    sqnt2: np.ndarray

    @classmethod
    def cyclic(cls, blknum: int, n_pmt1: int, n_pmt2: int) -> "SqntTable":
        i = np.arange(blknum)
        return cls(i % n_pmt1 + 1, i % n_pmt2 + 1)


# --------------------------------------------------------------------------- encrypted image


@dataclass
class EncryptedImage:
    iid: str
    jpeg: bytes
    owner: str = ""
    scope: str = ""
    n_pmt1: int = DEFAULT_N_PMT
    n_pmt2: int = DEFAULT_N_PMT
    # high DC keystream bits that no longer fit after a length change (group re-encryption)
    dc_residue: list | None = None

    def decode(self) -> CoeffImage:
        return decode_jpeg(self.jpeg)

    def sidecar(self) -> dict:
        out = {"iid": self.iid, "owner": self.owner, "scope": self.scope,
               "n_pmt1": self.n_pmt1, "n_pmt2": self.n_pmt2}
        if self.dc_residue is not None:
            out["dc_residue"] = [np.asarray(r, dtype=np.uint16).tobytes().hex() for r in self.dc_residue]
        return out

    @classmethod
    def from_sidecar(cls, jpeg: bytes, meta: dict) -> "EncryptedImage":
        res = meta.get("dc_residue")
        if res is not None:
            res = [np.frombuffer(bytes.fromhex(h), dtype=np.uint16).copy() for h in res]
        return cls(meta["iid"], jpeg, meta.get("owner", ""), meta.get("scope", ""),
                   int(meta.get("n_pmt1", DEFAULT_N_PMT)), int(meta.get("n_pmt2", DEFAULT_N_PMT)), res)


# --------------------------------------------------------------------------- stages


def _gather_blocks(comp: Component, order: np.ndarray) -> Component:
    """Component whose block i is ``comp``'s block ``order[i]`` (0-based)."""
    counts = comp.counts[order]
    starts = comp.offsets[:-1][order]
    total = int(counts.sum())
    new_off = np.concatenate([[0], np.cumsum(counts)])
    if total:
        idx = np.repeat(starts - new_off[:-1], counts) + np.arange(total)
    else:
        idx = np.zeros(0, dtype=np.int64)
    return comp.with_arrays(
        dc_size=comp.dc_size[order], dc_bits=comp.dc_bits[order], eob=comp.eob[order],
        offsets=new_off, r=comp.r[idx], v=comp.values[idx],
    )


def block_permute(img: CoeffImage, keys=None, iid: str = "", pmtb=None, inverse: bool = False):
    """Reorder blocks per component: ``blk'[i] = blk[pmtb[i]]``.

    Either ``keys`` (role -> SeedKey with ``key_blo*``) or explicit ``pmtb``
    (one permutation per component) must be given.  With ``inverse=True`` the
    given ``pmtb`` is undone instead.  Returns ``(image, pmtb_list)``.
    """
    if pmtb is None:
        if keys is None:
            raise ContractError("block_permute needs seed keys or explicit permutations")
        pmtb = [perm.rand_perm(keys[f"key_blo{name}"], comp.blknum, ("pmtb", iid, name))
                for name, comp in zip(COMPONENTS, img.components)]
    out = []
    for comp, p in zip(img.components, pmtb):
        p = np.asarray(p)
        if p.size != comp.blknum:
            raise ContractError(f"block permutation of length {p.size} for {comp.blknum} blocks")
        perm.check_permutation(p)
        order = perm.inverse(p) - 1 if inverse else p - 1
        out.append(_gather_blocks(comp, order))
    return img.with_components(out), [np.asarray(p, dtype=np.int32) for p in pmtb]


def _intra_index(counts: np.ndarray, pmtp: np.ndarray) -> np.ndarray:
    offsets = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)])
    return np.repeat(offsets[:-1], counts) + pmtp.astype(np.int64) - 1


def intra_block_permute(img: CoeffImage, keys=None, iid: str = "", pmtp=None, inverse: bool = False):
    """Reorder the non-EOB pairs inside every block: ``blk'_j[i] = blk_j[pmtp_j[i]]``.

    ``pmtp`` is one flat array per component holding each block's permutation
    in block order.  Returns ``(image, pmtp_list)``.
    """
    if pmtp is None:
        if keys is None:
            raise ContractError("intra_block_permute needs seed keys or explicit permutations")
        pmtp = [perm.rand_perm_batch(keys[f"key_inblo{name}"], comp.counts, ("pmtp", iid, name))
                for name, comp in zip(COMPONENTS, img.components)]
    out = []
    for comp, p in zip(img.components, pmtp):
        p = np.asarray(p, dtype=np.int32)
        counts = comp.counts
        if p.size != comp.r.size:
            raise ContractError(f"intra-block permutations cover {p.size} pairs, image has {comp.r.size}")
        if p.size and (p.min() < 1 or (p > np.repeat(counts, counts)).any()):
            raise ContractError("intra-block permutation entry out of range")
        idx = _intra_index(counts, p)
        if inverse:
            r = np.empty_like(comp.r)
            v = np.empty_like(comp.values)
            r[idx] = comp.r
            v[idx] = comp.values
        else:
            r, v = comp.r[idx], comp.values[idx]
        out.append(comp.with_arrays(r=r, v=v))
    return img.with_components(out), pmtp


def _mask(bits) -> np.ndarray:
    return (np.left_shift(1, np.asarray(bits, dtype=np.int64)) - 1)


def value_substitute(img: CoeffImage, valkey: ValKey, keys=None, iid: str = "", dc_streams=None):
    """Substitute AC values and DC bits.

    ``keys`` supplies ``key_dc*``; alternatively ``dc_streams`` gives the
    16-bit keystream word of every block per component.  Returns
    ``(image, bitkeys, bitkey_lens, plain_dc_lens)``, each a per-component list.
    """
    comps, bitkeys, bitlens, plains = [], [], [], []
    for c, (name, comp) in enumerate(zip(COMPONENTS, img.components)):
        n = comp.blknum
        sq = SqntTable.cyclic(n, valkey.n_pmt1, valkey.n_pmt2)
        # AC values
        vals = comp.values
        pair_tab = np.repeat(sq.sqnt1 - 1, comp.counts)
        in_range = (vals != 0) & (np.abs(vals) <= 10)
        new_v = vals.copy()
        lut = valkey.value_lut(c)
        new_v[in_range] = lut[pair_tab[in_range], vals[in_range] + 10]
        # DC bits
        if dc_streams is not None:
            stream = np.asarray(dc_streams[c], dtype=np.int64)
        else:
            stream = dc_keystream(keys[f"key_dc{name}"], iid, name, n)
        g = comp.dc_size.astype(np.int64)
        dl = valkey.dclen_lut(c)
        small = g <= 9
        L = g.copy()
        L[small] = dl[sq.sqnt2[small] - 1, g[small]]
        enc_dc = stream & _mask(L)
        bitkey = enc_dc ^ comp.dc_bits.astype(np.int64)
        comps.append(comp.with_arrays(dc_size=L, dc_bits=enc_dc, v=new_v))
        bitkeys.append(bitkey.astype(np.uint16))
        bitlens.append(np.maximum(g, L).astype(np.uint8))
        plains.append(g.astype(np.uint8))
    return img.with_components(comps), bitkeys, bitlens, plains


def dc_keystream(key: SeedKey, iid: str, comp_name: str, n: int) -> np.ndarray:
    """One 16-bit keystream word per block (block j uses bits 16j..16j+15)."""
    raw = perm.stm_ciph_bytes(key, 2 * n, ("bitdc", iid, comp_name))
    return np.frombuffer(raw, dtype=">u2").astype(np.int64)


def value_unsubstitute(img: CoeffImage, valkey: ValKey, poskey: PosKey, dc_residue=None) -> CoeffImage:
    comps = []
    for c, (comp, pk) in enumerate(zip(img.components, poskey.components)):
        n = comp.blknum
        sq = SqntTable.cyclic(n, valkey.n_pmt1, valkey.n_pmt2)
        vals = comp.values
        pair_tab = np.repeat(sq.sqnt1 - 1, comp.counts)
        in_range = (vals != 0) & (np.abs(vals) <= 10)
        new_v = vals.copy()
        inv = valkey.value_inverse_lut(c)
        new_v[in_range] = inv[pair_tab[in_range], vals[in_range] + 10]
        full = comp.dc_bits.astype(np.int64)
        if dc_residue is not None:
            full = full | (np.asarray(dc_residue[c], dtype=np.int64) << comp.dc_size.astype(np.int64))
        g = pk.plain_dc_len.astype(np.int64)
        dc = (full ^ pk.bitkey.astype(np.int64)) & _mask(g)
        comps.append(comp.with_arrays(dc_size=g, dc_bits=dc, v=new_v))
    return img.with_components(comps)


# --------------------------------------------------------------------------- full pipeline


def pos_seed_roles():
    return [f"{k}{c}" for k in ("key_blo", "key_inblo", "key_dc") for c in COMPONENTS]


def encrypt_coefficients(img: CoeffImage, iid: str, valkey: ValKey, source: KeySource | None = None,
                         pos_seeds=None):
    """Coefficient-level encryption; returns ``(cipher CoeffImage, PosKey)``."""
    if pos_seeds is None:
        pos_seeds = (source or KeySource()).seed_keys(pos_seed_roles())
    img1, pmtb = block_permute(img, pos_seeds, iid)
    img2, pmtp = intra_block_permute(img1, pos_seeds, iid)
    img3, bitkeys, bitlens, plains = value_substitute(img2, valkey, pos_seeds, iid)
    comps = [PosKeyComponent(pmtb[c], img2.components[c].counts, pmtp[c], bitkeys[c], bitlens[c], plains[c])
             for c in range(3)]
    return img3, PosKey(iid, comps)


def img_enc(img: CoeffImage, iid: str, valkey: ValKey, source: KeySource | None = None,
            owner: str = "", pos_seeds=None):
    """Encrypt ``img`` and serialize it as JPEG.

    Returns ``(EncryptedImage, PosKey, ValKey)``; the value key is the owner's
    persistent key passed in.
    """
    cimg, poskey = encrypt_coefficients(img, iid, valkey, source, pos_seeds)
    enc = EncryptedImage(iid, encode_jpeg(cimg), owner=owner, scope=f"owner:{owner}" if owner else "",
                         n_pmt1=valkey.n_pmt1, n_pmt2=valkey.n_pmt2)
    return enc, poskey, valkey


def _check_congruent(img: CoeffImage, poskey: PosKey):
    if len(poskey.components) != 3:
        raise KeyMismatchError("position key must have three components")
    for name, comp, pk in zip(COMPONENTS, img.components, poskey.components):
        if pk.blknum != comp.blknum or pk.bitkey.size != comp.blknum or pk.plain_dc_len.size != comp.blknum:
            raise KeyMismatchError(f"position key block count differs from ciphertext ({name})")
        if not np.array_equal(pk.counts, comp.counts) or pk.pmtp.size != comp.r.size:
            raise KeyMismatchError(f"position key pair layout differs from ciphertext ({name})")
        if not perm.is_permutation(pk.pmtb):
            raise KeyMismatchError(f"position key block permutation is not a permutation ({name})")
        if pk.pmtp.size and (pk.pmtp.min() < 1 or (pk.pmtp > np.repeat(pk.counts, pk.counts)).any()):
            raise KeyMismatchError(f"position key intra-block permutation out of range ({name})")


def decrypt_coefficients(cimg: CoeffImage, poskey: PosKey, valkey: ValKey, dc_residue=None) -> CoeffImage:
    _check_congruent(cimg, poskey)
    img = value_unsubstitute(cimg, valkey, poskey, dc_residue)
    try:
        img, _ = intra_block_permute(img, pmtp=[pk.pmtp for pk in poskey.components], inverse=True)
        img, _ = block_permute(img, pmtb=[pk.pmtb for pk in poskey.components], inverse=True)
    except ContractError as exc:
        raise KeyMismatchError(str(exc)) from exc
    return img


def img_dec(enc, poskey: PosKey, valkey: ValKey) -> CoeffImage:
    """Invert :func:`img_enc`.  ``enc`` is an :class:`EncryptedImage` or a ciphertext CoeffImage."""
    if isinstance(enc, EncryptedImage):
        return decrypt_coefficients(enc.decode(), poskey, valkey, enc.dc_residue)
    return decrypt_coefficients(enc, poskey, valkey)


def trap_gen(query: CoeffImage, authorized, source: KeySource | None = None, qid: str = "query"):
    """Encrypt a query once per authorizing owner.

    ``authorized`` is a list of ``(owner_id, ValKey)``.  Each trapdoor uses a
    fresh position key and one further block permutation; no keys are kept.
    """
    authorized = list(authorized)
    if not authorized:
        raise ContractError("trapdoor generation needs at least one authorization")
    source = source or KeySource()
    out = []
    for oid, valkey in authorized:
        cimg, _ = encrypt_coefficients(query, qid, valkey, source)
        extra = source.seed_keys([f"key_blo{c}" for c in COMPONENTS])
        cimg, _ = block_permute(cimg, extra, qid)
        out.append((oid, EncryptedImage(qid, encode_jpeg(cimg), owner=oid, scope=f"owner:{oid}",
                                        n_pmt1=valkey.n_pmt1, n_pmt2=valkey.n_pmt2)))
    return out


# --------------------------------------------------------------------------- security accounting


def _log2_factorial(n) -> float:
    return math.lgamma(int(n) + 1) / math.log(2)


def security_strength(img: CoeffImage, n_pmt1: int = DEFAULT_N_PMT, n_pmt2: int = DEFAULT_N_PMT,
                      encrypted_dc_bits: int | None = None) -> dict:
    """Key-space terms (in bits) of the encryption of ``img``.

    ``encrypted_dc_bits`` is the total encrypted DC length; when omitted the
    plaintext DC lengths are used.
    """
    value_tables = 3 * n_pmt1 * _log2_factorial(20)
    dclen_tables = 3 * n_pmt2 * _log2_factorial(10)
    block = sum(_log2_factorial(c.blknum) for c in img.components)
    intra = sum(float(np.sum([_log2_factorial(s) for s in c.counts.tolist()])) for c in img.components)
    if encrypted_dc_bits is None:
        encrypted_dc_bits = int(sum(int(c.dc_size.astype(np.int64).sum()) for c in img.components))
    terms = {
        "value_tables": value_tables,
        "block_permutation": block,
        "intra_block_permutation": intra,
        "dc_length_tables": dclen_tables,
        "dc_bits": float(encrypted_dc_bits),
    }
    terms["total"] = sum(terms.values())
    terms["feature_tables"] = value_tables + dclen_tables
    return terms
