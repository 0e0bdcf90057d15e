"""Linear index over bag-of-words features, top-m search and evaluation helpers.

Each row holds one image's features under several vocabularies, keyed by a
scope tag:

    owner:<oid>     the owner's own vocabulary
    global:<oid>    the owner's vocabulary built with the shared k_g
    group:<gid>     the group vocabulary
    gglobal:<gid>   the group vocabulary built with the shared k_g

Search is an exact linear scan.  Ties are broken by iid so results are
deterministic.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AuthorizationError, ContractError, DuplicateError, FormatError, NotFoundError
from .features import DC_BINS, WEIGHTS, BowFeature

MAGIC = b"CCIX"
VERSION = 1
SCOPE_KINDS = ("owner", "global", "group", "gglobal")


def scope_tag(kind: str, ident: str) -> str:
    if kind not in SCOPE_KINDS:
        raise ContractError(f"unknown scope kind {kind!r}")
    return f"{kind}:{ident}"


def parse_scope(tag: str):
    kind, sep, ident = tag.partition(":")
    if not sep or kind not in SCOPE_KINDS or not ident:
        raise ContractError(f"malformed scope tag {tag!r}")
    return kind, ident


def feature_k(feat: BowFeature) -> int:
    return int(feat.y.size)


@dataclass(eq=False)
class IndexRow:
    iid: str
    owner: str
    features: dict = field(default_factory=dict)  # scope tag -> BowFeature

    def __eq__(self, other):
        if not isinstance(other, IndexRow):
            return NotImplemented
        return (self.iid, self.owner) == (other.iid, other.owner) and self.features == other.features


@dataclass(frozen=True)
class Hit:
    iid: str
    source: str  # owner or group id
    distance: float
    scope: str = ""


class SearchResult(list):
    """Ranked hits, non-decreasing in distance."""

    @property
    def iids(self):
        return [h.iid for h in self]


def _rank(hits, m):
    if m < 1:
        raise ContractError("m must be at least 1")
    hits.sort(key=lambda h: (h.distance, h.iid, h.scope))
    return SearchResult(hits[:m])


class LinearIndex:
    """Rows keyed by iid.  Single-writer; reads do not mutate."""

    def __init__(self, weights=WEIGHTS):
        self.weights = tuple(float(w) for w in weights)
        self.rows = {}
        self.scope_k = {}

    def __len__(self):
        return len(self.rows)

    def __contains__(self, iid):
        return iid in self.rows

    def __eq__(self, other):
        if not isinstance(other, LinearIndex):
            return NotImplemented
        return self.weights == other.weights and self.scope_k == other.scope_k and self.rows == other.rows

    def scopes(self):
        return sorted(self.scope_k)

    def _claim_scope(self, scope, feat):
        parse_scope(scope)
        k = feature_k(feat)
        if feat.dc.size != 3 * DC_BINS or feat.u.size != k or feat.v.size != k:
            raise ContractError(f"feature for scope {scope} has inconsistent part sizes")
        known = self.scope_k.get(scope)
        if known is not None and known != k:
            raise ContractError(f"scope {scope} holds k={known}, feature has k={k}")
        return k

    # ---------------------------------------------------------------- updates

    def add(self, row: IndexRow):
        if row.iid in self.rows:
            raise DuplicateError(f"image {row.iid} is already indexed")
        for kind in ("owner", "global"):
            if scope_tag(kind, row.owner) not in row.features:
                raise ContractError(f"row {row.iid} lacks its {kind} scope")
        ks = {scope: self._claim_scope(scope, f) for scope, f in row.features.items()}
        self.scope_k.update(ks)
        self.rows[row.iid] = IndexRow(row.iid, row.owner, dict(row.features))

    def delete(self, iid: str) -> IndexRow:
        try:
            row = self.rows.pop(iid)
        except KeyError:
            raise NotFoundError(f"image {iid} is not indexed") from None
        self._prune_scopes()
        return row

    def set_scope(self, iid: str, scope: str, feat: BowFeature):
        """Attach (or replace) one scope column on an existing row."""
        if iid not in self.rows:
            raise NotFoundError(f"image {iid} is not indexed")
        self.scope_k[scope] = self._claim_scope(scope, feat)
        self.rows[iid].features[scope] = feat

    def drop_scope(self, scope: str, iids=None) -> list:
        """Remove a scope column from the given rows (all rows if None)."""
        dropped = []
        for iid in sorted(self.rows if iids is None else iids):
            row = self.rows.get(iid)
            if row is not None and row.features.pop(scope, None) is not None:
                dropped.append(iid)
        self._prune_scopes()
        return dropped

    def _prune_scopes(self):
        live = {s for row in self.rows.values() for s in row.features}
        for s in list(self.scope_k):
            if s not in live:
                del self.scope_k[s]

    # ---------------------------------------------------------------- search

    def _scan(self, feat, scope):
        if scope not in self.scope_k:
            raise ContractError(f"unknown scope {scope}")
        if feature_k(feat) != self.scope_k[scope]:
            raise ContractError(f"trapdoor has k={feature_k(feat)}, scope {scope} has k={self.scope_k[scope]}")
        iids = sorted(i for i, r in self.rows.items() if scope in r.features)
        if not iids:
            return []
        dist = np.zeros(len(iids))
        for part, w in enumerate(self.weights):
            mat = np.stack([self.rows[i].features[scope].parts[part] for i in iids])
            dist += w * np.abs(mat - feat.parts[part]).sum(axis=1)
        source = parse_scope(scope)[1]
        return [Hit(i, source, float(d), scope) for i, d in zip(iids, dist)]

    def search_single(self, feat: BowFeature, scope: str, m: int) -> SearchResult:
        return _rank(self._scan(feat, scope), m)

    def search_multi(self, trapdoors: dict, m: int, authorized=None) -> SearchResult:
        """Merge per-source rankings; ``trapdoors`` maps scope tag to feature.

        All scopes must share one k so that their distances are comparable.
        ``authorized`` (a set of scope tags) rejects any source outside it.
        """
        if not trapdoors:
            raise ContractError("no sources given")
        if authorized is not None:
            bad = sorted(set(trapdoors) - set(authorized))
            if bad:
                raise AuthorizationError(f"not authorized for {', '.join(bad)}")
        ks = set()
        for scope in trapdoors:
            if scope not in self.scope_k:
                raise ContractError(f"unknown scope {scope}")
            ks.add(self.scope_k[scope])
        if len(ks) > 1:
            raise ContractError(f"sources use different vocabulary sizes {sorted(ks)}")
        hits = []
        for scope in sorted(trapdoors):
            hits.extend(self._scan(trapdoors[scope], scope))
        return _rank(hits, m)

    # ---------------------------------------------------------------- persistence

    def to_bytes(self) -> bytes:
        scopes = self.scopes()
        pos = {s: j for j, s in enumerate(scopes)}
        out = [MAGIC, bytes([VERSION]), struct.pack(">4d", *self.weights), struct.pack(">H", len(scopes))]
        for s in scopes:
            out.append(_text(s) + struct.pack(">I", self.scope_k[s]))
        out.append(struct.pack(">I", len(self.rows)))
        for iid in sorted(self.rows):
            row = self.rows[iid]
            out.append(_text(iid) + _text(row.owner) + struct.pack(">H", len(row.features)))
            for s in sorted(row.features):
                out.append(struct.pack(">H", pos[s]) + row.features[s].vector().astype(">f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "LinearIndex":
        rd = _Reader(bytes(buf))
        if rd.raw(4) != MAGIC:
            raise FormatError("not an index file (bad magic)")
        ver = rd.unpack(">B")
        if ver != VERSION:
            raise FormatError(f"unsupported index version {ver}")
        idx = cls(rd.unpack(">4d"))
        scopes = []
        for _ in range(rd.unpack(">H")):
            s = rd.text()
            scopes.append((s, rd.unpack(">I")))
        for _ in range(rd.unpack(">I")):
            iid, owner = rd.text(), rd.text()
            feats = {}
            for _ in range(rd.unpack(">H")):
                j = rd.unpack(">H")
                if j >= len(scopes):
                    raise FormatError(f"scope index {j} out of range")
                s, k = scopes[j]
                vec = np.frombuffer(rd.raw(8 * (3 * DC_BINS + 3 * k)), dtype=">f8").astype(np.float64)
                feats[s] = BowFeature.from_vector(vec, k)
            idx.add(IndexRow(iid, owner, feats))
        if rd.pos != len(rd.buf):
            raise FormatError("trailing bytes in index file")
        return idx

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LinearIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _text(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(">H", len(b)) + b


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"index file truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        out = struct.unpack(fmt, self.raw(struct.calcsize(fmt)))
        return out if len(out) > 1 else out[0]

    def text(self):
        return self.raw(self.unpack(">H")).decode("utf-8")


# ---------------------------------------------------------------- evaluation


def k_suggest(k_sug, ratio: float, n_source: int) -> int:
    """Shared vocabulary size: mean(k_sug) * log2(1 + 1/ratio) * log2(1 + n_source)."""
    k_sug = list(k_sug)
    if not k_sug:
        raise ContractError("k_suggest needs at least one per-source suggestion")
    if not 0 < ratio <= 1:
        raise ContractError(f"ratio must lie in (0, 1], got {ratio}")
    if n_source < 1:
        raise ContractError("n_source must be at least 1")
    k = float(np.mean(k_sug)) * math.log2(1 + 1 / ratio) * math.log2(1 + n_source)
    return max(1, int(math.floor(k + 0.5)))


def elbow_k(ks, objectives) -> int:
    """Crude elbow: the k farthest below the chord joining the first and last points."""
    ks = np.asarray(ks, dtype=np.float64)
    obj = np.asarray(objectives, dtype=np.float64)
    if ks.size == 0 or ks.size != obj.size:
        raise ContractError("elbow_k needs equally long, nonempty k and objective lists")
    if ks.size < 3:
        return int(ks[0])
    x = (ks - ks[0]) / max(ks[-1] - ks[0], 1e-12)
    span = obj[0] - obj[-1]
    y = (obj - obj[-1]) / span if span != 0 else np.zeros_like(obj)
    return int(ks[int(np.argmax((1 - x) - y))])


def precision(result, categories: dict, query_category, m: int) -> float:
    """P_m = m'/m where m' counts top-m hits sharing the query's category."""
    if m < 1:
        raise ContractError("m must be at least 1")
    hits = list(result)[:m]
    return sum(1 for h in hits if categories.get(getattr(h, "iid", h)) == query_category) / m


def results_csv(rows, categories=None) -> str:
    """CSV of ``(query id, SearchResult[, query category])`` tuples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query", "rank", "iid", "source", "distance", "correct"])
    for item in rows:
        qid, res = item[0], item[1]
        qcat = item[2] if len(item) > 2 else None
        for rank, h in enumerate(res, 1):
            correct = "" if categories is None else int(categories.get(h.iid) == qcat)
            w.writerow([qid, rank, h.iid, h.source, repr(h.distance), correct])
    return buf.getvalue()
