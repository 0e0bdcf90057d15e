"""Retrieval features computed directly on ciphertext coefficients.

Per image: a 30-dim DC-length histogram (10 bins per component) and, per
block, a 40-dim local AC histogram ``Hist_s || Hist_v || Hist_r``.  Local
histograms are quantized against per-component k-means vocabularies into
tf-idf weighted bag-of-words vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import CoeffImage, Component
from .errors import ContractError

HIST_DIM = 40
HIST_S, HIST_V, HIST_R = 3, 23, 14
DC_BINS = 10
WEIGHTS = (0.1, 0.5, 0.2, 0.2)
KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6
VOCAB_RESTARTS = 3


def extract_dc_feature(img: CoeffImage) -> np.ndarray:
    """Counts of blocks per DC group index 0..9, per component (30 values)."""
    out = np.zeros(3 * DC_BINS, dtype=np.float64)
    for c, comp in enumerate(img.components):
        g = comp.dc_size
        out[c * DC_BINS:(c + 1) * DC_BINS] = np.bincount(g[g < DC_BINS], minlength=DC_BINS)
    return out


def normalized_dc_feature(img: CoeffImage) -> np.ndarray:
    out = extract_dc_feature(img)
    for c, comp in enumerate(img.components):
        out[c * DC_BINS:(c + 1) * DC_BINS] /= max(comp.blknum, 1)
    return out


def v_bins(v: np.ndarray) -> np.ndarray:
    """Hist_v bin of each value: ``v + 10`` in range, 21 above, 22 below."""
    v = np.asarray(v, dtype=np.int64)
    return np.where(v > 10, 21, np.where(v < -10, 22, v + 10))


def component_hists(comp: Component) -> np.ndarray:
    n = comp.blknum
    out = np.zeros((n, HIST_DIM), dtype=np.float64)
    counts = comp.counts
    if n == 0:
        return out
    block = comp.pair_block
    r = comp.r.astype(np.float64)
    cnt = counts.astype(np.float64)
    safe = np.maximum(cnt, 1)
    s1 = np.bincount(block, weights=r, minlength=n)
    s2 = np.bincount(block, weights=r * r, minlength=n)
    mean = s1 / safe
    var = np.maximum(s2 / safe - mean * mean, 0.0)
    out[:, 0] = cnt
    out[:, 1] = mean
    out[:, 2] = np.sqrt(var)
    if block.size:
        hv = np.bincount(block * HIST_V + v_bins(comp.values), minlength=n * HIST_V)
        out[:, HIST_S:HIST_S + HIST_V] = hv.reshape(n, HIST_V)
    hr = np.full((n, HIST_R), -1.0)
    if block.size:
        order = np.lexsort((-comp.r.astype(np.int64), block))
        rank = np.arange(block.size) - comp.offsets[:-1][block[order]]
        keep = rank < HIST_R
        hr[block[order][keep], rank[keep]] = comp.r[order][keep]
    out[:, HIST_S + HIST_V:] = hr
    return out


def extract_local_hists(img: CoeffImage) -> list:
    """One ``(blknum, 40)`` array per component."""
    return [component_hists(comp) for comp in img.components]


def block_hist(pairs) -> np.ndarray:
    """Local histogram of a single block given as a list of ``(r, v)`` pairs."""
    out = np.zeros(HIST_DIM)
    if pairs:
        r = np.array([p[0] for p in pairs], dtype=np.float64)
        out[0] = len(pairs)
        out[1] = r.mean()
        out[2] = r.std()
        for p in pairs:
            out[HIST_S + int(v_bins(np.array([p[1]]))[0])] += 1
    rs = sorted((p[0] for p in pairs), reverse=True)[:HIST_R]
    out[HIST_S + HIST_V:] = rs + [-1] * (HIST_R - len(rs))
    return out


# ---------------------------------------------------------------- k-means


def _sq_dists(x: np.ndarray, c: np.ndarray, x_sq=None) -> np.ndarray:
    if x_sq is None:
        x_sq = np.einsum("ij,ij->i", x, x)
    d = x_sq[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    return np.maximum(d, 0.0)


def assign(x: np.ndarray, centroids: np.ndarray, chunk: int = 16384, x_sq=None):
    """Nearest-centroid index (lowest index wins ties) and squared distance."""
    labels = np.empty(x.shape[0], dtype=np.int64)
    best = np.empty(x.shape[0])
    if x_sq is None:
        x_sq = np.einsum("ij,ij->i", x, x)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    ct2 = -2.0 * centroids.T
    for lo in range(0, x.shape[0], chunk):
        # the per-point norm does not affect the argmin
        d = x[lo:lo + chunk] @ ct2
        d += c_sq
        lab = d.argmin(axis=1)
        labels[lo:lo + chunk] = lab
        best[lo:lo + chunk] = d[np.arange(d.shape[0]), lab]
    best += x_sq
    np.maximum(best, 0.0, out=best)
    return labels, best


def _cluster_sums(xt, labels, k):
    """Per-cluster sums from the transposed (contiguous) data."""
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=row, minlength=k) for row in xt], axis=1)
    return sums, counts


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d = _sq_dists(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = d.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[i] = x[idx]
        d = np.minimum(d, _sq_dists(x, centers[i:i + 1])[:, 0])
    return centers


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    iterations: int = 0


def kmeans(x, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOL,
           n_init: int = 1) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded with the point farthest from its centroid.
    Stops when the objective improves by less than ``tol`` relative, or after
    ``max_iter`` iterations.  With ``n_init > 1`` the run with the lowest
    objective among ``n_init`` seeded restarts is kept.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ContractError("k must be at least 1")
    if n < k:
        raise ContractError(f"{n} points cannot form {k} clusters")
    best = None
    for run in range(n_init):
        res = _lloyd(x, k, np.random.default_rng([seed, run]), max_iter, tol)
        if best is None or res.objective < best.objective:
            best = res
    return best


def _lloyd(x, k, rng, max_iter, tol) -> KMeansResult:
    centroids = kmeans_pp_init(x, k, rng)
    x_sq = np.einsum("ij,ij->i", x, x)
    xt = np.ascontiguousarray(x.T)
    labels, dist = assign(x, centroids, x_sq=x_sq)
    history = [float(dist.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        sums, counts = _cluster_sums(xt, labels, k)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            taken = set()
            order = np.argsort(-dist, kind="stable")
            pos = 0
            for j in np.flatnonzero(~nonempty):
                while int(order[pos]) in taken:
                    pos += 1
                taken.add(int(order[pos]))
                centroids[j] = x[order[pos]]
        labels, dist = assign(x, centroids, x_sq=x_sq)
        history.append(float(dist.sum()))
        prev, cur = history[-2], history[-1]
        if prev - cur <= tol * max(prev, 1e-300):
            break
    return KMeansResult(centroids, labels, history[-1], history, it)


# ---------------------------------------------------------------- vocabulary and BOW


@dataclass(eq=False)
class Vocabulary:
    scope: str
    k: int
    centroids: list  # per component (k, 40)
    idf: list  # per component (k,)
    n_images: int

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.scope, self.k, self.n_images) == (other.scope, other.k, other.n_images) and all(
            np.array_equal(a, b) for a, b in zip(self.centroids + self.idf, other.centroids + other.idf))

    def to_arrays(self, prefix: str = "") -> dict:
        out = {f"{prefix}meta": np.array([self.k, self.n_images])}
        for c in range(3):
            out[f"{prefix}centroids{c}"] = self.centroids[c]
            out[f"{prefix}idf{c}"] = self.idf[c]
        return out

    @classmethod
    def from_arrays(cls, scope: str, arrays, prefix: str = "") -> "Vocabulary":
        k, n = (int(v) for v in arrays[f"{prefix}meta"])
        return cls(scope, k, [np.asarray(arrays[f"{prefix}centroids{c}"]) for c in range(3)],
                   [np.asarray(arrays[f"{prefix}idf{c}"]) for c in range(3)], n)


def idf_weights(df: np.ndarray, n_images: int) -> np.ndarray:
    """Smoothed inverse document frequency, always positive."""
    return np.log((1.0 + n_images) / (1.0 + np.asarray(df, dtype=np.float64))) + 1.0


def build_vocabulary(image_hists, k: int, seed: int = 0, scope: str = "",
                     n_init: int = VOCAB_RESTARTS) -> Vocabulary:
    """Cluster each component's local histograms independently into ``k`` words.

    ``image_hists`` is a list with one ``[Y, U, V]`` histogram triple per image.
    """
    image_hists = list(image_hists)
    if not image_hists:
        raise ContractError("cannot build a vocabulary from no images")
    centroids, idf = [], []
    for c in range(3):
        x = np.concatenate([h[c] for h in image_hists])
        if x.shape[0] < k:
            raise ContractError(f"{x.shape[0]} local features cannot form {k} visual words")
        res = kmeans(x, k, seed=seed + c, n_init=n_init)
        centroids.append(res.centroids)
        df = np.zeros(k)
        start = 0
        for h in image_hists:
            n = h[c].shape[0]
            df[np.unique(res.labels[start:start + n])] += 1
            start += n
        idf.append(idf_weights(df, len(image_hists)))
    return Vocabulary(scope, k, centroids, idf, len(image_hists))


@dataclass(eq=False)
class BowFeature:
    dc: np.ndarray  # 30, normalized per component by block count
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def parts(self):
        return (self.dc, self.y, self.u, self.v)

    def __eq__(self, other):
        if not isinstance(other, BowFeature):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.parts, other.parts))

    def vector(self) -> np.ndarray:
        return np.concatenate(self.parts)

    @classmethod
    def from_vector(cls, vec, k: int) -> "BowFeature":
        vec = np.asarray(vec, dtype=np.float64)
        d = 3 * DC_BINS
        return cls(vec[:d], vec[d:d + k], vec[d + k:d + 2 * k], vec[d + 2 * k:d + 3 * k])


def quantize_component(hists: np.ndarray, centroids: np.ndarray, idf: np.ndarray) -> np.ndarray:
    k = centroids.shape[0]
    if hists.shape[0] == 0:
        return np.zeros(k)
    if hists.shape[1] != centroids.shape[1]:
        raise ContractError("local features and vocabulary differ in dimension")
    labels, _ = assign(hists, centroids)
    tf = np.bincount(labels, minlength=k) / hists.shape[0]
    f = tf * idf
    total = np.abs(f).sum()
    return f / total if total > 0 else f


def quantize(img_hists, vocab: Vocabulary) -> list:
    return [quantize_component(img_hists[c], vocab.centroids[c], vocab.idf[c]) for c in range(3)]


def bow_feature(img: CoeffImage, vocab: Vocabulary, hists=None) -> BowFeature:
    if hists is None:
        hists = extract_local_hists(img)
    y, u, v = quantize(hists, vocab)
    return BowFeature(normalized_dc_feature(img), y, u, v)


def distance(a: BowFeature, b: BowFeature, weights=WEIGHTS) -> float:
    """Weighted sum of Manhattan distances over (f_DC, f_Y, f_U, f_V)."""
    total = 0.0
    for w, x, y in zip(weights, a.parts, b.parts):
        if x.shape != y.shape:
            raise ContractError(f"feature dimension mismatch {x.shape} vs {y.shape}")
        total += w * float(np.abs(x - y).sum())
    return total


def distances_to(query: BowFeature, feats, weights=WEIGHTS) -> np.ndarray:
    """Vectorized :func:`distance` from ``query`` to every feature in ``feats``."""
    if not feats:
        return np.zeros(0)
    out = np.zeros(len(feats))
    for part, w in enumerate(weights):
        q = query.parts[part]
        mat = np.stack([f.parts[part] for f in feats])
        if mat.shape[1] != q.shape[0]:
            raise ContractError("feature dimension mismatch")
        out += w * np.abs(mat - q).sum(axis=1)
    return out


def chi_square_uniform(hist_v_inrange: np.ndarray) -> float:
    """Chi-square statistic of in-range value counts against a uniform distribution."""
    h = np.asarray(hist_v_inrange, dtype=np.float64)
    total = h.sum()
    if total == 0:
        return 0.0
    expected = total / h.size
    return float(((h - expected) ** 2 / expected).sum())


def value_histogram(img: CoeffImage, component: int | None = None) -> np.ndarray:
    """Counts of the 20 in-range values (order -10..-1, 1..10), one or all components."""
    comps = img.components if component is None else [img.components[component]]
    vals = np.concatenate([c.values for c in comps]).astype(np.int64)
    vals = vals[(vals != 0) & (np.abs(vals) <= 10)]
    h = np.bincount(vals + 10, minlength=21)
    return np.delete(h, 10)

