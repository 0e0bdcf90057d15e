import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coeffcrypt import features
from coeffcrypt.cipher import encrypt_coefficients, gen_val_key
from coeffcrypt.codec import RvPair
from coeffcrypt.errors import ContractError
from coeffcrypt.features import (
    DC_BINS, HIST_DIM, WEIGHTS, BowFeature, Vocabulary, assign, block_hist, build_vocabulary, distance, distances_to,
    extract_dc_feature, extract_local_hists, idf_weights, kmeans, normalized_dc_feature, quantize_component,
)
from coeffcrypt.perm import KeySource

EXAMPLE = [RvPair(0, 3), RvPair(0, -8), RvPair(1, -1), RvPair(3, 3), RvPair(2, -4)]


def test_block_hist_worked_example():
    h = block_hist(EXAMPLE)
    assert h.size == HIST_DIM
    assert h[:3] == pytest.approx([5, 1.2, 1.1662], abs=1e-4)
    hv = h[3:26]
    want = np.zeros(23)
    want[3 + 10], want[-8 + 10], want[-1 + 10], want[-4 + 10] = 2, 1, 1, 1
    assert np.array_equal(hv, want)
    assert h[26:].tolist() == [3, 2, 1, 0, 0] + [-1] * 9


def test_block_hist_empty_and_out_of_range():
    h = block_hist([])
    assert h[:26].sum() == 0 and (h[26:] == -1).all()
    h = block_hist([RvPair(0, 40), RvPair(1, -11), RvPair(15, 0)])
    assert h[3 + 21] == 1 and h[3 + 22] == 1 and h[3 + 10] == 1


def test_vectorized_hists_match_per_block(small_images):
    for _, _, img in small_images:
        for comp, hists in zip(img.components, extract_local_hists(img)):
            assert hists.shape == (comp.blknum, HIST_DIM)
            for j in range(0, comp.blknum, 7):
                assert np.allclose(hists[j], block_hist(comp.block(j).pairs))


def test_hist_r_non_increasing_then_padding(small_images):
    for comp_h in extract_local_hists(small_images[0][2]):
        hr = comp_h[:, 26:]
        for row in hr:
            real = row[row >= 0]
            assert (np.diff(real) <= 0).all()
            assert (row[real.size:] == -1).all()


def test_dc_feature(desk_images):
    for _, _, img in desk_images[:4]:
        f = extract_dc_feature(img)
        assert f.size == 3 * DC_BINS and (f >= 0).all()
        for c, comp in enumerate(img.components):
            part = f[c * DC_BINS:(c + 1) * DC_BINS]
            assert part.sum() <= comp.blknum
            # brute-force recount
            want = np.zeros(DC_BINS)
            for j in range(comp.blknum):
                g = comp.block(j).dc.group
                if g < DC_BINS:
                    want[g] += 1
            assert np.array_equal(part, want)
        n = normalized_dc_feature(img)
        assert n[:DC_BINS].sum() <= 1 + 1e-12


def test_dc_feature_constant_length():
    from test_cipher import _tiny
    img = _tiny()
    y = img["Y"]
    img = img.with_components([y.with_arrays(dc_size=np.full(4, 4), dc_bits=np.full(4, 9)), img["U"], img["V"]])
    f = extract_dc_feature(img)
    assert f[4] == 4 and f[:DC_BINS].sum() == 4


def test_kmeans_k1_is_mean():
    x = np.random.default_rng(0).normal(size=(200, 5))
    res = kmeans(x, 1)
    assert np.allclose(res.centroids[0], x.mean(axis=0))


def test_kmeans_k_equals_n():
    x = np.random.default_rng(1).normal(size=(12, 3))
    res = kmeans(x, 12)
    assert sorted(map(tuple, res.centroids.round(12))) == sorted(map(tuple, x.round(12)))
    assert res.objective == pytest.approx(0, abs=1e-12)


def test_kmeans_objective_non_increasing():
    x = np.random.default_rng(2).normal(size=(3000, 8))
    res = kmeans(x, 20, seed=3)
    assert all(b <= a + 1e-9 * a for a, b in zip(res.history, res.history[1:]))
    assert res.iterations <= features.KMEANS_MAX_ITER
    assert kmeans(x, 20, seed=3).objective == res.objective


def test_kmeans_restarts_keep_best():
    x = np.random.default_rng(5).normal(size=(500, 4))
    one = kmeans(x, 8, seed=1, n_init=1)
    three = kmeans(x, 8, seed=1, n_init=3)
    assert three.objective <= one.objective


def test_kmeans_errors():
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(ContractError):
        kmeans(np.zeros((3, 2)), 0)


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(6)
    x, c = rng.normal(size=(700, 40)), rng.normal(size=(30, 40))
    labels, d = assign(x, c, chunk=128)
    full = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(labels, full.argmin(axis=1))
    assert np.allclose(d, full.min(axis=1))


def test_idf_and_quantization():
    idf = idf_weights(np.array([0, 5, 10]), 10)
    assert idf[0] > idf[1] > idf[2] > 0
    c = np.eye(3)
    h = np.array([[1, 0, 0], [0.9, 0.1, 0], [0, 0, 1.0]])
    f = quantize_component(h, c, np.ones(3))
    assert f.tolist() == pytest.approx([2 / 3, 0, 1 / 3])
    assert np.abs(f).sum() == pytest.approx(1)
    one_word = quantize_component(np.zeros((4, 3)) + 0.1, c[:1], np.ones(1))
    assert one_word.tolist() == [1.0]
    assert quantize_component(np.zeros((0, 3)), c, np.ones(3)).tolist() == [0, 0, 0]
    with pytest.raises(ContractError):
        quantize_component(np.zeros((2, 4)), c, np.ones(3))


def _random_feature(rng, k=6):
    return BowFeature(*(rng.random(n) for n in (3 * DC_BINS, k, k, k)))


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_feature(rng) for _ in range(3))
    assert distance(a, a) == 0
    assert distance(a, b) == pytest.approx(distance(b, a))
    assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12
    assert distances_to(a, [b, c]) == pytest.approx([distance(a, b), distance(a, c)])


def test_distance_weights_and_dimension_check():
    assert WEIGHTS == (0.1, 0.5, 0.2, 0.2)
    z = BowFeature(np.zeros(30), np.zeros(2), np.zeros(2), np.zeros(2))
    one = BowFeature(np.ones(30) / 30, np.array([1.0, 0]), np.array([1.0, 0]), np.array([1.0, 0]))
    assert distance(z, one) == pytest.approx(0.1 + 0.5 + 0.2 + 0.2)
    with pytest.raises(ContractError):
        distance(z, BowFeature(np.zeros(30), np.zeros(3), np.zeros(2), np.zeros(2)))
    v = one.vector()
    assert BowFeature.from_vector(v, 2) == one


def test_vocabulary_roundtrip_and_errors(small_images):
    hists = [extract_local_hists(img) for _, _, img in small_images[:3]]
    vocab = build_vocabulary(hists, 5, seed=0, scope="owner:o1", n_init=1)
    assert vocab.k == 5 and all(c.shape == (5, HIST_DIM) for c in vocab.centroids)
    assert Vocabulary.from_arrays("owner:o1", vocab.to_arrays("p_"), "p_") == vocab
    with pytest.raises(ContractError):
        build_vocabulary([], 3)
    with pytest.raises(ContractError):
        build_vocabulary(hists, 10 ** 6)


def test_position_layers_preserve_hist_multiset(desk_images):
    from coeffcrypt.cipher import block_permute, intra_block_permute, pos_seed_roles
    for name, _, img in desk_images:
        seeds = KeySource.seeded(name).seed_keys(pos_seed_roles())
        enc, _ = intra_block_permute(block_permute(img, seeds, name)[0], seeds, name)
        for a, b in zip(extract_local_hists(img), extract_local_hists(enc)):
            assert np.array_equal(a[np.lexsort(a.T[::-1])], b[np.lexsort(b.T[::-1])])


def test_single_table_permutes_hist_v_bins(small_images):
    key = gen_val_key(KeySource.seeded("single"), 1, 1)
    for name, _, img in small_images:
        enc, _ = encrypt_coefficients(img, name, key, KeySource.seeded(name))
        for c, (a, b) in enumerate(zip(extract_local_hists(img), extract_local_hists(enc))):
            va, vb = a[:, 3:26].sum(axis=0), b[:, 3:26].sum(axis=0)
            inrange = [i for i in range(21) if i != 10]
            moved = np.zeros(23)
            moved[[10, 21, 22]] = va[[10, 21, 22]]
            moved[np.array(inrange)[key.pmtv[c][0] - 1]] = va[inrange]
            assert np.array_equal(vb, moved)
