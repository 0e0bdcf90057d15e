import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from coeffcrypt import perm
from coeffcrypt.errors import ContractError, FormatError, RangeError
from coeffcrypt.perm import DomainTag, KeySource, SeedKey, dec_perm, enc_perm, inverse


def _key(i=0, role="test"):
    return KeySource.seeded(f"perm-{i}").seed_key(role)


def test_enc_perm_example():
    assert enc_perm((10, 20, 30), (3, 1, 2)) == (30, 10, 20)
    assert dec_perm((30, 10, 20), (3, 1, 2)) == (10, 20, 30)


def test_identity_key():
    data = np.array([5, 6, 7, 8])
    assert np.array_equal(enc_perm(data, perm.identity(4)), data)
    assert np.array_equal(dec_perm(data, perm.identity(4)), data)


def test_length_mismatch():
    with pytest.raises(ContractError):
        enc_perm([1, 2], [1, 2, 3])
    with pytest.raises(ContractError):
        dec_perm([1, 2], [1])


def _laws_hold(k, k1, k2):
    e = perm.identity(len(k))
    eq1 = np.array_equal(enc_perm(dec_perm(k2, k1), enc_perm(k1, k)), enc_perm(k2, k))
    eq2 = np.array_equal(enc_perm(dec_perm(k2, k1), enc_perm(k1, e)), enc_perm(k2, e))
    return eq1 and eq2


def test_composition_laws_exhaustive_small():
    # n = 5 runs in the acceptance suite
    for n in range(1, 5):
        ps = [np.array(p) + 1 for p in itertools.permutations(range(n))]
        for k, k1, k2 in itertools.product(ps, repeat=3):
            assert _laws_hold(k, k1, k2)


def test_composition_laws_n6_sampled_by_k():
    ps = [np.array(p) + 1 for p in itertools.permutations(range(6))]
    rng = np.random.default_rng(0)
    for k in ps:
        k1, k2 = ps[rng.integers(len(ps))], ps[rng.integers(len(ps))]
        assert _laws_hold(k, k1, k2)


@pytest.mark.parametrize("n", [64, 1024])
def test_composition_laws_random(n):
    rng = np.random.default_rng(n)
    for _ in range(1000):
        k, k1, k2 = (rng.permutation(n) + 1 for _ in range(3))
        assert _laws_hold(k, k1, k2)


def test_xor_analogue():
    rng = np.random.default_rng(1)
    a, b, c = (rng.integers(0, 2, 64) for _ in range(3))
    assert np.array_equal(perm.xor_bits(perm.xor_bits(a, b), perm.xor_bits(b, c)), perm.xor_bits(a, c))
    with pytest.raises(ContractError):
        perm.xor_bits([1, 0], [1])


@given(st.permutations(list(range(1, 12))), st.permutations(list(range(1, 12))))
def test_inverse_and_roundtrip(p, q):
    p, q = np.array(p), np.array(q)
    assert np.array_equal(dec_perm(enc_perm(q, p), p), q)
    assert np.array_equal(enc_perm(dec_perm(q, p), p), q)
    assert np.array_equal(enc_perm(inverse(p), p), perm.identity(p.size))


def test_rand_perm_basics():
    k = _key()
    assert np.array_equal(perm.rand_perm(k, 1, "t"), [1])
    a = perm.rand_perm(k, 500, ("x", 1))
    assert perm.is_permutation(a)
    assert np.array_equal(a, perm.rand_perm(k, 500, ("x", 1)))
    assert not np.array_equal(a, perm.rand_perm(k, 500, ("x", 2)))
    assert not np.array_equal(a, perm.rand_perm(SeedKey(k.secret, "other"), 500, ("x", 1)))
    with pytest.raises(RangeError):
        perm.rand_perm(k, 0)


def test_rand_perm_uniform_n4():
    src = KeySource.seeded("uniformity")
    counts = {}
    for _ in range(10_000):
        p = tuple(perm.rand_perm(src.seed_key("k"), 4, "u").tolist())
        counts[p] = counts.get(p, 0) + 1
    assert len(counts) == 24
    observed = np.array(list(counts.values()))
    assert np.abs(observed - 10_000 / 24).max() < 3 * np.sqrt(10_000 * (1 / 24) * (23 / 24)) * 1.5
    assert stats.chisquare(observed).pvalue > 1e-3


def test_rand_perm_batch():
    k = _key(3)
    sizes = [3, 0, 5, 3, 1, 63]
    flat = perm.rand_perm_batch(k, sizes, "b")
    assert flat.size == sum(sizes)
    pos = 0
    for s in sizes:
        assert s == 0 or perm.is_permutation(flat[pos:pos + s])
        pos += s
    assert np.array_equal(flat, perm.rand_perm_batch(k, sizes, "b"))
    with pytest.raises(RangeError):
        perm.rand_perm_batch(k, [-1])


def test_rand_perm_batch_uniform_n3():
    flat = perm.rand_perm_batch(_key(4), [3] * 6000, "u")
    rows = [tuple(r) for r in flat.reshape(-1, 3).tolist()]
    observed = np.array([rows.count(p) for p in set(rows)])
    assert observed.size == 6
    assert stats.chisquare(observed).pvalue > 1e-3


def test_stm_ciph_balance():
    bits = perm.stm_ciph(_key(5), 1_000_000, "bal")
    assert bits.size == 1_000_000
    assert abs(int(bits.sum()) - 500_000) < 3 * 500
    assert np.array_equal(bits[:100], perm.stm_ciph(_key(5), 100, "bal"))


def test_stm_ciph_int_matches_bits():
    k = _key(6)
    bits = perm.stm_ciph(k, 13, "i")
    assert perm.stm_ciph_int(k, 13, "i") == int("".join(map(str, bits)), 2)
    with pytest.raises(RangeError):
        perm.stm_ciph(k, 0)


def test_distinct_tags_give_distinct_streams():
    k = _key(7)
    outs = {perm.stm_ciph_bytes(k, 16, ("tag", i)) for i in range(10_000)}
    assert len(outs) == 10_000


def test_tag_serialization_injective():
    tags = [DomainTag("ab", "c"), DomainTag("a", "bc"), DomainTag("abc"), DomainTag(1), DomainTag("1"),
            DomainTag(b"1"), DomainTag(), DomainTag("", ""), DomainTag("")]
    assert len({t.serialize() for t in tags}) == len(tags)
    with pytest.raises(ContractError):
        DomainTag(True).serialize()


def test_seed_key_validation_and_hex():
    with pytest.raises(RangeError):
        SeedKey(b"short")
    k = _key(8, "role")
    assert SeedKey.from_hex(k.hex(), "role") == k
    assert k.hex() not in repr(k)


def test_perm_serialization():
    p = perm.rand_perm(_key(9), 300)
    buf = perm.perm_to_bytes(p) + b"tail"
    q, end = perm.perm_from_bytes(buf)
    assert np.array_equal(p, q) and buf[end:] == b"tail"
    with pytest.raises(FormatError):
        perm.perm_from_bytes(buf[:10])


def test_is_permutation():
    assert perm.is_permutation([2, 1, 3])
    assert not perm.is_permutation([1, 1, 3])
    assert not perm.is_permutation([0, 1, 2])
    assert not perm.is_permutation([])
    with pytest.raises(ContractError):
        perm.check_permutation([4, 1, 2])


def test_key_source_determinism():
    a, b = KeySource.seeded(5), KeySource.seeded(5)
    assert [a.token() for _ in range(3)] == [b.token() for _ in range(3)]
    assert KeySource().token() != KeySource().token()
