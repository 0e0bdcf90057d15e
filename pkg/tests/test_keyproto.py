import numpy as np
import pytest

from coeffcrypt import container, perm
from coeffcrypt.cipher import PosKey, encrypt_coefficients, gen_val_key, img_dec, img_enc, pos_seed_roles
from coeffcrypt.codec import decode_jpeg
from coeffcrypt.errors import ContractError, FormatError, TamperError
from coeffcrypt.keyproto import (
    MAX_BITKEY, EncPosKey, UserKey, cs_reencrypt_for_group, derive_inc_usr_key, derive_inc_val_key, gen_user_key,
    identity_user_key, img_key_enc, kmc_transform, poskey_sizes, reencrypt_coefficients, unwrap,
    user_key_dec, user_key_enc, user_recover_pos_key, wrap_for_group,
)
from coeffcrypt.perm import KeySource


def _ukey(label, sizes=()):
    return gen_user_key(KeySource.seeded(f"user/{label}"), sizes)


def _owner_chain(img, label, src):
    vk = gen_val_key(src)
    enc, pk, _ = img_enc(img, label, vk, src)
    sizes = poskey_sizes(pk)
    u_o = gen_user_key(src, sizes)
    return vk, enc, pk, u_o, sizes


def test_user_key_structure():
    u = _ukey("a", {(0, 7)})
    for c in range(3):
        assert np.array_equal(u.upmtp[c][1, :1], [1])
        for s in range(1, 64):
            assert perm.is_permutation(u.upmtp[c][s, :s])
        assert u.ubits[c][0] == 0
        assert all(0 <= u.ubits[c][L] < (1 << L) for L in range(1, MAX_BITKEY + 1))
    assert perm.is_permutation(u.block_key(0, 7)[0])
    assert u == _ukey("a", {(0, 7)})


def test_missing_size_without_seeds():
    pub = _ukey("b", {(0, 5)}).public_copy()
    assert pub.seeds is None
    pub.block_key(0, 5)
    with pytest.raises(ContractError):
        pub.block_key(0, 6)


def test_self_delta_is_identity():
    sizes = {(0, 9), (1, 4), (2, 4)}
    a = _ukey("c", sizes)
    d = user_key_dec(a, a)
    assert d == identity_user_key(sizes)
    assert derive_inc_usr_key(a, a) == identity_user_key(sizes)


def test_xor_parts_are_self_inverse():
    sizes = {(0, 3)}
    a, b = _ukey("d", sizes), _ukey("e", sizes)
    e, d = user_key_enc(a, b), user_key_dec(a, b)
    for c in range(3):
        assert np.array_equal(e.ubits[c], d.ubits[c])
    assert np.array_equal(e.blocks[(0, 3)][1], d.blocks[(0, 3)][1])
    assert e.tagmask == d.tagmask


def test_identity_link_and_shape(small_images):
    name, _, img = small_images[0]
    src = KeySource.seeded("ident")
    _, _, pk, u_o, sizes = _owner_chain(img, name, src)
    ep = img_key_enc(pk, u_o)
    same = kmc_transform(ep, identity_user_key(sizes))
    assert same == ep
    for a, b in zip(ep.components, pk.components):
        assert a.pmtb.size == b.pmtb.size and a.pmtp.size == b.pmtp.size
    assert user_recover_pos_key(img_key_enc(pk, identity_user_key(sizes)), identity_user_key(sizes)) == pk
    with pytest.raises(ContractError):
        img_key_enc(ep, u_o)


def test_owner_user_chain(small_images):
    for trial in range(10):
        name, _, img = small_images[trial % len(small_images)]
        src = KeySource.seeded(f"chain{trial}")
        vk, enc, pk, u_o, sizes = _owner_chain(img, name, src)
        u_u = gen_user_key(src, sizes)
        enc2 = kmc_transform(img_key_enc(pk, u_o), user_key_enc(u_o, u_u))
        rec = user_recover_pos_key(enc2, u_u)
        assert rec == pk
        assert img_dec(enc, rec, vk) == img


def test_wrong_user_key_detected(small_images):
    name, _, img = small_images[1]
    src = KeySource.seeded("wrong")
    _, _, pk, u_o, sizes = _owner_chain(img, name, src)
    u_u, u_x = gen_user_key(src, sizes), gen_user_key(src, sizes)
    enc2 = kmc_transform(img_key_enc(pk, u_o), user_key_enc(u_o, u_u))
    with pytest.raises(TamperError):
        user_recover_pos_key(enc2, u_x)
    bad = EncPosKey(enc2.iid, enc2.components, bytes(32))
    with pytest.raises(TamperError):
        user_recover_pos_key(bad, u_u)


def test_group_chain(small_images):
    for trial in range(5):
        name, _, img = small_images[trial]
        src = KeySource.seeded(f"group{trial}")
        vk, enc, pk, u_o, sizes = _owner_chain(img, name, src)
        u_g, v_g = gen_user_key(src, sizes), gen_val_key(src)
        u_u = gen_user_key(src, sizes)
        inc = derive_inc_usr_key(u_o, u_g)
        genc = cs_reencrypt_for_group(enc, derive_inc_val_key(vk, v_g), "g1")
        assert genc.scope == "group:g1"
        wk = src.token(32)
        blob = wrap_for_group(kmc_transform(kmc_transform(img_key_enc(pk, u_o), inc), user_key_enc(u_g, u_u)),
                              wk, source=src)
        rec = user_recover_pos_key(unwrap(blob, wk, name), u_u)
        assert rec == pk
        assert img_dec(genc, rec, v_g) == img


def test_reencryption_matches_direct_group_encryption(desk_images):
    for name, _, img in desk_images[:8]:
        src = KeySource.seeded(f"re/{name}")
        v_o, v_g = gen_val_key(src), gen_val_key(src)
        seeds = src.seed_keys(pos_seed_roles())
        c_o, _ = encrypt_coefficients(img, name, v_o, pos_seeds=seeds)
        c_g, _ = encrypt_coefficients(img, name, v_g, pos_seeds=seeds)
        moved, _ = reencrypt_coefficients(c_o, derive_inc_val_key(v_o, v_g))
        for a, b, o in zip(moved.components, c_g.components, c_o.components):
            assert np.array_equal(a.values, b.values)
            assert np.array_equal(a.r, b.r)
            assert np.array_equal(a.dc_size, b.dc_size)
            # keystream bits present under both the owner and the group length agree
            low = np.minimum(o.dc_size, b.dc_size).astype(np.int64)
            m = (np.left_shift(1, low) - 1)
            assert np.array_equal(a.dc_bits & m, b.dc_bits & m)


def test_identity_increment_is_noop(small_images):
    name, _, img = small_images[2]
    v = gen_val_key(KeySource.seeded("inc"))
    c, _ = encrypt_coefficients(img, name, v, KeySource.seeded("inc2"))
    inc = derive_inc_val_key(v, v)
    assert all(perm.is_permutation(r) for t in inc.pmtv + inc.pmtdcl for r in t)
    moved, res = reencrypt_coefficients(c, inc)
    assert moved.same_blocks(c)
    assert not any(r.any() for r in res)
    with pytest.raises(ContractError):
        derive_inc_val_key(v, gen_val_key(KeySource.seeded(1), 2, 5))


def test_repeated_group_moves_stay_exact(small_images):
    name, _, img = small_images[3]
    src = KeySource.seeded("hops")
    v1, v2, v3 = gen_val_key(src), gen_val_key(src), gen_val_key(src)
    enc, pk, _ = img_enc(img, name, v1, src)
    e2 = cs_reencrypt_for_group(enc, derive_inc_val_key(v1, v2), "a")
    e3 = cs_reencrypt_for_group(e2, derive_inc_val_key(v2, v3), "b")
    assert img_dec(e3, pk, v3) == img


def test_wrap_envelope(small_images):
    src = KeySource.seeded("wrap")
    _, _, pk, u_o, _ = _owner_chain(small_images[0][2], "i1", src)
    img_key = img_key_enc(pk, u_o)
    key = src.token(32)
    blob = wrap_for_group(img_key, key, source=src)
    assert len(blob) > 12 + 16
    assert unwrap(blob, key, "i1") == img_key
    flipped = bytearray(blob)
    flipped[20] ^= 1
    with pytest.raises(TamperError):
        unwrap(bytes(flipped), key, "i1")
    with pytest.raises(TamperError):
        unwrap(blob, src.token(32), "i1")
    with pytest.raises(TamperError):
        unwrap(blob, key, "i2")
    with pytest.raises(ContractError):
        wrap_for_group(img_key, b"short")


def test_key_container_roundtrip(small_images):
    name, _, img = small_images[0]
    src = KeySource.seeded("container")
    vk, enc, pk, u_o, sizes = _owner_chain(img, name, src)
    assert container.load_valkey(container.dump_valkey(vk)) == vk
    assert container.load_poskey(container.dump_poskey(pk)) == pk
    ep = img_key_enc(pk, u_o)
    back = container.load_poskey(container.dump_poskey(ep))
    assert isinstance(back, EncPosKey) and back == ep
    assert container.load_userkey(container.dump_userkey(u_o)) == u_o
    inc = derive_inc_val_key(vk, gen_val_key(src))
    assert container.load_incvalkey(container.dump_incvalkey(inc)) == inc
    with pytest.raises(FormatError):
        container.load_valkey(container.dump_poskey(pk))
    with pytest.raises(FormatError):
        container.load_poskey(container.dump_poskey(pk)[:-3])


def test_no_single_store_determines_position_key():
    # KMC sees P' = dec(P, u_o) and L = enc(u_o, u_u); CS sees C = enc(I, P).
    rng = np.random.default_rng(4)
    n = 5
    p, u_o, u_u = (rng.permutation(n) + 1 for _ in range(3))
    image = np.array([11, 22, 33, 44, 55])
    stored, link, cipher_ = perm.dec_perm(p, u_o), perm.enc_perm(u_o, u_u), perm.enc_perm(image, p)
    u_o2 = u_o[::-1].copy()
    p2 = perm.enc_perm(stored, u_o2)
    u_u2 = perm.enc_perm(perm.inverse(u_o2), link)
    image2 = perm.dec_perm(cipher_, p2)
    assert not np.array_equal(p, p2)
    assert np.array_equal(perm.dec_perm(p2, u_o2), stored)
    assert np.array_equal(perm.enc_perm(u_o2, u_u2), link)
    assert np.array_equal(perm.enc_perm(image2, p2), cipher_)


def test_no_single_store_on_real_keys(small_images):
    name, _, img = small_images[4]
    src = KeySource.seeded("witness")
    _, _, pk, u_o, sizes = _owner_chain(img, name, src)
    stored = img_key_enc(pk, u_o)
    u_o2 = gen_user_key(src, sizes)
    pk2 = kmc_transform(stored, u_o2)
    alt = img_key_enc(PosKey(pk2.iid, pk2.components), u_o2)
    assert pk2.components[0].pmtb.tolist() != pk.components[0].pmtb.tolist()
    for a, b in zip(alt.components, stored.components):
        assert np.array_equal(a.pmtb, b.pmtb)
        assert np.array_equal(a.pmtp, b.pmtp)
        assert np.array_equal(a.bitkey, b.bitkey)
