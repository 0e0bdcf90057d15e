import json

import pytest

from coeffcrypt.codec import decode_jpeg
from coeffcrypt.errors import AuthorizationError, ContractError, DuplicateError, FormatError, NotFoundError
from coeffcrypt.protocol import Config, System, check_boundaries, security_report, type_violations
from coeffcrypt.protocol import messages as M
from coeffcrypt.protocol.report import PUBLISHED_FEATURE_BITS, feature_table_bits

CFG = Config(k_owner=8, k_group=8, k_global=8, kmeans_restarts=1, seed=11)


def _build(toy, cfg=CFG):
    s = System(cfg)
    for oid in ("a", "b"):
        s.add_owner(oid)
    ia = s.outsource("a", [(n, d) for i, (_, n, d) in enumerate(toy) if i % 2 == 0])
    ib = s.outsource("b", [(n, d) for i, (_, n, d) in enumerate(toy) if i % 2 == 1])
    return s, ia, ib


@pytest.fixture()
def system(toy_small):
    return _build(toy_small)


def test_outsource_post_state(system):
    s, ia, ib = system
    assert len(s.cs.images) == len(ia) + len(ib) == len(s.cs.index)
    assert set(s.kmc.poskeys) == set(ia) | set(ib)
    assert ia[0] == "a-00000" and ib[-1].startswith("b-")
    for iid in ia:
        assert set(s.cs.index.rows[iid].features) == {"owner:a", "global:a"}
    assert not type_violations(s)


def test_unauthorized_query_rejected(system, toy_small):
    s, _, _ = system
    s.user("eve", create=True)
    with pytest.raises(AuthorizationError):
        s.query("eve", toy_small[0][2], ["owner:a"])
    s.authorize("a", "u1")
    with pytest.raises(AuthorizationError):
        s.query("u1", toy_small[0][2], ["owner:b"])
    with pytest.raises(NotFoundError):
        s.query("nobody", toy_small[0][2])


def test_single_source_query_self_ranks_first(system, toy_small):
    s, ia, _ = system
    s.authorize("a", "u1")
    out = s.query("u1", toy_small[0][2], ["owner:a"], m=3)
    assert out.iids[0] == ia[0]
    assert out.rounds.as_tuple() == (1, 1, 0) and out.rounds.complete
    assert out.results[0][3] == decode_jpeg(toy_small[0][2])
    for iid, _, _, img in out.results:
        assert img == decode_jpeg(s.owners["a"].plain[iid])


def test_multi_source_query(system, toy_small):
    s, ia, ib = system
    s.authorize("a", "u1")
    s.authorize("b", "u1")
    out = s.query("u1", toy_small[1][2], None, m=6)
    assert out.sources == ["owner:a", "owner:b"]
    assert out.iids[0] == ib[0]
    assert out.rounds.as_tuple() == (1, 1, 0) and out.rounds.complete
    assert {r[1] for r in out.results} == {"owner:a", "owner:b"}
    dists = [r[2] for r in out.results]
    assert dists == sorted(dists)


def test_group_lifecycle(system, toy_small):
    s, ia, ib = system
    s.group_create("g")
    s.group_join("g", "a")
    s.group_join("g", "b")
    s.group_authorize("g", "u2")
    assert {g for g, _ in s.cs.group_images} == {"g"}
    out = s.query("u2", toy_small[1][2], None, m=4)
    assert out.iids[0] == ib[0]
    assert out.rounds.as_tuple() == (1, 1, 0) and out.rounds.complete
    assert out.results[0][3] == decode_jpeg(toy_small[1][2])
    # the CS only ever forwards group keys wrapped
    assert "UserKey" not in s.bus.received_types.get("cs", set())
    s.group_leave("g", "b")
    out = s.query("u2", toy_small[1][2], None, m=50)
    assert not set(out.iids) & set(ib)
    assert all(iid in ia for iid in out.iids)
    assert "gglobal:g" in s.cs.index.scopes()
    assert not any(("group:g" in s.cs.index.rows[i].features) for i in ib)
    assert not check_boundaries(s)


def test_group_without_members_has_nothing(system, toy_small):
    s, _, _ = system
    s.group_create("empty")
    s.group_authorize("empty", "u3")
    with pytest.raises(ContractError):
        s.query("u3", toy_small[0][2], None)


def test_image_add_and_delete(system, toy_small):
    s, ia, _ = system
    s.authorize("a", "u1")
    iid = s.image_add("a", "extra.jpg", toy_small[5][2])
    assert s.query("u1", toy_small[5][2], ["owner:a"], m=1).iids == [iid]
    s.image_delete("a", iid)
    assert iid not in s.cs.images and iid not in s.kmc.poskeys and iid not in s.cs.index
    assert iid not in s.query("u1", toy_small[5][2], ["owner:a"], m=30).iids
    with pytest.raises(NotFoundError):
        s.image_delete("a", iid)
    with pytest.raises(NotFoundError):
        s.image_delete("a", "b-00000")


def test_new_image_sizes_extend_links(toy_small):
    # a later image with a new block count needs the KMC links to grow
    from coeffcrypt import corpus
    s, ia, _ = _build(toy_small)
    s.authorize("a", "u1")
    s.group_create("g")
    s.group_join("g", "a")
    s.group_authorize("g", "u2")
    odd = corpus.toy_corpus(categories=1, per_category=1, size=(40, 24), seed=5)[0][2]
    iid = s.image_add("a", "odd.jpg", odd)
    assert s.query("u1", odd, ["owner:a"], m=1).results[0][3] == decode_jpeg(odd)
    out = s.query("u2", odd, None, m=1)
    assert out.iids == [iid] and out.results[0][3] == decode_jpeg(odd)


def test_entity_errors(system):
    s, _, _ = system
    with pytest.raises(DuplicateError):
        s.add_owner("a")
    with pytest.raises(ContractError):
        s.add_owner("bad id")
    with pytest.raises(ContractError):
        s.outsource("a", [])
    with pytest.raises(NotFoundError):
        s.group_join("missing", "a")
    s.group_create("g")
    with pytest.raises(DuplicateError):
        s.group_create("g")


def test_message_log_records_digests(system):
    s, _, _ = system
    s.authorize("a", "u1")
    lines = [json.loads(x) for x in s.bus.jsonl().splitlines()]
    assert lines and all(set(r) >= {"seq", "flow", "sender", "receiver", "kind", "digest"} for r in lines)
    assert [r["seq"] for r in lines] == sorted(r["seq"] for r in lines)
    assert {r["kind"] for r in lines} >= {M.OUTSOURCE, M.AUTH_GRANT}
    assert all(len(r["digest"]) == 64 for r in lines)


def test_canonical_encoding():
    assert M.encode({"b": 1, "a": [1, 2]}) == M.encode({"a": [1, 2], "b": 1})
    assert M.encode([1, "1"]) != M.encode(["1", 1])
    assert M.encode(b"ab") != M.encode("ab")
    assert M.encode(True) != M.encode(1)
    state = {"x": b"\x00\x01", "t": (1, 2), "s": {3, 1}, "d": {(1, 2): "v"}}
    assert M.loads_state(M.dumps_state(state)) == state


def test_save_load_and_replay(tmp_path, toy_small):
    def run(root):
        s, _, _ = _build(toy_small)
        s.authorize("a", "u1")
        s.group_create("g")
        s.group_join("g", "b")
        s.group_authorize("g", "u2")
        s.query("u1", toy_small[0][2], None, m=3)
        s.save(root)
        return s

    s = run(tmp_path / "one")
    run(tmp_path / "two")
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes(), f
    assert not check_boundaries(s, tmp_path / "one")

    loaded = System.load(tmp_path / "one")
    assert loaded.cs.index == s.cs.index
    out = loaded.query("u2", toy_small[1][2], None, m=2)
    assert out.rounds.as_tuple() == (1, 1, 0) and out.rounds.complete
    assert out.results[0][3] == decode_jpeg(toy_small[1][2])
    loaded.save(tmp_path / "one")
    log = (tmp_path / "one" / "log" / "messages.jsonl").read_text().splitlines()
    assert [json.loads(x)["seq"] for x in log] == list(range(len(log)))


def test_boundary_checks_detect_leaks(system, tmp_path):
    s, _, _ = system
    s.authorize("a", "u1")
    s.kmc.leak = s.owners["a"].valkey
    assert any("KMC" in p for p in type_violations(s))
    del s.kmc.leak
    s.save(tmp_path)
    (tmp_path / "cs" / "note.bin").write_bytes(s.owners["a"].userkey.tagmask)
    assert any("user-key bytes" in p for p in check_boundaries(s, tmp_path))


def test_config_json():
    cfg = Config(seed=3, k_global=12)
    assert Config.from_json(cfg.to_json()) == cfg
    with pytest.raises(FormatError):
        Config.from_json('{"version": 99}')
    with pytest.raises(FormatError):
        Config.from_json(cfg.to_json().replace('"seed"', '"sneed"'))
    with pytest.raises(ContractError):
        Config(k_owner=0)


def test_security_report(system):
    s, _, _ = system
    rep = security_report(s)
    summary = rep["summary"]
    assert summary["n_images"] == len(s.cs.images)
    assert summary["feature_table_bits"] == pytest.approx(1243.0, abs=0.5)
    assert summary["published_feature_bits"] == PUBLISHED_FEATURE_BITS
    assert feature_table_bits(1, 1) == pytest.approx(summary["feature_table_bits"] / 5)
    assert summary["kba_flattened"]
    for r in rep["images"]:
        assert r["total"] > r["feature_tables"]
