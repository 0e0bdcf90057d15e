import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coeffcrypt.errors import AuthorizationError, ContractError, DuplicateError, FormatError, NotFoundError
from coeffcrypt.features import DC_BINS, BowFeature, build_vocabulary, bow_feature, distance, extract_local_hists
from coeffcrypt.index import (
    Hit, IndexRow, LinearIndex, SearchResult, elbow_k, k_suggest, parse_scope, precision, results_csv, scope_tag,
)


def _feat(rng, k=4):
    return BowFeature(rng.random(3 * DC_BINS), rng.random(k), rng.random(k), rng.random(k))


def _row(iid, owner, rng, k=4, kg=4):
    return IndexRow(iid, owner, {f"owner:{owner}": _feat(rng, k), f"global:{owner}": _feat(rng, kg)})


def _filled(n=30, owners=("a", "b"), seed=0, k=4, kg=4):
    rng = np.random.default_rng(seed)
    idx = LinearIndex()
    for i in range(n):
        idx.add(_row(f"i{i:03d}", owners[i % len(owners)], rng, k, kg))
    return idx


def test_scope_tags():
    assert scope_tag("group", "g1") == "group:g1"
    assert parse_scope("gglobal:x") == ("gglobal", "x")
    for bad in ("owner", "other:x", "owner:"):
        with pytest.raises(ContractError):
            parse_scope(bad)
    with pytest.raises(ContractError):
        scope_tag("nope", "x")


def test_search_matches_brute_force():
    idx = _filled()
    rng = np.random.default_rng(9)
    for _ in range(10):
        q = _feat(rng)
        res = idx.search_single(q, "global:a", 5)
        rows = [(distance(q, r.features["global:a"]), iid) for iid, r in idx.rows.items() if r.owner == "a"]
        want = [iid for _, iid in sorted(rows)[:5]]
        assert res.iids == want
        assert all(a.distance <= b.distance for a, b in zip(res, res[1:]))
        assert all(h.source == "a" and h.scope == "global:a" for h in res)


def test_m_larger_than_index_and_bad_m():
    idx = _filled(6)
    q = _feat(np.random.default_rng(1))
    assert len(idx.search_single(q, "owner:a", 100)) == 3
    with pytest.raises(ContractError):
        idx.search_single(q, "owner:a", 0)


def test_self_retrieval_ranks_first():
    idx = _filled()
    row = idx.rows["i007"]
    res = idx.search_single(row.features["owner:b"], "owner:b", 3)
    assert res[0].iid == "i007" and res[0].distance == 0


def test_ties_broken_by_iid():
    rng = np.random.default_rng(2)
    f = _feat(rng)
    idx = LinearIndex()
    for iid in ("z", "m", "a"):
        idx.add(IndexRow(iid, "o", {"owner:o": f, "global:o": f}))
    assert idx.search_single(f, "owner:o", 3).iids == ["a", "m", "z"]


def test_scope_errors():
    idx = _filled()
    rng = np.random.default_rng(3)
    with pytest.raises(ContractError):
        idx.search_single(_feat(rng), "owner:nobody", 3)
    with pytest.raises(ContractError):
        idx.search_single(_feat(rng, k=5), "owner:a", 3)
    with pytest.raises(ContractError):
        idx.add(IndexRow("x", "a", {"owner:a": _feat(rng)}))
    with pytest.raises(ContractError):
        idx.add(IndexRow("x", "a", {"owner:a": _feat(rng, 7), "global:a": _feat(rng)}))


def test_multi_source_merge_equals_union():
    rng = np.random.default_rng(4)
    feats = {f"i{i:02d}": _feat(rng) for i in range(40)}
    split, union = LinearIndex(), LinearIndex()
    for n, (iid, f) in enumerate(sorted(feats.items())):
        o = "a" if n % 2 else "b"
        split.add(IndexRow(iid, o, {f"owner:{o}": f, f"global:{o}": f}))
        union.add(IndexRow(iid, "u", {"owner:u": f, "global:u": f}))
    q = _feat(rng)
    merged = split.search_multi({"global:a": q, "global:b": q}, 10)
    single = union.search_single(q, "global:u", 10)
    assert merged.iids == single.iids
    assert [h.distance for h in merged] == pytest.approx([h.distance for h in single])
    assert split.search_multi({"global:a": q}, 10).iids == split.search_single(q, "global:a", 10).iids


def test_multi_source_guards():
    idx = _filled(owners=("a", "b", "c"))
    rng = np.random.default_rng(5)
    with pytest.raises(ContractError):
        idx.search_multi({}, 5)
    with pytest.raises(AuthorizationError):
        idx.search_multi({"global:a": _feat(rng), "global:b": _feat(rng)}, 5, authorized={"global:a"})
    other = _filled(owners=("a", "b"), k=4, kg=4)
    other.add(_row("x", "c", rng, k=4, kg=6))
    with pytest.raises(ContractError):
        other.search_multi({"global:a": _feat(rng), "global:c": _feat(rng, 6)}, 5)


def test_add_delete_and_duplicates():
    idx = _filled(10)
    before = idx.to_bytes()
    rng = np.random.default_rng(6)
    row = _row("new", "a", rng)
    idx.add(row)
    q = row.features["owner:a"]
    assert idx.search_single(q, "owner:a", 1).iids == ["new"]
    with pytest.raises(DuplicateError):
        idx.add(row)
    idx.delete("new")
    assert idx.to_bytes() == before
    assert "new" not in idx.search_single(q, "owner:a", 20).iids
    with pytest.raises(NotFoundError):
        idx.delete("new")


def test_group_scope_columns():
    idx = _filled(6)
    rng = np.random.default_rng(7)
    for iid in ("i000", "i002"):
        idx.set_scope(iid, "group:g", _feat(rng))
    assert "group:g" in idx.scopes()
    assert idx.drop_scope("group:g") == ["i000", "i002"]
    assert "group:g" not in idx.scopes()
    with pytest.raises(NotFoundError):
        idx.set_scope("missing", "group:g", _feat(rng))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 11)), max_size=40))
def test_update_replay_consistency(ops):
    rng = np.random.default_rng(8)
    pool = {f"i{n:02d}": _row(f"i{n:02d}", "ab"[n % 2], rng) for n in range(12)}
    idx, log = LinearIndex(), []
    for is_add, n in ops:
        iid = f"i{n:02d}"
        if is_add and iid not in idx:
            idx.add(pool[iid])
            log.append((True, iid))
        elif not is_add and iid in idx:
            idx.delete(iid)
            log.append((False, iid))
    replay = LinearIndex()
    for is_add, iid in log:
        replay.add(pool[iid]) if is_add else replay.delete(iid)
    assert replay == idx
    assert replay.to_bytes() == idx.to_bytes()


def test_persistence_roundtrip(tmp_path):
    idx = _filled(12)
    idx.set_scope("i001", "gglobal:g", _feat(np.random.default_rng(1)))
    path = tmp_path / "index.ccix"
    idx.save(path)
    back = LinearIndex.load(path)
    assert back == idx
    assert back.to_bytes() == idx.to_bytes()
    raw = path.read_bytes()
    with pytest.raises(FormatError):
        LinearIndex.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        LinearIndex.from_bytes(raw[:-5])
    with pytest.raises(FormatError):
        LinearIndex.from_bytes(raw + b"\x00")


def test_k_suggest():
    assert k_suggest([100], 1, 1) == 100
    assert k_suggest([100, 100], 0.5, 2) == 251
    for bad in (0, -0.5, 1.5):
        with pytest.raises(ContractError):
            k_suggest([100], bad, 1)
    with pytest.raises(ContractError):
        k_suggest([], 1, 1)
    with pytest.raises(ContractError):
        k_suggest([10], 1, 0)


def test_elbow():
    ks = [1, 2, 3, 4, 5, 6]
    obj = [100, 40, 20, 17, 15, 14]
    assert elbow_k(ks, obj) == 3
    with pytest.raises(ContractError):
        elbow_k([1, 2], [1])


def test_precision_counts():
    cats = {"a": "x", "b": "x", "c": "y", "d": "x"}
    assert precision(["a", "b", "d"], cats, "x", 3) == 1.0
    assert precision(["c"], cats, "x", 1) == 0.0
    # hand count: 2 of top-4 are 'x', and the list is shorter than m
    assert precision([Hit("a", "s", 0.0), Hit("c", "s", 1.0), Hit("b", "s", 2.0)], cats, "x", 4) == 0.5
    with pytest.raises(ContractError):
        precision([], cats, "x", 0)


def test_results_csv():
    res = SearchResult([Hit("a", "o1", 0.5), Hit("b", "o2", 1.0)])
    text = results_csv([("q1", res, "x")], {"a": "x", "b": "y"})
    lines = text.strip().splitlines()
    assert lines[0] == "query,rank,iid,source,distance,correct"
    assert lines[1] == "q1,1,a,o1,0.5,1" and lines[2] == "q1,2,b,o2,1.0,0"


def test_index_over_real_features(small_images):
    hists = [extract_local_hists(img) for _, _, img in small_images]
    vocab = build_vocabulary(hists, 4, n_init=1)
    idx = LinearIndex()
    for (name, _, img), h in zip(small_images, hists):
        f = bow_feature(img, vocab, h)
        idx.add(IndexRow(name, "o", {"owner:o": f, "global:o": f}))
    for (name, _, img), h in zip(small_images, hists):
        assert idx.search_single(bow_feature(img, vocab, h), "owner:o", 1).iids == [name]
