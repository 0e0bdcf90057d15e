import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from coeffcrypt import corpus, harness
from coeffcrypt.cli import main
from coeffcrypt.errors import ContractError
from coeffcrypt.protocol import Config, System, check_boundaries
from coeffcrypt.protocol.bus import KMC, role_of


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, list(csv.reader(io.StringIO(out))), err


@pytest.fixture()
def env(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(Config(k_owner=6, k_group=6, k_global=6, kmeans_restarts=1).to_json())
    data = tmp_path / "data"
    corpus.write_toy_corpus(data, categories=3, per_category=3, seed=2)
    ws = tmp_path / "ws"
    return ws, cfg, data


def _boundaries_clean(ws):
    system = System.load(ws)
    assert check_boundaries(system, ws) == []


def test_full_cli_run(env, capsys):
    ws, cfg, data = env
    base = ["-w", ws]
    assert _run(capsys, *base, "--config", cfg, "--seed", 4, "init")[0] == 0
    for oid in ("o1", "o2"):
        assert _run(capsys, *base, "owner", "add", oid)[0] == 0
    code, rows, _ = _run(capsys, *base, "ingest", data / "cat00", "--owner", "o1")
    assert code == 0 and rows[0] == ["iid", "path"] and len(rows) == 4
    assert _run(capsys, *base, "ingest", data / "cat01", "--owner", "o2")[0] == 0
    _boundaries_clean(ws)
    assert _run(capsys, *base, "authorize", "o1", "alice")[0] == 0
    assert _run(capsys, *base, "authorize", "o2", "alice")[0] == 0
    _boundaries_clean(ws)

    query = sorted((data / "cat00").glob("*.jpg"))[0]
    code, rows, _ = _run(capsys, *base, "query", "alice", query, "--top", 3, "--out", ws.parent / "dec")
    assert code == 0
    assert rows[0] == ["query", "rank", "iid", "source", "distance", "correct"]
    assert rows[1][2] == "o1-00000" and rows[1][1] == "1"
    assert (ws.parent / "dec" / "o1-00000.jpg").exists()
    code, rows, _ = _run(capsys, *base, "query", "alice", query, "--sources", "owner:o1", "--top", 2)
    assert code == 0 and len(rows) == 3
    _boundaries_clean(ws)

    for cmd in (("group", "create", "g1"), ("group", "join", "g1", "o1"), ("group", "join", "g1", "o2"),
                ("group", "authorize", "g1", "bob")):
        assert _run(capsys, *base, *cmd)[0] == 0
        _boundaries_clean(ws)
    code, rows, _ = _run(capsys, *base, "query", "bob", query, "--top", 2)
    assert code == 0 and rows[1][2] == "o1-00000"
    assert _run(capsys, *base, "group", "leave", "g1", "o2")[0] == 0
    _boundaries_clean(ws)

    extra = sorted((data / "cat02").glob("*.jpg"))[0]
    code, rows, _ = _run(capsys, *base, "image", "add", "o1", extra)
    new_iid = rows[1][1]
    assert code == 0 and new_iid == "o1-00003"
    assert _run(capsys, *base, "query", "alice", extra, "--top", 1)[1][1][2] == new_iid
    assert _run(capsys, *base, "image", "delete", "o1", new_iid)[0] == 0
    _boundaries_clean(ws)

    code, rows, _ = _run(capsys, *base, "report", "security")
    assert code == 0 and rows[0][:2] == ["iid", "owner"] and len(rows) == 1 + 6
    code, rows, _ = _run(capsys, *base, "report", "security", "--summary")
    summary = dict(rows[1:])
    assert summary["kba_flattened"] == "True"
    code, rows, _ = _run(capsys, *base, "report", "boundaries")
    assert code == 0 and rows == [["violation"]]

    log = [json.loads(x) for x in (ws / "log" / "messages.jsonl").read_text().splitlines()]
    assert [r["seq"] for r in log] == list(range(len(log)))
    assert not any({role_of(r["sender"]), role_of(r["receiver"])} == {KMC, "user"} for r in log)


def _script(ws, cfg, data):
    return [
        ["-w", ws, "--config", cfg, "--seed", 9, "init"],
        ["-w", ws, "owner", "add", "o1"],
        ["-w", ws, "ingest", data, "--owner", "o1"],
        ["-w", ws, "authorize", "o1", "u"],
        ["-w", ws, "query", "u", sorted(data.rglob("*.jpg"))[4], "--top", 3],
    ]


def test_seeded_runs_are_byte_identical(env, capsys, tmp_path):
    _, cfg, data = env
    outs = []
    for name in ("r1", "r2"):
        ws = tmp_path / name
        outs.append([_run(capsys, *argv)[1] for argv in _script(ws, cfg, data)])
    assert outs[0][1:] == outs[1][1:]
    a, b = tmp_path / "r1", tmp_path / "r2"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_errors_are_machine_readable(env, capsys):
    ws, cfg, data = env
    assert _run(capsys, "-w", ws, "--config", cfg, "init")[0] == 0
    code, _, err = _run(capsys, "-w", ws, "--config", cfg, "init")
    assert code == 1 and json.loads(err)["error"] == "duplicate"
    code, _, err = _run(capsys, "-w", ws, "authorize", "ghost", "u")
    assert code == 1 and json.loads(err)["error"] == "not-found"
    _run(capsys, "-w", ws, "owner", "add", "o1")
    _run(capsys, "-w", ws, "ingest", data / "cat00", "--owner", "o1")
    _run(capsys, "-w", ws, "owner", "add", "o2")
    _run(capsys, "-w", ws, "authorize", "o2", "mallory")
    query = sorted((data / "cat00").glob("*.jpg"))[0]
    code, _, err = _run(capsys, "-w", ws, "query", "mallory", query, "--sources", "owner:o1")
    assert code == 1 and json.loads(err)["error"] == "authorization"
    code, _, err = _run(capsys, "-w", ws, "--seed", 99, "owner", "add", "o3")
    assert code == 1 and json.loads(err)["error"] == "contract"
    code, _, err = _run(capsys, "-w", ws.parent / "nowhere", "owner", "add", "o1")
    assert code == 1 and "error" in json.loads(err)


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    capsys.readouterr()


def test_eval_precision_matches_hand_count(env, capsys, tmp_path):
    _, cfg, data = env
    detail = tmp_path / "detail.csv"
    code, rows, _ = _run(capsys, "--config", cfg, "-w", tmp_path / "none", "eval", "precision", data,
                         "--top", 3, "--detail", detail, "--sources", 1)
    assert code == 0 and rows[0] == ["sources", "k_g", "top", "queries", "precision"]
    hits = list(csv.DictReader(detail.open()))
    per_query = {}
    for h in hits:
        per_query.setdefault(h["query"], []).append(int(h["correct"]))
    assert len(per_query) == 9
    hand = sum(sum(v) / 3 for v in per_query.values()) / len(per_query)
    assert float(rows[1][4]) == pytest.approx(hand, abs=1e-6)
    # correctness flags agree with the category directories
    for h in hits:
        src_cat = h["query"].split("/")[0]
        owner_file = next(p for p in data.rglob("*.jpg") if p.name == Path(h["query"]).name)
        assert owner_file.parent.name == src_cat


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "coeffcrypt.cli", "-w", str(tmp_path / "w"), "init"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("workspace,seed")


def test_harness_partition_and_labels(tmp_path):
    owners = harness.partition(10, 3, seed=0)
    assert sorted(owners.count(j) for j in range(3)) == [3, 3, 4]
    assert owners == harness.partition(10, 3, seed=0)
    with pytest.raises(ContractError):
        harness.partition(2, 3, 0)
    corpus.write_toy_corpus(tmp_path / "c", categories=2, per_category=2)
    labeled = harness.load_labeled(tmp_path / "c")
    assert [c for c, _, _ in labeled] == ["cat00", "cat00", "cat01", "cat01"]
    (tmp_path / "flat").mkdir()
    (tmp_path / "flat" / "x.jpg").write_bytes(labeled[0][2])
    with pytest.raises(ContractError):
        harness.load_labeled(tmp_path / "flat")
    with pytest.raises(ContractError):
        harness.load_labeled(tmp_path / "empty_missing")


def test_benchmark_smoke():
    root = Path(__file__).resolve().parents[1] / "benchmarks"
    sys.path.insert(0, str(root))
    try:
        import bench_entropy
    finally:
        sys.path.remove(str(root))
    rows = bench_entropy.run(repeat=1, n=2)
    assert [r[0] for r in rows] == ["python", "cython"]
    assert rows[0][1] > 0
