"""Command-line driver.

Every command loads the workspace, runs one protocol flow, saves the
workspace and appends the flow's messages to ``log/messages.jsonl``.
Results go to stdout as CSV; failures print ``{"error": kind, ...}`` as JSON
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .codec import encode_jpeg
from .errors import CoeffCryptError, ContractError, DuplicateError, FormatError
from .protocol import Config, System, check_boundaries, security_report

EXIT_ERROR = 1


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _config(args, base: Config | None = None) -> Config:
    cfg = base or Config()
    if args.config:
        cfg = Config.from_json(Path(args.config).read_text())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _open(args) -> System:
    system = System.load(args.workspace)
    if args.seed is not None and args.seed != system.config.seed:
        raise ContractError(f"workspace was initialized with seed {system.config.seed}, not {args.seed}")
    return system


# ---------------------------------------------------------------- commands


def cmd_init(args):
    root = Path(args.workspace)
    if (root / "config.json").exists():
        raise DuplicateError(f"{root} already holds a workspace")
    system = System(_config(args))
    system.save(root)
    _writer().writerows([["workspace", "seed"], [str(root), system.config.seed]])


def cmd_owner_add(args):
    system = _open(args)
    system.add_owner(args.oid)
    system.save(args.workspace)
    _writer().writerows([["owner"], [args.oid]])


def cmd_ingest(args):
    system = _open(args)
    paths = harness.find_jpegs(args.path)
    if not paths:
        raise ContractError(f"no JPEG files under {args.path}")
    root = Path(args.path)
    names = [str(p.relative_to(root)) if root.is_dir() else p.name for p in paths]
    iids = system.outsource(args.owner, [(n, p.read_bytes()) for n, p in zip(names, paths)])
    system.save(args.workspace)
    w = _writer()
    w.writerow(["iid", "path"])
    w.writerows(zip(iids, names))


def cmd_authorize(args):
    system = _open(args)
    system.authorize(args.oid, args.uid)
    system.save(args.workspace)
    _writer().writerows([["source", "user"], [f"owner:{args.oid}", args.uid]])


def cmd_group(args):
    system = _open(args)
    if args.group_cmd == "create":
        system.group_create(args.gid)
        row = ["create", args.gid, ""]
    elif args.group_cmd == "join":
        system.group_join(args.gid, args.oid)
        row = ["join", args.gid, args.oid]
    elif args.group_cmd == "leave":
        system.group_leave(args.gid, args.oid)
        row = ["leave", args.gid, args.oid]
    else:
        system.group_authorize(args.gid, args.uid)
        row = ["authorize", args.gid, args.uid]
    system.save(args.workspace)
    _writer().writerows([["action", "group", "member"], row])


def cmd_query(args):
    system = _open(args)
    data = Path(args.image).read_bytes()
    out = system.query(args.uid, data, args.sources or None, args.top)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        for iid, _, _, img in out.results:
            (d / f"{iid}.jpg").write_bytes(encode_jpeg(img))
    system.save(args.workspace)
    w = _writer()
    w.writerow(["query", "rank", "iid", "source", "distance", "correct"])
    for rank, (iid, src, dist, _) in enumerate(out.results, 1):
        w.writerow([out.qid, rank, iid, src, repr(dist), ""])


def cmd_eval_precision(args):
    base = System.load(args.workspace).config if (Path(args.workspace) / "config.json").exists() else None
    cfg = _config(args, base)
    labeled = harness.load_labeled(args.corpus)
    run = harness.eval_precision(labeled, args.sources, args.top, cfg, k_g=args.kg)
    if args.save:
        if (Path(args.save) / "config.json").exists():
            raise DuplicateError(f"{args.save} already holds a workspace")
        run.system.save(args.save)
    if args.detail:
        with open(args.detail, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query", "rank", "iid", "source", "distance", "correct"])
            for name, _, ranked in run.hits:
                for rank, (iid, src, dist, ok) in enumerate(ranked, 1):
                    w.writerow([name, rank, iid, src, repr(dist), int(ok)])
    w = _writer()
    w.writerow(["sources", "k_g", "top", "queries", "precision"])
    w.writerow([run.n_sources, run.k_g, run.m, len(run.per_query), f"{run.mean:.6f}"])


def cmd_report_security(args):
    system = _open(args)
    rep = security_report(system)
    w = _writer()
    if args.summary:
        w.writerow(["key", "value"])
        for k, v in rep["summary"].items():
            w.writerow([k, v])
        return
    kba = {r["iid"]: r for r in rep["kba"]}
    cols = ["value_tables", "block_permutation", "intra_block_permutation", "dc_length_tables", "dc_bits", "total"]
    w.writerow(["iid", "owner"] + cols + ["chi2_plain", "chi2_n1", "chi2_n5"])
    for r in rep["images"]:
        k = kba.get(r["iid"], {})
        w.writerow([r["iid"], r["owner"]] + [f"{r[c]:.4f}" for c in cols]
                   + [f"{k[c]:.4f}" if c in k else "" for c in ("chi2_plain", "chi2_n1", "chi2_n5")])


def cmd_report_boundaries(args):
    system = _open(args)
    problems = check_boundaries(system, args.workspace)
    w = _writer()
    w.writerow(["violation"])
    w.writerows([p] for p in problems)
    if problems:
        raise ContractError(f"{len(problems)} knowledge-boundary violations")


def cmd_image(args):
    system = _open(args)
    w = _writer()
    if args.image_cmd == "add":
        p = Path(args.path)
        iid = system.image_add(args.oid, p.name, p.read_bytes())
        w.writerows([["action", "iid"], ["add", iid]])
    else:
        system.image_delete(args.oid, args.iid)
        w.writerows([["action", "iid"], ["delete", args.iid]])
    system.save(args.workspace)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coeffcrypt", description="Encrypted JPEG retrieval simulator.")
    p.add_argument("-w", "--workspace", default=os.environ.get("COEFFCRYPT_WORKSPACE", "workspace"))
    p.add_argument("--seed", type=int, default=None, help="run seed (fixed at init)")
    p.add_argument("--config", default=None, help="versioned JSON config file")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("init").set_defaults(fn=cmd_init)

    owner = sub.add_parser("owner").add_subparsers(dest="owner_cmd", required=True)
    oa = owner.add_parser("add")
    oa.add_argument("oid")
    oa.set_defaults(fn=cmd_owner_add)

    ing = sub.add_parser("ingest", help="outsource every baseline JPEG under a path")
    ing.add_argument("path")
    ing.add_argument("--owner", required=True)
    ing.set_defaults(fn=cmd_ingest)

    au = sub.add_parser("authorize")
    au.add_argument("oid")
    au.add_argument("uid")
    au.set_defaults(fn=cmd_authorize)

    grp = sub.add_parser("group").add_subparsers(dest="group_cmd", required=True)
    for name, second in (("create", None), ("join", "oid"), ("leave", "oid"), ("authorize", "uid")):
        g = grp.add_parser(name)
        g.add_argument("gid")
        if second:
            g.add_argument(second)
        g.set_defaults(fn=cmd_group)

    q = sub.add_parser("query")
    q.add_argument("uid")
    q.add_argument("image")
    q.add_argument("--sources", nargs="+", default=None, help="scope tags such as owner:o1 group:g1")
    q.add_argument("--top", type=int, default=10)
    q.add_argument("--out", default=None, help="directory for decrypted results")
    q.set_defaults(fn=cmd_query)

    ev = sub.add_parser("eval").add_subparsers(dest="eval_cmd", required=True)
    ep = ev.add_parser("precision")
    ep.add_argument("corpus", help="directory-per-category labeled corpus")
    ep.add_argument("--sources", type=int, default=1)
    ep.add_argument("--kg", type=int, default=None)
    ep.add_argument("--top", type=int, default=10)
    ep.add_argument("--detail", default=None, help="write per-hit CSV here")
    ep.add_argument("--save", default=None, help="persist the evaluation workspace here")
    ep.set_defaults(fn=cmd_eval_precision)

    rep = sub.add_parser("report").add_subparsers(dest="report_cmd", required=True)
    rs = rep.add_parser("security")
    rs.add_argument("--summary", action="store_true")
    rs.set_defaults(fn=cmd_report_security)
    rep.add_parser("boundaries").set_defaults(fn=cmd_report_boundaries)

    img = sub.add_parser("image").add_subparsers(dest="image_cmd", required=True)
    ia = img.add_parser("add")
    ia.add_argument("oid")
    ia.add_argument("path")
    ia.set_defaults(fn=cmd_image)
    idl = img.add_parser("delete")
    idl.add_argument("oid")
    idl.add_argument("iid")
    idl.set_defaults(fn=cmd_image)
    return p


def _fail(kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.fn(args)
    except CoeffCryptError as exc:
        _fail(exc.kind, str(exc))
        return EXIT_ERROR
    except json.JSONDecodeError as exc:
        _fail(FormatError.kind, str(exc))
        return EXIT_ERROR
    except OSError as exc:
        _fail("io", str(exc))
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
