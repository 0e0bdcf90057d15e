"""Deterministic simulation of the full system and its on-disk workspace.

Workspace layout::

    config.json
    cs/       state.json, index.ccix, images/, groups/<gid>/, vocab/
    kmc/      state.json
    owners/<oid>/   state.json, images/
    groups/<gid>/   state.json (the organizer)
    users/<uid>/    state.json
    log/messages.jsonl
"""

from __future__ import annotations

import io
import json
import re
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..cipher import DEFAULT_N_PMT, EncryptedImage
from ..errors import ContractError, DuplicateError, FormatError, NotFoundError
from ..features import VOCAB_RESTARTS, WEIGHTS, Vocabulary
from ..index import LinearIndex
from ..perm import KeySource
from . import messages as M
from .bus import CS, KMC, Bus
from .entities import CloudServer, GroupOrganizer, Kmc, Owner, User, org_addr, owner_addr, user_addr

CONFIG_VERSION = 1
_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


@dataclass
class Config:
    n_pmt1: int = DEFAULT_N_PMT
    n_pmt2: int = DEFAULT_N_PMT
    k_owner: int = 50
    k_group: int = 50
    k_global: int = 50
    weights: tuple = WEIGHTS
    seed: int = 0
    kmeans_restarts: int = VOCAB_RESTARTS
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 4:
            raise ContractError("weights need four entries (DC, Y, U, V)")
        for name in ("n_pmt1", "n_pmt2", "k_owner", "k_group", "k_global", "kmeans_restarts"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be positive")

    def to_json(self) -> str:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Config":
        d = json.loads(text)
        if not isinstance(d, dict) or d.get("version") != CONFIG_VERSION:
            raise FormatError(f"unsupported config version {d.get('version') if isinstance(d, dict) else None}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise FormatError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class QueryOutcome:
    qid: str
    results: list  # (iid, source scope, distance, decrypted CoeffImage)
    rounds: object = None
    sources: list = field(default_factory=list)

    @property
    def iids(self):
        return [r[0] for r in self.results]


def _check_id(kind, ident):
    if not isinstance(ident, str) or not _ID.match(ident):
        raise ContractError(f"{kind} id {ident!r} must match [A-Za-z0-9_.-]+")


class System:
    def __init__(self, config: Config | None = None):
        self.config = config or Config()
        self.bus = Bus()
        self.cs = CloudServer(self.config, self._source("cs", ""))
        self.kmc = Kmc(self._source("kmc", ""))
        self.owners, self.users, self.orgs = {}, {}, {}
        self.bus.register(CS, self.cs)
        self.bus.register(KMC, self.kmc)
        self.log_offset = 0

    def _source(self, role, ident) -> KeySource:
        return KeySource.seeded(f"{self.config.seed}/{role}/{ident}")

    def _flow(self, name):
        self.bus.flow = name
        self.bus.query = None

    # ---------------------------------------------------------------- entities

    def add_owner(self, oid) -> Owner:
        _check_id("owner", oid)
        if oid in self.owners:
            raise DuplicateError(f"owner {oid} exists")
        o = Owner(oid, self._source("owner", oid), self.config)
        self.owners[oid] = o
        self.bus.register(o.address, o)
        return o

    def owner(self, oid) -> Owner:
        if oid not in self.owners:
            raise NotFoundError(f"unknown owner {oid}")
        return self.owners[oid]

    def user(self, uid, create=False) -> User:
        if uid not in self.users:
            if not create:
                raise NotFoundError(f"unknown user {uid}")
            _check_id("user", uid)
            u = User(uid, self._source("user", uid))
            self.users[uid] = u
            self.bus.register(u.address, u)
        return self.users[uid]

    def org(self, gid) -> GroupOrganizer:
        if gid not in self.orgs:
            raise NotFoundError(f"unknown group {gid}")
        return self.orgs[gid]

    # ---------------------------------------------------------------- flows

    def outsource(self, oid, images) -> list:
        self._flow("outsource")
        images = list(images)
        if not images:
            raise ContractError("nothing to outsource")
        iids = self.owner(oid).outsource(self.bus, images)
        self.bus.run()
        return iids

    def authorize(self, oid, uid):
        self._flow("authorize")
        owner = self.owner(oid)
        self.user(uid, create=True)
        owner.authorize(self.bus, uid)
        self.bus.run()

    def group_create(self, gid) -> GroupOrganizer:
        _check_id("group", gid)
        if gid in self.orgs:
            raise DuplicateError(f"group {gid} exists")
        self._flow("group_create")
        g = GroupOrganizer(gid, self._source("group", gid), self.config)
        self.orgs[gid] = g
        self.bus.register(g.address, g)
        g.create(self.bus)
        self.bus.run()
        return g

    def group_join(self, gid, oid):
        self._flow("group_join")
        self.owner(oid)
        self.org(gid).invite(self.bus, oid)
        self.bus.run()

    def group_leave(self, gid, oid):
        self._flow("group_leave")
        self.org(gid)
        self.owner(oid).leave_group(self.bus, gid)
        self.bus.run()

    def group_authorize(self, gid, uid):
        self._flow("group_authorize")
        g = self.org(gid)
        self.user(uid, create=True)
        g.authorize(self.bus, uid)
        self.bus.run()

    def query(self, uid, data, sources=None, m=10) -> QueryOutcome:
        self._flow("query")
        u = self.user(uid)
        sources = u.sources() if sources is None else sorted(set(sources))
        qid = u.query(self.bus, data, sources, m)
        try:
            self.bus.run()
        finally:
            self.bus.query = None
        return QueryOutcome(qid, u.results.pop(qid), self.bus.rounds(qid), sources)

    def image_add(self, oid, name, data) -> str:
        self._flow("image_add")
        (iid,) = self.owner(oid).outsource(self.bus, [(name, data)], kind=M.IMAGE_ADD)
        self.bus.run()
        return iid

    def image_delete(self, oid, iid):
        self._flow("image_delete")
        self.owner(oid).delete_image(self.bus, iid)
        self.bus.run()

    # ---------------------------------------------------------------- persistence

    def save(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.json").write_text(self.config.to_json())
        for sub in ("cs", "kmc", "owners", "groups", "users"):
            shutil.rmtree(root / sub, ignore_errors=True)
        cs = root / "cs"
        _write(cs / "state.json", M.dumps_state(self.cs.state()))
        self.cs.index.save(_mkparent(cs / "index.ccix"))
        for iid, enc in sorted(self.cs.images.items()):
            _write_encimg(cs / "images", enc)
        for (gid, iid), enc in sorted(self.cs.group_images.items()):
            _write_encimg(cs / "groups" / gid, enc)
        for scope, vocab in sorted(self.cs.vocab.items()):
            _write(cs / "vocab" / (scope.replace(":", "_") + ".npz"), _vocab_bytes(vocab))
        _write(root / "kmc" / "state.json", M.dumps_state(self.kmc.state()))
        for oid, o in sorted(self.owners.items()):
            _write(root / "owners" / oid / "state.json", M.dumps_state(o.state()))
            for iid, data in sorted(o.plain.items()):
                _write(root / "owners" / oid / "images" / f"{iid}.jpg", data)
        for gid, g in sorted(self.orgs.items()):
            _write(root / "groups" / gid / "state.json", M.dumps_state(g.state()))
        for uid, u in sorted(self.users.items()):
            _write(root / "users" / uid / "state.json", M.dumps_state(u.state()))
        log = _mkparent(root / "log" / "messages.jsonl")
        with open(log, "a", encoding="utf-8") as fh:
            fh.write(self.bus.jsonl())
        self.bus.log.clear()

    @classmethod
    def load(cls, root) -> "System":
        root = Path(root)
        if not (root / "config.json").exists():
            raise NotFoundError(f"{root} is not a workspace (no config.json)")
        sysm = cls(Config.from_json((root / "config.json").read_text()))
        cfg = sysm.config
        cs_dir = root / "cs"
        st = M.loads_state((cs_dir / "state.json").read_bytes())
        cs = CloudServer(cfg, KeySource(seed=st["source"]["seed"], counter=st["source"]["counter"]))
        cs.inc_val, cs.auth = st["inc_val"], st["auth"]
        cs.groups = {g: set(v) for g, v in st["groups"].items()}
        cs.grants = [tuple(x) for x in st["grants"]]
        cs.index = LinearIndex.load(cs_dir / "index.ccix")
        for meta in sorted((cs_dir / "images").glob("*.json")) if (cs_dir / "images").exists() else []:
            enc = _read_encimg(meta)
            cs.images[enc.iid] = enc
        if (cs_dir / "groups").exists():
            for gdir in sorted(p for p in (cs_dir / "groups").iterdir() if p.is_dir()):
                for meta in sorted(gdir.glob("*.json")):
                    enc = _read_encimg(meta)
                    cs.group_images[(gdir.name, enc.iid)] = enc
        if (cs_dir / "vocab").exists():
            for f in sorted((cs_dir / "vocab").glob("*.npz")):
                with np.load(f) as z:
                    scope = str(z["scope"])
                    cs.vocab[scope] = Vocabulary.from_arrays(scope, z)
        sysm.cs = cs
        sysm.bus.register(CS, cs)
        sysm.kmc = Kmc.from_state(M.loads_state((root / "kmc" / "state.json").read_bytes()))
        sysm.bus.register(KMC, sysm.kmc)
        for d in _subdirs(root / "owners"):
            plain = {p.stem: p.read_bytes() for p in sorted((d / "images").glob("*.jpg"))} \
                if (d / "images").exists() else {}
            o = Owner.from_state(M.loads_state((d / "state.json").read_bytes()), cfg, plain)
            sysm.owners[o.oid] = o
            sysm.bus.register(owner_addr(o.oid), o)
        for d in _subdirs(root / "groups"):
            g = GroupOrganizer.from_state(M.loads_state((d / "state.json").read_bytes()), cfg)
            sysm.orgs[g.gid] = g
            sysm.bus.register(org_addr(g.gid), g)
        for d in _subdirs(root / "users"):
            u = User.from_state(M.loads_state((d / "state.json").read_bytes()))
            sysm.users[u.uid] = u
            sysm.bus.register(user_addr(u.uid), u)
        log = root / "log" / "messages.jsonl"
        if log.exists():
            with open(log, encoding="utf-8") as fh:
                sysm.bus.seq = sum(1 for _ in fh)
        return sysm


def _subdirs(p: Path):
    return sorted(d for d in p.iterdir() if d.is_dir()) if p.exists() else []


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, data: bytes):
    _mkparent(path).write_bytes(data)


def _write_encimg(d: Path, enc: EncryptedImage):
    _write(d / f"{enc.iid}.jpg", enc.jpeg)
    _write(d / f"{enc.iid}.json", (json.dumps(enc.sidecar(), sort_keys=True) + "\n").encode())


def _read_encimg(meta: Path) -> EncryptedImage:
    return EncryptedImage.from_sidecar(meta.with_suffix(".jpg").read_bytes(), json.loads(meta.read_text()))


def _vocab_bytes(vocab: Vocabulary) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, scope=np.array(vocab.scope), **vocab.to_arrays())
    return buf.getvalue()
