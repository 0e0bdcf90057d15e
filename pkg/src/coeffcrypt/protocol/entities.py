"""The five protocol parties.

Each entity reacts to messages in ``handle`` and exposes its persistent state
through ``state`` / ``from_state``.  Randomness comes from a per-entity
:class:`KeySource`, so seeded runs replay exactly.
"""

from __future__ import annotations

import hashlib

from ..cipher import EncryptedImage, gen_val_key, img_dec, img_enc, trap_gen
from ..codec import decode_jpeg
from ..errors import AuthorizationError, ContractError, DuplicateError, NotFoundError
from ..features import BowFeature, build_vocabulary, extract_local_hists, normalized_dc_feature, quantize
from ..index import IndexRow, LinearIndex, scope_tag
from ..keyproto import (WRAP_KEY_BYTES, cs_reencrypt_for_group, derive_inc_usr_key, derive_inc_val_key,
                        gen_user_key, img_key_enc, kmc_transform, poskey_sizes, unwrap, user_key_enc,
                        user_recover_pos_key, wrap_for_group)
from ..perm import KeySource
from . import messages as M
from .bus import CS, KMC


def owner_addr(oid):
    return f"owner:{oid}"


def user_addr(uid):
    return f"user:{uid}"


def org_addr(gid):
    return f"org:{gid}"


def _source_state(src: KeySource):
    return {"seed": src.seed, "counter": src.counter}


def _source_from(st):
    return KeySource(seed=st["seed"], counter=st["counter"])


def image_sizes(img) -> set:
    return {(c, comp.blknum) for c, comp in enumerate(img.components)}


class Entity:
    address = ""

    def handle(self, msg, bus):
        fn = getattr(self, "on_" + msg.kind, None)
        if fn is None:
            raise ContractError(f"{self.address} does not accept {msg.kind}")
        fn(msg, bus)

    def send(self, bus, receiver, kind, **payload):
        bus.send(M.Message(self.address, receiver, kind, payload))


# ---------------------------------------------------------------- owner


class Owner(Entity):
    def __init__(self, oid, source: KeySource, config, valkey=None, userkey=None):
        self.oid = oid
        self.address = owner_addr(oid)
        self.source = source
        self.config = config
        self.valkey = valkey or gen_val_key(source, config.n_pmt1, config.n_pmt2)
        self.userkey = userkey or gen_user_key(source)
        self.registry = {}  # iid -> {"name", "sha256", "sizes"}
        self.plain = {}  # iid -> plaintext JPEG bytes
        self.issued = {}  # uid -> UserKey handed to that user
        self.groups = {}  # gid -> (UserKey_GID, ValKey_GID)
        self.next_id = 0

    def sizes(self) -> set:
        out = set()
        for rec in self.registry.values():
            out |= set(rec["sizes"])
        return out

    def _encrypt(self, name, data):
        img = decode_jpeg(data)
        iid = f"{self.oid}-{self.next_id:05d}"
        self.next_id += 1
        enc, poskey, _ = img_enc(img, iid, self.valkey, self.source, owner=self.oid)
        ukey = self.userkey.materialize(poskey_sizes(poskey))
        self.registry[iid] = {"name": name, "sha256": hashlib.sha256(data).hexdigest(),
                              "sizes": sorted(image_sizes(img))}
        self.plain[iid] = bytes(data)
        return enc, img_key_enc(poskey, ukey)

    def outsource(self, bus, images, kind=M.OUTSOURCE):
        """Encrypt ``[(name, jpeg bytes)]``; ship ciphertexts to CS and keys to KMC."""
        before = self.sizes()
        encs, keys = [], []
        for name, data in images:
            enc, ek = self._encrypt(name, data)
            encs.append(enc)
            keys.append(ek)
        self.send(bus, CS, kind, oid=self.oid, images=encs)
        self.send(bus, KMC, kind, oid=self.oid, keys=keys)
        if self.sizes() - before:
            self._refresh_links(bus)
        return [e.iid for e in encs]

    def _refresh_links(self, bus):
        sizes = self.sizes()
        self.userkey.materialize(sizes)
        links = {uid: user_key_enc(self.userkey, u, sizes) for uid, u in sorted(self.issued.items())}
        incs = {gid: derive_inc_usr_key(self.userkey, ug, sizes) for gid, (ug, _) in sorted(self.groups.items())}
        if links or incs:
            self.send(bus, KMC, M.KEY_UPDATE, oid=self.oid, links=links, inc=incs)
        for gid in sorted(self.groups):
            self.send(bus, org_addr(gid), M.KEY_UPDATE, oid=self.oid, sizes=sorted(sizes))

    def authorize(self, bus, uid):
        if uid in self.issued:
            raise DuplicateError(f"user {uid} is already authorized by {self.oid}")
        ukey = gen_user_key(self.source)
        self.issued[uid] = ukey
        sizes = self.sizes()
        link = user_key_enc(self.userkey.materialize(sizes), ukey, sizes)
        self.send(bus, user_addr(uid), M.AUTH_GRANT, oid=self.oid, valkey=self.valkey, userkey=ukey)
        self.send(bus, KMC, M.AUTH_GRANT, oid=self.oid, uid=uid, link=link)
        self.send(bus, CS, M.AUTH_GRANT, source=scope_tag("owner", self.oid), uid=uid)

    def delete_image(self, bus, iid):
        if iid not in self.registry:
            raise NotFoundError(f"owner {self.oid} has no image {iid}")
        del self.registry[iid]
        self.plain.pop(iid, None)
        self.send(bus, CS, M.IMAGE_DELETE, oid=self.oid, iid=iid)
        self.send(bus, KMC, M.IMAGE_DELETE, oid=self.oid, iid=iid)

    def leave_group(self, bus, gid):
        if gid not in self.groups:
            raise NotFoundError(f"owner {self.oid} is not in group {gid}")
        del self.groups[gid]
        for receiver in (CS, KMC, org_addr(gid)):
            self.send(bus, receiver, M.GROUP_LEAVE, gid=gid, oid=self.oid)

    def on_GroupJoin(self, msg, bus):
        p = msg.payload
        gid, ug, vg = p["gid"], p["userkey"], p["valkey"]
        if gid in self.groups:
            raise DuplicateError(f"owner {self.oid} already belongs to group {gid}")
        self.groups[gid] = (ug, vg)
        sizes = self.sizes()
        inc_usr = derive_inc_usr_key(self.userkey.materialize(sizes), ug, sizes)
        inc_val = derive_inc_val_key(self.valkey, vg)
        self.send(bus, KMC, M.GROUP_JOIN, gid=gid, oid=self.oid, inc=inc_usr)
        self.send(bus, CS, M.GROUP_JOIN, gid=gid, oid=self.oid, inc=inc_val)
        self.send(bus, org_addr(gid), M.GROUP_JOIN, gid=gid, oid=self.oid, sizes=sorted(sizes))

    def state(self):
        return {"oid": self.oid, "source": _source_state(self.source), "valkey": self.valkey,
                "userkey": self.userkey, "registry": self.registry, "issued": self.issued,
                "groups": self.groups, "next_id": self.next_id}

    @classmethod
    def from_state(cls, st, config, plain):
        o = cls(st["oid"], _source_from(st["source"]), config, st["valkey"], st["userkey"])
        o.registry = {k: dict(v, sizes=[tuple(s) for s in v["sizes"]]) for k, v in st["registry"].items()}
        o.issued, o.groups, o.next_id = st["issued"], st["groups"], st["next_id"]
        o.plain = dict(plain)
        return o


# ---------------------------------------------------------------- cloud server


class CloudServer(Entity):
    address = CS

    def __init__(self, config, source: KeySource):
        self.config = config
        self.source = source
        self.images = {}  # iid -> EncryptedImage under the owner's keys
        self.group_images = {}  # (gid, iid) -> EncryptedImage under the group's value keys
        self.vocab = {}  # scope -> Vocabulary
        self.index = LinearIndex(config.weights)
        self.inc_val = {}  # (oid, gid) -> IncValKey
        self.groups = {}  # gid -> set of member oids
        self.auth = {}  # uid -> set of source scopes
        self.grants = []  # (source scope, uid) in grant order
        self.pending = {}  # qid -> (uid, hits, sources)
        self._hists = {}  # ciphertext digest -> (hists, dc feature); cache only

    # -- features

    def _local(self, enc: EncryptedImage):
        key = hashlib.sha256(enc.jpeg).digest()
        hit = self._hists.get(key)
        if hit is None:
            img = decode_jpeg(enc.jpeg)
            hit = (extract_local_hists(img), normalized_dc_feature(img))
            self._hists[key] = hit
        return hit

    def _feature(self, enc, scope) -> BowFeature:
        hists, dc = self._local(enc)
        vocab = self.vocab.get(scope)
        if vocab is None:
            raise ContractError(f"no vocabulary for scope {scope}")
        return BowFeature(dc.copy(), *quantize(hists, vocab))

    def _build(self, scope, encs, k):
        hists = [self._local(e)[0] for e in encs]
        self.vocab[scope] = build_vocabulary(hists, k, seed=self.config.seed, scope=scope,
                                             n_init=self.config.kmeans_restarts)

    def _owner_iids(self, oid):
        return sorted(i for i, e in self.images.items() if e.owner == oid)

    # -- handlers

    def _ingest(self, msg):
        oid = msg.payload["oid"]
        encs = msg.payload["images"]
        for e in encs:
            if e.iid in self.images:
                raise DuplicateError(f"image {e.iid} already stored")
            if e.owner != oid:
                raise ContractError(f"image {e.iid} is not owned by {oid}")
        for e in encs:
            self.images[e.iid] = e
        own, glob = scope_tag("owner", oid), scope_tag("global", oid)
        if own not in self.vocab:
            batch = [self.images[i] for i in self._owner_iids(oid)]
            self._build(own, batch, self.config.k_owner)
            self._build(glob, batch, self.config.k_global)
        for e in encs:
            self.index.add(IndexRow(e.iid, oid, {own: self._feature(e, own), glob: self._feature(e, glob)}))
        for gid in sorted(self.groups):
            if oid in self.groups[gid]:
                for e in encs:
                    self._add_group_image(gid, e)

    on_Outsource = on_ImageAdd = lambda self, msg, bus: self._ingest(msg)

    def on_ImageDelete(self, msg, bus):
        iid = msg.payload["iid"]
        enc = self.images.get(iid)
        if enc is None or enc.owner != msg.payload["oid"]:
            raise NotFoundError(f"image {iid} is not stored for {msg.payload['oid']}")
        del self.images[iid]
        for key in [k for k in self.group_images if k[1] == iid]:
            del self.group_images[key]
        self.index.delete(iid)

    def on_AuthGrant(self, msg, bus):
        p = msg.payload
        self.auth.setdefault(p["uid"], set()).add(p["source"])
        self.grants.append((p["source"], p["uid"]))

    def on_GroupCreate(self, msg, bus):
        gid = msg.payload["gid"]
        if gid in self.groups:
            raise DuplicateError(f"group {gid} exists")
        self.groups[gid] = set()

    def _add_group_image(self, gid, enc):
        genc = cs_reencrypt_for_group(enc, self.inc_val[(enc.owner, gid)], gid)
        self.group_images[(gid, enc.iid)] = genc
        feats = {s: self._feature(genc, s) for s in (scope_tag("group", gid), scope_tag("gglobal", gid))}
        for s, f in feats.items():
            self.index.set_scope(enc.iid, s, f)

    def on_GroupJoin(self, msg, bus):
        gid, oid = msg.payload["gid"], msg.payload["oid"]
        if gid not in self.groups:
            raise NotFoundError(f"unknown group {gid}")
        self.groups[gid].add(oid)
        self.inc_val[(oid, gid)] = msg.payload["inc"]
        for iid in self._owner_iids(oid):
            enc = self.images[iid]
            self.group_images[(gid, iid)] = cs_reencrypt_for_group(enc, self.inc_val[(oid, gid)], gid)
        # the group vocabularies are rebuilt over every member's images
        members = sorted(k for k in self.group_images if k[0] == gid)
        if not members:
            return
        encs = [self.group_images[k] for k in members]
        gs, gg = scope_tag("group", gid), scope_tag("gglobal", gid)
        self._build(gs, encs, self.config.k_group)
        self._build(gg, encs, self.config.k_global)
        for (_, iid), genc in zip(members, encs):
            self.index.set_scope(iid, gs, self._feature(genc, gs))
            self.index.set_scope(iid, gg, self._feature(genc, gg))

    def on_GroupLeave(self, msg, bus):
        gid, oid = msg.payload["gid"], msg.payload["oid"]
        if oid not in self.groups.get(gid, ()):
            raise NotFoundError(f"owner {oid} is not in group {gid}")
        self.groups[gid].discard(oid)
        self.inc_val.pop((oid, gid), None)
        iids = self._owner_iids(oid)
        for iid in iids:
            self.group_images.pop((gid, iid), None)
        for s in (scope_tag("group", gid), scope_tag("gglobal", gid)):
            self.index.drop_scope(s, iids)

    def on_Query(self, msg, bus):
        p = msg.payload
        uid, qid, m = p["uid"], p["qid"], int(p["m"])
        trapdoors = p["trapdoors"]
        if not trapdoors:
            raise ContractError("query names no sources")
        allowed = self.auth.get(uid, set())
        bad = sorted(set(trapdoors) - allowed)
        if bad:
            raise AuthorizationError(f"user {uid} is not authorized for {', '.join(bad)}")
        if len(trapdoors) == 1:
            (source, enc), = trapdoors.items()
            hits = self.index.search_single(self._feature(enc, source), source, m)
            srcs = [source for _ in hits]
        else:
            mapped, back = {}, {}
            for source, enc in trapdoors.items():
                kind, ident = source.split(":", 1)
                g = scope_tag("global" if kind == "owner" else "gglobal", ident)
                mapped[g] = self._feature(enc, g)
                back[g] = source
            hits = self.index.search_multi(mapped, m)
            srcs = [back[h.scope] for h in hits]
        items = [{"iid": h.iid, "oid": self.images[h.iid].owner, "source": s} for h, s in zip(hits, srcs)]
        self.pending[qid] = (uid, [(h.iid, s, h.distance) for h, s in zip(hits, srcs)])
        self.send(bus, KMC, M.KEY_REQUEST, qid=qid, uid=uid, items=items)

    def on_KeyResponse(self, msg, bus):
        qid = msg.payload["qid"]
        uid, hits = self.pending.pop(qid)
        images = []
        for iid, source, _ in hits:
            if source.startswith("group:"):
                images.append(self.group_images[(source.split(":", 1)[1], iid)])
            else:
                images.append(self.images[iid])
        self.send(bus, user_addr(uid), M.RESULT, qid=qid, hits=hits, images=images, keys=msg.payload["keys"])

    def state(self):
        return {"source": _source_state(self.source), "inc_val": self.inc_val, "groups": self.groups,
                "auth": self.auth, "grants": self.grants}


# ---------------------------------------------------------------- key management centre


class Kmc(Entity):
    address = KMC

    def __init__(self, source: KeySource):
        self.source = source
        self.poskeys = {}  # iid -> (oid, EncPosKey)
        self.links = {}  # (oid, uid) -> UserKey link
        self.group_links = {}  # (gid, uid) -> UserKey link
        self.inc_usr = {}  # (oid, gid) -> UserKey increment
        self.wrap_keys = {}  # gid -> bytes

    def _store(self, msg):
        oid = msg.payload["oid"]
        for k in msg.payload["keys"]:
            if k.iid in self.poskeys:
                raise DuplicateError(f"key for {k.iid} already stored")
            self.poskeys[k.iid] = (oid, k)

    on_Outsource = on_ImageAdd = lambda self, msg, bus: self._store(msg)

    def on_ImageDelete(self, msg, bus):
        iid = msg.payload["iid"]
        if self.poskeys.get(iid, (None,))[0] != msg.payload["oid"]:
            raise NotFoundError(f"no key for {iid}")
        del self.poskeys[iid]

    def on_AuthGrant(self, msg, bus):
        p = msg.payload
        if "gid" in p:
            self.group_links[(p["gid"], p["uid"])] = p["link"]
        else:
            self.links[(p["oid"], p["uid"])] = p["link"]

    def on_KeyUpdate(self, msg, bus):
        p = msg.payload
        if "gid" in p:
            for uid, link in p["links"].items():
                self.group_links[(p["gid"], uid)] = link
            return
        for uid, link in p["links"].items():
            self.links[(p["oid"], uid)] = link
        for gid, inc in p["inc"].items():
            self.inc_usr[(p["oid"], gid)] = inc

    def on_GroupCreate(self, msg, bus):
        self.wrap_keys[msg.payload["gid"]] = msg.payload["wrap_key"]

    def on_GroupJoin(self, msg, bus):
        self.inc_usr[(msg.payload["oid"], msg.payload["gid"])] = msg.payload["inc"]

    def on_GroupLeave(self, msg, bus):
        self.inc_usr.pop((msg.payload["oid"], msg.payload["gid"]), None)

    def on_KeyRequest(self, msg, bus):
        p = msg.payload
        uid = p["uid"]
        keys = []
        for item in p["items"]:
            iid, oid, source = item["iid"], item["oid"], item["source"]
            stored = self.poskeys.get(iid)
            if stored is None or stored[0] != oid:
                raise NotFoundError(f"no key for {iid} from {oid}")
            kind, ident = source.split(":", 1)
            if kind == "owner":
                link = self.links.get((ident, uid))
                if link is None or ident != oid:
                    raise AuthorizationError(f"user {uid} holds no grant from {ident}")
                keys.append(kmc_transform(stored[1], link))
            else:
                link = self.group_links.get((ident, uid))
                inc = self.inc_usr.get((oid, ident))
                if link is None:
                    raise AuthorizationError(f"user {uid} holds no grant from group {ident}")
                if inc is None:
                    raise AuthorizationError(f"owner {oid} is not a member of group {ident}")
                enc2 = kmc_transform(kmc_transform(stored[1], inc), link)
                keys.append(wrap_for_group(enc2, self.wrap_keys[ident], source=self.source))
        self.send(bus, CS, M.KEY_RESPONSE, qid=p["qid"], keys=keys)

    def state(self):
        return {"source": _source_state(self.source), "poskeys": self.poskeys, "links": self.links,
                "group_links": self.group_links, "inc_usr": self.inc_usr, "wrap_keys": self.wrap_keys}

    @classmethod
    def from_state(cls, st):
        k = cls(_source_from(st["source"]))
        k.poskeys, k.links, k.group_links = st["poskeys"], st["links"], st["group_links"]
        k.inc_usr, k.wrap_keys = st["inc_usr"], st["wrap_keys"]
        return k


# ---------------------------------------------------------------- group organizer


class GroupOrganizer(Entity):
    def __init__(self, gid, source: KeySource, config, userkey=None, valkey=None, wrap_key=None):
        self.gid = gid
        self.address = org_addr(gid)
        self.source = source
        self.userkey = userkey or gen_user_key(source)
        self.valkey = valkey or gen_val_key(source, config.n_pmt1, config.n_pmt2)
        self.wrap_key = wrap_key or source.token(WRAP_KEY_BYTES)
        self.members = set()
        self.member_sizes = {}  # oid -> sizes reported at join or update
        self.issued = {}  # uid -> UserKey

    def sizes(self) -> set:
        out = set()
        for s in self.member_sizes.values():
            out |= set(s)
        return out

    def create(self, bus):
        self.send(bus, CS, M.GROUP_CREATE, gid=self.gid)
        self.send(bus, KMC, M.GROUP_CREATE, gid=self.gid, wrap_key=self.wrap_key)

    def invite(self, bus, oid):
        if oid in self.members:
            raise DuplicateError(f"owner {oid} already belongs to group {self.gid}")
        self.send(bus, owner_addr(oid), M.GROUP_JOIN, gid=self.gid, userkey=self.userkey, valkey=self.valkey)

    def authorize(self, bus, uid):
        if uid in self.issued:
            raise DuplicateError(f"user {uid} is already authorized by group {self.gid}")
        ukey = gen_user_key(self.source)
        self.issued[uid] = ukey
        sizes = self.sizes()
        link = user_key_enc(self.userkey, ukey, sizes)
        self.send(bus, user_addr(uid), M.AUTH_GRANT, gid=self.gid, valkey=self.valkey, userkey=ukey,
                  wrap_key=self.wrap_key)
        self.send(bus, KMC, M.AUTH_GRANT, gid=self.gid, uid=uid, link=link)
        self.send(bus, CS, M.AUTH_GRANT, source=scope_tag("group", self.gid), uid=uid)

    def _sizes_changed(self, bus, oid, sizes):
        before = self.sizes()
        self.member_sizes[oid] = [tuple(s) for s in sizes]
        grown = self.sizes()
        if grown - before and self.issued:
            links = {uid: user_key_enc(self.userkey, u, grown) for uid, u in sorted(self.issued.items())}
            self.send(bus, KMC, M.KEY_UPDATE, gid=self.gid, links=links)

    def on_GroupJoin(self, msg, bus):
        self.members.add(msg.payload["oid"])
        self._sizes_changed(bus, msg.payload["oid"], msg.payload["sizes"])

    def on_KeyUpdate(self, msg, bus):
        self._sizes_changed(bus, msg.payload["oid"], msg.payload["sizes"])

    def on_GroupLeave(self, msg, bus):
        self.members.discard(msg.payload["oid"])
        self.member_sizes.pop(msg.payload["oid"], None)

    def state(self):
        return {"gid": self.gid, "source": _source_state(self.source), "userkey": self.userkey,
                "valkey": self.valkey, "wrap_key": self.wrap_key, "members": self.members,
                "member_sizes": self.member_sizes, "issued": self.issued}

    @classmethod
    def from_state(cls, st, config):
        g = cls(st["gid"], _source_from(st["source"]), config, st["userkey"], st["valkey"], st["wrap_key"])
        g.members, g.issued = set(st["members"]), st["issued"]
        g.member_sizes = {k: [tuple(s) for s in v] for k, v in st["member_sizes"].items()}
        return g


# ---------------------------------------------------------------- user


class User(Entity):
    def __init__(self, uid, source: KeySource):
        self.uid = uid
        self.address = user_addr(uid)
        self.source = source
        self.owner_keys = {}  # oid -> (ValKey, UserKey)
        self.group_keys = {}  # gid -> (ValKey, UserKey, wrap key)
        self.results = {}  # qid -> list of (iid, source, distance, CoeffImage)
        self.next_q = 0

    def sources(self):
        return sorted([scope_tag("owner", o) for o in self.owner_keys] + [scope_tag("group", g) for g in self.group_keys])

    def on_AuthGrant(self, msg, bus):
        p = msg.payload
        if "gid" in p:
            self.group_keys[p["gid"]] = (p["valkey"], p["userkey"], p["wrap_key"])
        else:
            self.owner_keys[p["oid"]] = (p["valkey"], p["userkey"])

    def _valkey(self, source):
        kind, ident = source.split(":", 1)
        table = self.owner_keys if kind == "owner" else self.group_keys
        if ident not in table:
            raise AuthorizationError(f"user {self.uid} holds no keys for {source}")
        return table[ident][0]

    def query(self, bus, data, sources, m):
        sources = sorted(set(sources))
        if not sources:
            raise ContractError("query names no sources")
        qid = f"{self.uid}-q{self.next_q:05d}"
        self.next_q += 1
        trap = trap_gen(decode_jpeg(data), [(s, self._valkey(s)) for s in sources], self.source, qid)
        bus.query = qid
        self.send(bus, CS, M.QUERY, qid=qid, uid=self.uid, m=int(m), trapdoors=dict(trap))
        return qid

    def on_Result(self, msg, bus):
        p = msg.payload
        out = []
        for (iid, source, dist), enc, key in zip(p["hits"], p["images"], p["keys"]):
            kind, ident = source.split(":", 1)
            if kind == "owner":
                valkey, ukey = self.owner_keys[ident]
                poskey = user_recover_pos_key(key, ukey)
            else:
                valkey, ukey, wk = self.group_keys[ident]
                poskey = user_recover_pos_key(unwrap(key, wk, iid), ukey)
            out.append((iid, source, dist, img_dec(enc, poskey, valkey)))
        self.results[p["qid"]] = out

    def state(self):
        return {"uid": self.uid, "source": _source_state(self.source), "owner_keys": self.owner_keys,
                "group_keys": self.group_keys, "next_q": self.next_q}

    @classmethod
    def from_state(cls, st):
        u = cls(st["uid"], _source_from(st["source"]))
        u.owner_keys, u.group_keys, u.next_q = st["owner_keys"], st["group_keys"], st["next_q"]
        return u
