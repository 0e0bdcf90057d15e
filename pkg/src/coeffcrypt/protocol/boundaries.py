"""Knowledge-boundary checks on simulator state.

Two independent routes: a walk over live Python objects (and the payload
types each party has received), and a byte scan of the saved workspace for
secret material that must not appear there.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import container
from ..cipher import ValKey
from ..keyproto import IncValKey, UserKey
from .bus import CS, KMC, role_of


def _walk(obj, seen=None):
    if seen is None:
        seen = set()
    if id(obj) in seen or isinstance(obj, (str, bytes, int, float, bool, np.ndarray)) or obj is None:
        return
    seen.add(id(obj))
    yield obj
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _walk(k, seen)
            yield from _walk(v, seen)
    elif isinstance(obj, (list, tuple, set, frozenset)):
        for x in obj:
            yield from _walk(x, seen)
    elif hasattr(obj, "__dict__"):
        for v in vars(obj).values():
            yield from _walk(v, seen)


def _holds(obj, types) -> bool:
    return any(isinstance(x, types) for x in _walk(obj))


def _issued(system) -> dict:
    """uid -> tagmasks of every user key issued to that user."""
    out = {}
    for party in list(system.owners.values()) + list(system.orgs.values()):
        for uid, key in party.issued.items():
            out.setdefault(uid, set()).add(key.tagmask)
    return out


def type_violations(system) -> list:
    out = []
    kmc_state = {k: v for k, v in vars(system.kmc).items()}
    if _holds(kmc_state, (ValKey, IncValKey)):
        out.append("KMC state holds value-key material")
    if {"ValKey", "IncValKey"} & system.bus.received_types.get(KMC, set()):
        out.append("KMC received value-key material")
    cs_state = {k: v for k, v in vars(system.cs).items() if k != "config"}
    if _holds(cs_state, UserKey):
        out.append("CS state holds an unwrapped user key")
    if "UserKey" in system.bus.received_types.get(CS, set()):
        out.append("CS received an unwrapped user key")
    issued = _issued(system)
    for uid, user in system.users.items():
        mine = issued.get(uid, set())
        for x in _walk(vars(user)):
            if isinstance(x, UserKey) and x.tagmask not in mine:
                out.append(f"user {uid} holds a user key issued to someone else")
                break
    for rec in system.bus.log:
        if {role_of(rec["sender"]), role_of(rec["receiver"])} == {KMC, "user"}:
            out.append(f"message {rec['seq']} passes between the KMC and a user")
    return out


def _needles(blobs) -> list:
    out = []
    for b in blobs:
        out.append(b)
        out.append(b.hex().encode())
    return out


def _scan(root: Path, needles) -> list:
    hits = []
    if not root.exists():
        return hits
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        data = f.read_bytes()
        for n in needles:
            if n in data:
                hits.append(str(f))
                break
    return hits


def _value_tables(key) -> bytes:
    # the body without the container header, so the search matches any encoding context
    return container.dump_valkey(key)[6:] if isinstance(key, ValKey) else container.dump_incvalkey(key)[6:]


def _user_secrets(key: UserKey) -> list:
    out = [key.tagmask]
    out.extend(s.secret for s in (key.seeds or {}).values())
    return out


def byte_violations(system, root) -> list:
    """Scan a saved workspace for secrets outside their holders' directories."""
    root = Path(root)
    out = []
    vkeys = [o.valkey for o in system.owners.values()] + [g.valkey for g in system.orgs.values()]
    vkeys += list(system.cs.inc_val.values())
    for f in _scan(root / "kmc", _needles(_value_tables(k) for k in vkeys)):
        out.append(f"value-key bytes found in {f}")
    ukeys = [o.userkey for o in system.owners.values()] + [g.userkey for g in system.orgs.values()]
    ukeys += [k for p in list(system.owners.values()) + list(system.orgs.values()) for k in p.issued.values()]
    for f in _scan(root / "cs", _needles(s for k in ukeys for s in _user_secrets(k))):
        out.append(f"user-key bytes found in {f}")
    issued = {}
    for p in list(system.owners.values()) + list(system.orgs.values()):
        for uid, k in p.issued.items():
            issued.setdefault(uid, []).append(k)
    for uid in system.users:
        others = [k for other, ks in issued.items() if other != uid for k in ks]
        for f in _scan(root / "users" / uid, _needles(s for k in others for s in _user_secrets(k))):
            out.append(f"another user's key bytes found in {f}")
    return out


def check(system, root=None) -> list:
    out = type_violations(system)
    if root is not None:
        out += byte_violations(system, root)
    return out
