"""Typed message envelope and canonical payload serialization."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .. import container
from ..cipher import EncryptedImage, PosKey, ValKey
from ..errors import FormatError
from ..keyproto import IncValKey, UserKey

OUTSOURCE = "Outsource"
AUTH_GRANT = "AuthGrant"
QUERY = "Query"
KEY_REQUEST = "KeyRequest"
KEY_RESPONSE = "KeyResponse"
RESULT = "Result"
GROUP_CREATE = "GroupCreate"
GROUP_JOIN = "GroupJoin"
GROUP_LEAVE = "GroupLeave"
IMAGE_ADD = "ImageAdd"
IMAGE_DELETE = "ImageDelete"
KEY_UPDATE = "KeyUpdate"

KINDS = (OUTSOURCE, AUTH_GRANT, QUERY, KEY_REQUEST, KEY_RESPONSE, RESULT, GROUP_CREATE, GROUP_JOIN,
         GROUP_LEAVE, IMAGE_ADD, IMAGE_DELETE, KEY_UPDATE)


@dataclass
class Message:
    sender: str
    receiver: str
    kind: str
    payload: dict = field(default_factory=dict)
    query: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")

    def digest(self) -> str:
        return hashlib.sha256(encode(self.payload)).hexdigest()


# ---------------------------------------------------------------- canonical bytes


def _blob(tag: bytes, body: bytes) -> bytes:
    return tag + struct.pack(">Q", len(body)) + body


def encode(obj) -> bytes:
    """Injective, deterministic byte encoding of payload values."""
    if obj is None:
        return b"N"
    if isinstance(obj, bool):
        return b"T" if obj else b"F"
    if isinstance(obj, (int, np.integer)):
        return _blob(b"I", str(int(obj)).encode())
    if isinstance(obj, (float, np.floating)):
        return _blob(b"R", struct.pack(">d", float(obj)))
    if isinstance(obj, str):
        return _blob(b"S", obj.encode("utf-8"))
    if isinstance(obj, (bytes, bytearray)):
        return _blob(b"B", bytes(obj))
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: encode(kv[0]))
        return _blob(b"D", b"".join(encode(k) + encode(v) for k, v in items))
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj, key=encode) if isinstance(obj, (set, frozenset)) else obj
        return _blob(b"L", b"".join(encode(x) for x in seq))
    if isinstance(obj, ValKey):
        return _blob(b"v", container.dump_valkey(obj))
    if isinstance(obj, IncValKey):
        return _blob(b"i", container.dump_incvalkey(obj))
    if isinstance(obj, PosKey):
        return _blob(b"p", container.dump_poskey(obj))
    if isinstance(obj, UserKey):
        return _blob(b"u", container.dump_userkey(obj))
    if isinstance(obj, EncryptedImage):
        return _blob(b"e", encode(obj.sidecar()) + encode(obj.jpeg))
    raise TypeError(f"cannot encode {type(obj).__name__}")


# ---------------------------------------------------------------- persistence

_KEY_TYPES = {
    "valkey": (ValKey, container.dump_valkey, container.load_valkey),
    "incvalkey": (IncValKey, container.dump_incvalkey, container.load_incvalkey),
    "poskey": (PosKey, container.dump_poskey, container.load_poskey),
    "userkey": (UserKey, container.dump_userkey, container.load_userkey),
}


def to_jsonable(obj):
    """Tagged JSON form of state values; keys and blobs become hex strings."""
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (bytes, bytearray)):
        return {"$bytes": bytes(obj).hex()}
    if isinstance(obj, dict):
        return {"$dict": [[to_jsonable(k), to_jsonable(v)] for k, v in sorted(obj.items(), key=lambda kv: encode(kv[0]))]}
    if isinstance(obj, tuple):
        return {"$tuple": [to_jsonable(x) for x in obj]}
    if isinstance(obj, (set, frozenset)):
        return {"$set": [to_jsonable(x) for x in sorted(obj, key=encode)]}
    if isinstance(obj, list):
        return [to_jsonable(x) for x in obj]
    for name, (cls, dump, _) in _KEY_TYPES.items():
        if isinstance(obj, cls):
            return {"$" + name: dump(obj).hex()}
    if isinstance(obj, EncryptedImage):
        return {"$encimg": obj.sidecar(), "jpeg": obj.jpeg.hex()}
    raise TypeError(f"cannot persist {type(obj).__name__}")


def from_jsonable(obj):
    if isinstance(obj, list):
        return [from_jsonable(x) for x in obj]
    if not isinstance(obj, dict):
        return obj
    if "$bytes" in obj:
        return bytes.fromhex(obj["$bytes"])
    if "$dict" in obj:
        return {_hashable(from_jsonable(k)): from_jsonable(v) for k, v in obj["$dict"]}
    if "$tuple" in obj:
        return tuple(from_jsonable(x) for x in obj["$tuple"])
    if "$set" in obj:
        return {_hashable(from_jsonable(x)) for x in obj["$set"]}
    if "$encimg" in obj:
        return EncryptedImage.from_sidecar(bytes.fromhex(obj["jpeg"]), obj["$encimg"])
    for name, (_, _, load) in _KEY_TYPES.items():
        if "$" + name in obj:
            return load(bytes.fromhex(obj["$" + name]))
    raise FormatError(f"unrecognised state entry with keys {sorted(obj)}")


def _hashable(x):
    return tuple(_hashable(v) for v in x) if isinstance(x, list) else x


def dumps_state(state: dict) -> bytes:
    return (json.dumps(to_jsonable(state), sort_keys=True, indent=1) + "\n").encode("utf-8")


def loads_state(data: bytes) -> dict:
    return from_jsonable(json.loads(data.decode("utf-8")))
