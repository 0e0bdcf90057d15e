"""In-process FIFO message bus with a digest-only log and per-query round counts."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

from ..errors import ContractError
from .messages import KEY_REQUEST, KEY_RESPONSE, QUERY, RESULT, Message

CS, KMC = "cs", "kmc"


def role_of(address: str) -> str:
    return address.split(":", 1)[0]


@dataclass(frozen=True)
class RoundCounter:
    cs_kmc: int
    cs_user: int
    kmc_user: int
    complete: bool = True

    def as_tuple(self):
        return (self.cs_kmc, self.cs_user, self.kmc_user)


class Bus:
    """Delivers messages in send order.  Handlers may send further messages."""

    def __init__(self):
        self.entities = {}
        self.queue = deque()
        self.log = []  # one record per sent message
        self.received_types = {}  # address -> set of payload type names
        self.flow = ""
        self.query = None
        self.seq = 0

    def register(self, address: str, entity):
        self.entities[address] = entity

    def send(self, msg: Message):
        if msg.receiver not in self.entities:
            raise ContractError(f"no entity at {msg.receiver}")
        if msg.query is None:
            msg.query = self.query
        self.log.append({
            "seq": self.seq, "flow": self.flow, "query": msg.query, "sender": msg.sender,
            "receiver": msg.receiver, "kind": msg.kind, "digest": msg.digest(),
        })
        self.seq += 1
        self.queue.append(msg)

    def run(self):
        try:
            while self.queue:
                msg = self.queue.popleft()
                seen = self.received_types.setdefault(msg.receiver, set())
                _collect_types(msg.payload, seen)
                self.entities[msg.receiver].handle(msg, self)
        except Exception:
            self.queue.clear()
            raise

    def deliver(self, *msgs):
        for m in msgs:
            self.send(m)
        self.run()

    def rounds(self, query: str) -> RoundCounter:
        """Request/response exchanges per entity pair for one query."""
        recs = [r for r in self.log if r["query"] == query]

        def pair(r):
            return {role_of(r["sender"]), role_of(r["receiver"])}

        cs_user = [r for r in recs if pair(r) == {CS, "user"}]
        cs_kmc = [r for r in recs if pair(r) == {CS, KMC}]
        kmc_user = [r for r in recs if pair(r) == {KMC, "user"}]
        n_query = sum(r["kind"] == QUERY for r in cs_user)
        n_result = sum(r["kind"] == RESULT for r in cs_user)
        n_req = sum(r["kind"] == KEY_REQUEST for r in cs_kmc)
        n_resp = sum(r["kind"] == KEY_RESPONSE for r in cs_kmc)
        complete = n_query == n_result and n_req == n_resp and len(cs_user) == 2 * n_query \
            and len(cs_kmc) == 2 * n_req
        return RoundCounter(n_req, n_query, len(kmc_user), complete)

    def jsonl(self, start: int = 0) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.log[start:])


def _collect_types(obj, seen):
    seen.add(type(obj).__name__)
    if isinstance(obj, dict):
        for k, v in obj.items():
            _collect_types(k, seen)
            _collect_types(v, seen)
    elif isinstance(obj, (list, tuple, set, frozenset)):
        for x in obj:
            _collect_types(x, seen)
