"""Histories: event sets ordered by happens-before, and the prefix relation.

Happens-before is stored as a transitive-closure bitset per event: bit ``j``
of ``below[i]`` is set iff event ``j`` happens before event ``i``.
"""
from __future__ import annotations

import json
from typing import Iterable, Sequence

from .errors import MalformedTrace, NotDelivered
from .model import INTERNAL, RECEIVE, SEND, Event, ExecutionTrace

DELIVERY_RULES = ("network", "deliver")


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class History:
    """Immutable event set plus its happens-before order.

    ``events`` must be listed in an order consistent with causality (the
    order in which a trace emitted them).
    """

    def __init__(self, events: Sequence[Event], complete: bool = False):
        self.events = tuple(events)
        self.complete = complete
        self.index = {}
        for i, e in enumerate(self.events):
            if e.key in self.index:
                raise MalformedTrace(f"duplicate event {e!r}")
            self.index[e.key] = i
        self.per_replica: dict[int, list[Event]] = {}
        self.send_receive_pairs: dict[int, list] = {}
        below = []
        last: dict[int, int] = {}
        sends: dict[int, int] = {}
        for i, e in enumerate(self.events):
            mask = 0
            prev = last.get(e.replica)
            if prev is not None:
                if self.events[prev].seq >= e.seq:
                    raise MalformedTrace(f"sequence numbers not increasing at replica {e.replica}")
                mask |= below[prev] | (1 << prev)
            if e.kind == SEND:
                if e.uid in sends:
                    raise MalformedTrace(f"message {e.uid} sent twice")
                sends[e.uid] = i
                self.send_receive_pairs.setdefault(e.uid, [None, None])[0] = e
            elif e.kind == RECEIVE:
                pair = self.send_receive_pairs.setdefault(e.uid, [None, None])
                if pair[1] is not None:
                    raise MalformedTrace(f"message {e.uid} received twice")
                pair[1] = e
                s = sends.get(e.uid)
                if s is not None:
                    mask |= below[s] | (1 << s)
            below.append(mask)
            last[e.replica] = i
            self.per_replica.setdefault(e.replica, []).append(e)
        for uid, (s, r) in self.send_receive_pairs.items():
            if s is not None and r is not None and self.index[s.key] > self.index[r.key]:
                raise MalformedTrace(f"message {uid} received before it was sent")
        self.below = below
        self._check_order()

    @classmethod
    def from_events(cls, events: Iterable[Event], complete: bool = False) -> "History":
        return cls(list(events), complete)

    def _check_order(self) -> None:
        for i, mask in enumerate(self.below):
            if mask >> i:
                raise MalformedTrace("happens-before is not a strict partial order")

    def __len__(self) -> int:
        return len(self.events)

    def __contains__(self, e) -> bool:
        key = e.key if isinstance(e, Event) else e
        return key in self.index

    @property
    def keys(self) -> frozenset:
        return frozenset(self.index)

    def hb(self, e1, e2) -> bool:
        """True iff ``e1`` happens strictly before ``e2``."""
        i = self.index[e1.key if isinstance(e1, Event) else e1]
        j = self.index[e2.key if isinstance(e2, Event) else e2]
        return bool(self.below[j] >> i & 1)

    def predecessors(self, e) -> list[Event]:
        j = self.index[e.key if isinstance(e, Event) else e]
        return [self.events[i] for i in _bits(self.below[j])]

    def receive_of(self, uid) -> Event | None:
        pair = self.send_receive_pairs.get(uid)
        return pair[1] if pair else None

    def send_of(self, uid) -> Event | None:
        pair = self.send_receive_pairs.get(uid)
        return pair[0] if pair else None

    def message(self, uid):
        s, r = self.send_receive_pairs[uid]
        return (s or r).message

    def dumps(self) -> str:
        """Event records followed by the immediate happens-before edges."""
        lines = [json.dumps({"history": True, "events": len(self.events), "complete": self.complete})]
        for e in self.events:
            rec = {"replica": e.replica, "seq": e.seq, "kind": e.kind}
            if e.message is not None:
                m = e.message
                rec.update(uid=m.uid, type=m.mtype, **{"from": m.sender}, to=m.to)
            else:
                rec.update(type=e.type)
            lines.append(json.dumps(rec, sort_keys=True))
        lines.append(json.dumps({"edges": True}))
        for a, b in self.edges():
            lines.append(json.dumps([list(self.events[a].key), list(self.events[b].key)]))
        return "\n".join(lines) + "\n"

    def edges(self) -> list[tuple[int, int]]:
        out = []
        last: dict[int, int] = {}
        for i, e in enumerate(self.events):
            if e.replica in last:
                out.append((last[e.replica], i))
            last[e.replica] = i
            if e.kind == RECEIVE:
                s = self.send_of(e.uid)
                if s is not None:
                    out.append((self.index[s.key], i))
        return out

    def __repr__(self) -> str:
        return f"History({len(self.events)} events, complete={self.complete})"


def history_of(trace: ExecutionTrace) -> History:
    """History of a trace; receives must have a delivery step before them."""
    delivered = set()
    events = []
    for step in trace.steps:
        if step.rule in DELIVERY_RULES and step.message is not None:
            delivered.add(step.message.uid)
        if step.event is None:
            continue
        e = step.event
        if e.kind == RECEIVE and e.uid not in delivered:
            raise MalformedTrace(f"receive of {e.message!r} without pool/inbox provenance")
        events.append(e)
    return History(events, trace.complete)


def happens_before(h: History, e1, e2) -> bool:
    return h.hb(e1, e2)


def is_prefix(h1: History, h2: History) -> bool:
    """Downward-closed, order-preserving containment of ``h1`` in ``h2``."""
    try:
        to2 = [h2.index[e.key] for e in h1.events]
    except KeyError:
        return False
    for i, e in enumerate(h1.events):
        mapped = 0
        for k in _bits(h1.below[i]):
            mapped |= 1 << to2[k]
        if mapped != h2.below[to2[i]]:
            return False
    return True


def prefix_violation(h1: History, h2: History) -> str | None:
    """Explain which prefix clause fails, or ``None`` when ``h1`` is a prefix of ``h2``."""
    for e in h1.events:
        if e.key not in h2.index:
            return f"containment: {e!r} is not in the target history"
    members = {h2.index[e.key] for e in h1.events}
    for i, e in enumerate(h1.events):
        j = h2.index[e.key]
        for k in _bits(h2.below[j]):
            if k not in members:
                return f"downward closure: {h2.events[k]!r} precedes {e!r} but is missing"
        for k in _bits(h2.below[j]):
            if not h1.hb(h2.events[k], e):
                return f"happens-before: {h2.events[k]!r} < {e!r} not preserved"
        for k in _bits(h1.below[i]):
            if not h2.hb(h1.events[k], e):
                return f"happens-before: {h1.events[k]!r} < {e!r} not in target"
    return None


def delivered_messages(h: History) -> set:
    return {uid for uid, (_, r) in h.send_receive_pairs.items() if r is not None}


def causal_past_of_receive(h: History, uid) -> set[Event]:
    r = h.receive_of(uid)
    if r is None:
        raise NotDelivered(uid)
    return set(h.predecessors(r))


def adversarial_messages(h: History) -> set:
    return {uid for uid, (s, r) in h.send_receive_pairs.items() if r is not None and s is None}


def downward_closed(h: History, keys: Iterable) -> bool:
    idx = [h.index[k] for k in keys]
    members = 0
    for i in idx:
        members |= 1 << i
    return all(h.below[i] & ~members == 0 for i in idx)


__all__ = [
    "History", "history_of", "happens_before", "is_prefix", "prefix_violation",
    "delivered_messages", "causal_past_of_receive", "adversarial_messages",
    "downward_closed", "INTERNAL",
]
