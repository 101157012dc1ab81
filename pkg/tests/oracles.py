"""Definition-level reference implementations used as test oracles.

Everything here is deliberately naive: explicit edge sets, Floyd-Warshall
closure, clause-by-clause prefix checks and subset enumeration for width.
"""
from __future__ import annotations

from itertools import combinations

from consensustest.model import INTERNAL, RECEIVE, SEND, Event, Message, internal


def brute_hb(events) -> set[tuple]:
    """Happens-before as a set of ``(key_a, key_b)`` pairs, a before b."""
    keys = [e.key for e in events]
    n = len(keys)
    reach = [[False] * n for _ in range(n)]
    for i, a in enumerate(events):
        for j, b in enumerate(events):
            if i == j:
                continue
            if a.replica == b.replica and a.seq < b.seq:
                reach[i][j] = True
            if a.kind == SEND and b.kind == RECEIVE and a.uid == b.uid:
                reach[i][j] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    return {(keys[i], keys[j]) for i in range(n) for j in range(n) if reach[i][j]}


def brute_prefix(events1, events2, hb1=None, hb2=None) -> bool:
    """Containment, downward closure and order agreement, one clause at a time.

    ``hb1``/``hb2`` may be passed in when already computed by :func:`brute_hb`.
    """
    e1 = {e.key for e in events1}
    e2 = {e.key for e in events2}
    if not e1 <= e2:
        return False
    hb1 = brute_hb(events1) if hb1 is None else hb1
    hb2 = brute_hb(events2) if hb2 is None else hb2
    for a in e2:
        for b in e1:
            if (a, b) in hb2 and a not in e1:
                return False
    for a in e1:
        for b in e1:
            if ((a, b) in hb1) != ((a, b) in hb2):
                return False
    return True


def dilworth_width(items, less) -> int:
    """Largest antichain, by trying subsets from the largest size down."""
    items = list(items)
    for size in range(len(items), 0, -1):
        for combo in combinations(items, size):
            if all(not less(a, b) and not less(b, a) for a, b in combinations(combo, 2)):
                return size
    return 0


ADVERSARIAL_UID = 100


def enumerate_traces(replicas: int = 2, max_events: int = 8, max_sends: int = 3, max_internal: int = 8,
                     adversarial: bool = True):
    """Every event sequence of a tiny message-passing model, up to ``max_events``.

    Each replica may take an internal step, send to any other replica (at
    most ``max_sends`` sends overall) or receive any in-flight message
    addressed to it, in any order. At most ``max_internal`` internal steps
    happen overall. One fictitious message for replica 0
    exists from the start when ``adversarial`` is set.
    """
    start = []
    if adversarial:
        start.append(Message(ADVERSARIAL_UID, 1, 0, "Forged", b"{}", True))

    def walk(events, seqs, flight, sent, ticks):
        yield list(events)
        if len(events) == max_events:
            return
        for r in range(replicas):
            seq = seqs[r]
            nseqs = seqs[:r] + (seq + 1,) + seqs[r + 1:]
            if ticks < max_internal:
                events.append(Event(r, INTERNAL, seq, value=internal("Tick")))
                yield from walk(events, nseqs, flight, sent, ticks + 1)
                events.pop()
            if sent < max_sends:
                for to in range(replicas):
                    if to == r:
                        continue
                    m = Message(sent, r, to, "Ping", b"{}")
                    events.append(Event(r, SEND, seq, message=m))
                    yield from walk(events, nseqs, flight + (m,), sent + 1, ticks)
                    events.pop()
            for i, m in enumerate(flight):
                if m.to != r:
                    continue
                events.append(Event(r, RECEIVE, seq, message=m))
                yield from walk(events, nseqs, flight[:i] + flight[i + 1:], sent, ticks)
                events.pop()

    yield from walk([], (0,) * replicas, tuple(start), 0, 0)


def distinct_histories(traces):
    """One representative event list per distinct event set."""
    seen = {}
    for t in traces:
        key = frozenset(e.key for e in t)
        seen.setdefault(key, t)
    return list(seen.values())


def two_chains(length: int = 5) -> dict:
    """Poset of two independent chains ``a1 < ... < aL`` and ``b1 < ... < bL``, as ``{uid: preds}``."""
    poset = {}
    for name in "ab":
        for i in range(1, length + 1):
            poset[f"{name}{i}"] = {f"{name}{i - 1}"} if i > 1 else set()
    return poset


def drive(scheduler, poset: dict, order=None) -> list:
    """Register every message of ``poset`` (transitive predecessors included),
    then deliver until nothing is enabled. Returns the delivery order."""
    order = list(order or poset)
    closure = {}
    for uid in order:
        past = set(poset[uid])
        for p in poset[uid]:
            past |= closure[p]
        closure[uid] = past
        scheduler.register_message(uid, past)
    delivered = []
    while True:
        enabled = [u for u in order if u not in delivered and poset[u] <= set(delivered)]
        uid = scheduler.next_delivery(enabled)
        if uid is None:
            return delivered
        scheduler.notify_delivered(uid)
        delivered.append(uid)
