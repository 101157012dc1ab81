from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from consensustest.errors import MalformedTrace, NotDelivered
from consensustest.history import (
    History, adversarial_messages, causal_past_of_receive, delivered_messages, downward_closed,
    happens_before, history_of, is_prefix, prefix_violation,
)
from consensustest.model import INTERNAL, RECEIVE, SEND, Event, ExecutionTrace, Message, internal, run_synchronous
from consensustest.protocols import pbft_automaton, raft_automaton

from oracles import brute_hb, brute_prefix, enumerate_traces

PBFT_TRACE = run_synchronous(pbft_automaton(4, 1), 5000)
RAFT_TRACE = run_synchronous(raft_automaton(5), 5000)


def _msg(uid, sender=0, to=1):
    return Message(uid, sender, to, "Ping")


def _events():
    m = _msg(0)
    a = Event(0, INTERNAL, 0, value=internal("Tick"))
    s = Event(0, SEND, 1, message=m)
    r = Event(1, RECEIVE, 0, message=m)
    b = Event(1, INTERNAL, 1, value=internal("Tock"))
    c = Event(0, INTERNAL, 2, value=internal("Tick"))
    return a, s, r, b, c


def test_happens_before_basic():
    a, s, r, b, c = _events()
    h = History([a, s, r, b, c])
    assert h.hb(a, s) and h.hb(s, r) and h.hb(a, b)
    assert not h.hb(c, b) and not h.hb(b, c)
    assert happens_before(h, a, r)
    assert {e.key for e in h.predecessors(b)} == {a.key, s.key, r.key}


def test_hb_is_irreflexive_and_antisymmetric_on_protocol_runs():
    for trace in (PBFT_TRACE, RAFT_TRACE):
        h = history_of(trace)
        for e in h.events[:60]:
            assert not h.hb(e, e)
            for f in h.events[:60]:
                assert not (h.hb(e, f) and h.hb(f, e))


def test_hb_matches_brute_force_on_protocol_runs():
    h = history_of(RAFT_TRACE)
    expected = brute_hb(h.events)
    got = {(x.key, y.key) for x in h.events for y in h.events if h.hb(x, y)}
    assert got == expected


def test_malformed_histories():
    a, s, r, b, c = _events()
    with pytest.raises(MalformedTrace):
        History([a, a])
    with pytest.raises(MalformedTrace):
        History([s, a])  # seq going backwards at replica 0
    with pytest.raises(MalformedTrace):
        History([r, a, s])  # receive listed before its send
    twice = Event(1, RECEIVE, 1, message=s.message)
    with pytest.raises(MalformedTrace):
        History([a, s, r, twice])


def test_history_of_requires_delivery_provenance():
    a, s, r, b, c = _events()
    t = ExecutionTrace(None, [], True, 2)
    t.add(SEND, 0, s)
    t.add(RECEIVE, 1, r)
    with pytest.raises(MalformedTrace):
        history_of(t)
    t2 = ExecutionTrace(None, [], True, 2)
    t2.add(SEND, 0, s)
    t2.add("network", 1, message=s.message)
    t2.add(RECEIVE, 1, r)
    assert len(history_of(t2)) == 2 and history_of(t2).complete


def test_delivered_and_adversarial_messages():
    a, s, r, b, c = _events()
    forged = Message(9, 1, 0, "Forged", b"{}", True)
    got = Event(0, RECEIVE, 3, message=forged)
    h = History([a, s, r, b, c, got])
    assert delivered_messages(h) == {0, 9}
    assert adversarial_messages(h) == {9}
    assert causal_past_of_receive(h, 0) == {a, s}
    with pytest.raises(NotDelivered):
        causal_past_of_receive(History([a, s]), 0)


def test_prefix_relation_examples():
    a, s, r, b, c = _events()
    full = History([a, s, r, b, c])
    assert is_prefix(History([a, s]), full)
    assert is_prefix(History([]), full)
    assert is_prefix(full, full)
    assert not is_prefix(History([a, s, r, b, c, Event(1, INTERNAL, 2, value=internal("X"))]), full)
    # r without a and s is not downward closed
    assert not is_prefix(History([r]), full)
    assert "downward closure" in prefix_violation(History([r]), full)
    assert "containment" in prefix_violation(History([Event(5, INTERNAL, 0)]), full)
    assert prefix_violation(History([a, s]), full) is None


def test_downward_closed():
    a, s, r, b, c = _events()
    h = History([a, s, r, b, c])
    assert downward_closed(h, [a.key, s.key, r.key])
    assert not downward_closed(h, [r.key])


def test_dumps_lists_events_and_immediate_edges():
    a, s, r, b, c = _events()
    h = History([a, s, r, b, c])
    lines = h.dumps().splitlines()
    assert len(lines) == 1 + 5 + 1 + len(h.edges())
    assert (1, 2) in h.edges() and (0, 1) in h.edges()


SMALL = list(enumerate_traces(2, 6, 2, 1))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(SMALL), st.data())
def test_truncation_soundness(events, data):
    """Any causally closed cut of a trace is a prefix of the whole."""
    k = data.draw(st.integers(0, len(events)))
    assert is_prefix(History(events[:k]), History(events))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(SMALL), st.data())
def test_prefix_transitivity(events, data):
    j = data.draw(st.integers(0, len(events)))
    i = data.draw(st.integers(0, j))
    h1, h2, h3 = History(events[:i]), History(events[:j]), History(events)
    assert is_prefix(h1, h2) and is_prefix(h2, h3)
    assert is_prefix(h1, h3)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(SMALL), st.data())
def test_prefix_agrees_with_oracle_on_arbitrary_subsets(events, data):
    mask = data.draw(st.lists(st.booleans(), min_size=len(events), max_size=len(events)))
    sub = [e for e, keep in zip(events, mask) if keep]
    assert is_prefix(History(sub), History(events)) == brute_prefix(sub, events)


def test_truncated_protocol_trace_is_prefix():
    h = history_of(PBFT_TRACE)
    for k in range(0, len(PBFT_TRACE.steps), 17):
        cut = history_of(PBFT_TRACE.truncated(k))
        assert is_prefix(cut, h)
        assert not cut.complete
