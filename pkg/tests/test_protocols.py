from __future__ import annotations

import pytest

from consensustest.errors import ConfigError
from consensustest.model import RECEIVE, SEND, TIMEOUT, Message, initial_configuration, run_synchronous
from consensustest.protocols import pbft_automaton, raft_automaton
from consensustest.protocols.pbft import PbftReplicaState
from consensustest.protocols.raft import RaftReplicaState


def test_pbft_config_errors():
    with pytest.raises(ConfigError):
        pbft_automaton(3, 1)
    with pytest.raises(ConfigError):
        pbft_automaton(4, 1, requests=())
    assert len(pbft_automaton(7, 2)) == 7


def test_raft_config_errors():
    for n in (1, 2, 4):
        with pytest.raises(ConfigError):
            raft_automaton(n)
    with pytest.raises(ConfigError):
        raft_automaton(3, election_order=(5,))
    with pytest.raises(ConfigError):
        raft_automaton(3, election_order=())


def _decisions(trace):
    return [(e.replica, e.value.as_dict()) for e in trace.events
            if e.kind == "internal" and e.value.name == "AddToLog"]


def test_pbft_fault_free_run_decides_everywhere():
    trace = run_synchronous(pbft_automaton(4, 1), 5000)
    assert trace.complete
    decided = _decisions(trace)
    assert sorted(r for r, _ in decided) == [0, 1, 2, 3]
    assert all(v == {"request": "alpha", "view": 0, "index": 0} for _, v in decided)
    types = {e.message.mtype for e in trace.events if e.kind == SEND}
    assert types == {"PrePrepare", "Prepare", "Commit"}
    assert sum(e.kind == SEND for e in trace.events) == 3 + 4 * 3 + 4 * 3


def test_pbft_two_requests():
    trace = run_synchronous(pbft_automaton(4, 1, requests=("alpha", "beta")), 5000)
    assert trace.complete
    got = {(v["index"], v["request"]) for _, v in _decisions(trace)}
    assert got == {(0, "alpha"), (1, "beta")}


def test_pbft_view_change_without_prepares():
    """Leader's PrePrepares vanish: timers fire, view 1 starts with a NewView and decides."""
    automata = pbft_automaton(4, 1)
    a1 = automata[1]
    s = a1.initial_state()
    timeout = Message(0, 1, 1, TIMEOUT, b"{}", True)
    s2, _ = a1.step(s, timeout)
    assert s2.view == 1 and s2.in_view_change and s2.view_leader
    assert [m.mtype for m in s2.outbox] == ["ViewChange"] * 3
    # collect two other votes: replica 1 leads view 1 and re-proposes
    for sender in (2, 3):
        while s2.outbox:
            s2, _ = a1.step(s2, None)
        vc = Message(10 + sender, sender, 1, "ViewChange", b'{"view":1}')
        s2, _ = a1.step(s2, vc)
    kinds = [getattr(x, "mtype", None) for x in s2.outbox]
    assert kinds.count("NewView") == 3 and kinds.count("PrePrepare") == 3
    assert not s2.in_view_change and s2.view == 1


def test_pbft_gives_up_at_view_bound():
    a = pbft_automaton(4, 1, view_bound=1)[2]
    s, _ = a.step(a.initial_state(), Message(0, 2, 2, TIMEOUT, b"{}", True))
    assert s.gave_up and s.final and a.is_final(s)
    assert a.step(s, None) is None


def test_pbft_buffers_future_view_messages():
    a = pbft_automaton(4, 1)[2]
    s = a.initial_state()
    pp = Message(0, 1, 2, "PrePrepare", b'{"index":0,"request":"alpha","view":1}')
    s2, _ = a.step(s, pp)
    assert len(s2.buffered) == 1 and not s2.preprepared
    old = Message(1, 0, 2, "Prepare", b'{"index":0,"request":"alpha","view":0}')
    s3 = PbftReplicaState(view=1)
    assert a.step(s3, old)[0] == s3  # stale view: ignored


def test_pbft_outbox_blocks_receives():
    a = pbft_automaton(4, 1)[0]
    s = a.initial_state()
    assert s.outbox and a.step(s, Message(0, 1, 0, "Prepare", b'{"view":0}')) is None
    assert a.timeout_rank(s) is None


def test_raft_election_and_replication():
    trace = run_synchronous(raft_automaton(5), 5000)
    assert trace.complete
    leaders = [e for e in trace.events if e.kind == "internal" and e.value.name == "BecomeLeader"]
    assert [(e.replica, e.value["term"]) for e in leaders] == [(0, 1)]
    commits = [e for e in trace.events if e.kind == "internal" and e.value.name == "Commit"]
    assert len(commits) == 1 and commits[0].replica == 0


def test_raft_only_designated_candidate_is_armed():
    automata = raft_automaton(5, election_order=(2, 4))
    c = initial_configuration(automata)
    ranks = [a.timeout_rank(s) for a, s in zip(automata, c.states)]
    assert ranks == [None, None, 0, None, None]
    assert automata[0].candidate_for(2) == 4


def test_raft_votes_first_come_per_term():
    a = raft_automaton(5)[3]
    s = RaftReplicaState()
    rv0 = Message(0, 0, 3, "RequestVote", b'{"term":1}')
    rv1 = Message(1, 1, 3, "RequestVote", b'{"term":1}')
    s, _ = a.step(s, rv0)
    s, reply = a.step(s, None)
    assert reply.payload == (("granted", True), ("term", 1))
    s, _ = a.step(s, rv1)
    s, reply = a.step(s, None)
    assert dict(reply.payload)["granted"] is False


def test_raft_gives_up_past_term_bound():
    a = raft_automaton(3, term_bound=1)[0]
    s = RaftReplicaState(term=1)
    s2, _ = a.step(s, Message(0, 0, 0, TIMEOUT, b"{}", True))
    assert s2.gave_up and s2.final


def test_receives_never_see_uids():
    """Automaton steps depend on content only."""
    a = pbft_automaton(4, 1)[1]
    s = a.initial_state()
    m1 = Message(5, 0, 1, "PrePrepare", b'{"index":0,"request":"alpha","view":0}')
    m2 = Message(99, 0, 1, "PrePrepare", b'{"index":0,"request":"alpha","view":0}')
    assert a.step(s, m1) == a.step(s, m2)
