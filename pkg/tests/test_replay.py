from __future__ import annotations

import json

import pytest

from consensustest.driver import run_iteration
from consensustest.errors import IncompleteHistory
from consensustest.history import History, delivered_messages, history_of, is_prefix
from consensustest.model import RECEIVE, ExecutionTrace
from consensustest.protocols import pbft_automaton, raft_automaton
from consensustest.replay import (
    TheoremVerdict, check_theorem, pick_gate_to_mutate, recorded_history, run_trial, synthesize,
)
from consensustest.testcases import REGISTRY


def recorded(protocol="pbft", test="no-filters", seed=0):
    n, f = (4, 1) if protocol == "pbft" else (5, 2)
    automata = pbft_automaton(n, f) if protocol == "pbft" else raft_automaton(n)
    out = run_iteration(REGISTRY[protocol][test](n, f), automata, seed)
    assert out.complete
    return automata, out.trace


def test_synthesize_rejects_incomplete_history():
    _, trace = recorded()
    with pytest.raises(IncompleteHistory):
        synthesize(history_of(trace.truncated(30)))
    reloaded = ExecutionTrace.loads("\n".join(trace.dumps().splitlines()[:-1]))
    with pytest.raises(IncompleteHistory):
        synthesize(history_of(reloaded))


def test_gates_are_receive_pasts():
    _, trace = recorded()
    h = history_of(trace)
    rm = synthesize(h)
    assert set(rm.causal_requirements) == delivered_messages(h)
    for uid, gate in rm.causal_requirements.items():
        recv = h.receive_of(uid)
        assert gate == {e.key for e in h.predecessors(recv)}


def test_monitor_blocks_every_send_and_releases_by_gate():
    _, trace = recorded()
    h = history_of(trace)
    rm = synthesize(h)
    assert rm.initial_release() == []  # no fictitious messages in a timer-free run
    released_total = []
    for e in h.events:
        released, blocked = rm.step(e)
        assert blocked == (e.kind == "send")
        released_total += released
        for uid in released:
            assert rm.causal_requirements[uid] <= rm.observed
    assert sorted(released_total) == sorted(delivered_messages(h))
    sent = {e.uid for e in h.events if e.kind == "send"}
    assert rm.pool == sent - delivered_messages(h)


def test_replay_of_fault_free_pbft_run():
    automata, trace = recorded()
    rm = synthesize(recorded_history(trace))
    verdict = check_theorem(automata, rm, trials=15, seed=3)
    assert verdict.passed, verdict.counterexample and verdict.counterexample.reason
    assert verdict.summary() == "prefix: 15/15 PASS"


@pytest.mark.parametrize("protocol,test", [("pbft", "drop-prepare-three"), ("pbft", "byzantine-prepare-nil"),
                                           ("raft", "drop-f-votes"), ("raft", "revote")])
def test_replay_with_faults_and_forgeries(protocol, test):
    automata, trace = recorded(protocol, test)
    h = history_of(trace)
    rm = synthesize(h)
    for t in range(5):
        r = run_trial(automata, rm, 0, t)
        assert r.passed, r.reason
        assert r.complete


def test_complete_trial_reproduces_history_both_ways():
    automata, trace = recorded()
    target = history_of(trace)
    rm = synthesize(target)
    r = run_trial(automata, rm, 9, 0)
    assert r.passed and r.complete
    live = history_of(r.trace)
    translated = {(e.replica, e.seq, e.kind) for e in live.events}
    assert translated == {(e.replica, e.seq, e.kind) for e in target.events}
    # translate live uids through sends to compare orders
    to_target = {}
    for e in live.events:
        t = next(x for x in target.per_replica[e.replica] if x.seq == e.seq)
        to_target[e.key] = t
    mapped = History([to_target[e.key] for e in live.events], True)
    assert is_prefix(mapped, target) and is_prefix(target, mapped)


def test_per_replica_delivery_sequences_are_prefixes():
    automata, trace = recorded()
    target = history_of(trace)
    rm = synthesize(target)
    r = run_trial(automata, rm, 1, 4, budget=150)  # stop early on purpose
    assert r.passed
    live = [e for e in r.trace.events if e.kind == RECEIVE]
    for replica in range(4):
        got = [e.message.content for e in live if e.replica == replica]
        want = [e.message.content for e in target.per_replica[replica] if e.kind == RECEIVE]
        assert got == want[:len(got)]


def test_mutated_gate_is_caught():
    automata, trace = recorded()
    h = history_of(trace)
    uid = pick_gate_to_mutate(h)
    assert uid is not None
    rm = synthesize(h).mutate(uid)
    assert rm.causal_requirements[uid] == frozenset() and uid in rm.mutated
    verdict = check_theorem(automata, rm, trials=30, seed=0)
    assert not verdict.passed
    assert verdict.counterexample.reason


def test_counterexample_export(tmp_path):
    automata, trace = recorded()
    h = history_of(trace)
    verdict = check_theorem(automata, synthesize(h).mutate(pick_gate_to_mutate(h)), trials=30)
    path = verdict.export_counterexample(tmp_path / "cex.jsonl")
    lines = open(path).read().splitlines()
    head = json.loads(lines[0])
    assert head["violation"] == verdict.counterexample.reason
    assert ExecutionTrace.loads("\n".join(lines[1:])).steps


def test_vacuous_verdict():
    v = TheoremVerdict(0, [])
    assert v.passed and v.vacuous and "vacuous" in v.summary()
    assert v.export_counterexample("unused") is None
