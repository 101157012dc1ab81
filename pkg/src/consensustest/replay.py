"""Replay monitor synthesized from a recorded run, and its empirical check.

The monitor keeps ``(pool, E)``: target messages sent but not yet released,
and the target events observed so far. On each event it adds the event to
``E``, adds a freshly sent message to the pool, and releases every delivered
target message (pooled or adversarial) whose receive's causal past is
already inside ``E``. Every send is blocked, so the monitor alone moves
messages.

Live runs mint their own uids. Events are matched to the target by
``(replica, seq, kind)`` plus content, and uids are mapped through the send
correspondence built on the way.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import IncompleteHistory
from .history import (
    History, adversarial_messages, delivered_messages, downward_closed, is_prefix, prefix_violation,
)
from .model import (
    INTERNAL, RECEIVE, SEND, Event, ExecutionTrace, Message, initial_configuration, internal_enabled,
    receive_enabled, step_adversary, step_internal, step_network, step_receive,
)


class ReplayMonitor:
    def __init__(self, target: History, gates: dict, mutated: frozenset = frozenset()):
        self.target = target
        self.deliveries = frozenset(delivered_messages(target))
        self.adversarial = frozenset(adversarial_messages(target))
        self.causal_requirements = gates
        self.mutated = mutated
        self.by_position = {(e.replica, e.seq): e for e in target.events}
        self.reset()

    def reset(self) -> None:
        self.pool: set = set()
        self.observed: set = set()
        self.released: set = set()

    def mutate(self, uid) -> "ReplayMonitor":
        """Copy of this monitor whose gate for ``uid`` is always open."""
        gates = dict(self.causal_requirements)
        gates[uid] = frozenset()
        return ReplayMonitor(self.target, gates, self.mutated | {uid})

    def _release(self, candidates) -> list:
        out = sorted(m for m in candidates
                     if m in self.deliveries and m not in self.released
                     and self.causal_requirements[m] <= self.observed)
        self.released.update(out)
        self.pool.difference_update(out)
        return out

    def initial_release(self) -> list:
        """Adversarial messages whose causal past is empty go out before any event."""
        return self._release(self.adversarial)

    def step(self, target_event: Event) -> tuple[list, bool]:
        """Monitor transition on an event already mapped to the target.

        Returns the target uids released and the blocked flag for the event.
        """
        self.observed.add(target_event.key)
        if target_event.kind == SEND:
            self.pool.add(target_event.uid)
        released = self._release(self.pool | (self.adversarial - self.released))
        return released, target_event.kind == SEND


def synthesize(h: History) -> ReplayMonitor:
    if not h.complete:
        raise IncompleteHistory("replay needs the history of a complete run")
    gates = {}
    for uid in delivered_messages(h):
        recv = h.receive_of(uid)
        gates[uid] = frozenset(e.key for e in h.predecessors(recv))
    return ReplayMonitor(h, gates)


def pick_gate_to_mutate(h: History):
    """Delivered message most exposed to overtaking if released at its send.

    Scores each sent-and-delivered message by how many earlier receives at
    its target consume messages whose send is not causally after its own.
    """
    best, best_score = None, 0
    for uid in sorted(delivered_messages(h) - adversarial_messages(h)):
        send, recv = h.send_of(uid), h.receive_of(uid)
        score = 0
        for e in h.per_replica[recv.replica]:
            if e.seq >= recv.seq:
                break
            if e.kind != RECEIVE:
                continue
            other = h.send_of(e.uid)
            if other is None or not h.hb(send, other):
                score += 1
        if score > best_score:
            best, best_score = uid, score
    return best


@dataclass
class TrialResult:
    trial: int
    passed: bool
    events: int
    complete: bool
    reason: str | None = None
    trace: ExecutionTrace | None = field(default=None, repr=False)


@dataclass
class TheoremVerdict:
    trials: int
    results: list

    @property
    def passes(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def passed(self) -> bool:
        return self.passes == self.trials

    @property
    def vacuous(self) -> bool:
        return self.trials == 0

    @property
    def counterexample(self) -> TrialResult | None:
        return next((r for r in self.results if not r.passed), None)

    def summary(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.vacuous:
            tag += " (vacuous: no trials)"
        return f"prefix: {self.passes}/{self.trials} {tag}"

    def export_counterexample(self, path) -> str | None:
        bad = self.counterexample
        if bad is None:
            return None
        with open(path, "w") as fh:
            fh.write(json.dumps({"trial": bad.trial, "violation": bad.reason}) + "\n")
            fh.write(bad.trace.dumps())
        return str(path)


class _Divergence(Exception):
    pass


class _Trial:
    def __init__(self, automata, rm: ReplayMonitor, rng, budget: int):
        self.automata = automata
        self.rm = rm
        self.rng = rng
        self.budget = budget
        self.config = initial_configuration(automata)
        self.trace = ExecutionTrace(self.config, [], False, len(automata))
        self.queue: deque = deque()
        self.live_to_target: dict[int, int] = {}
        self.target_to_live: dict[int, int] = {}
        self.translated: list[Event] = []
        self._index: dict = {}

    def translate(self, e: Event) -> Event:
        t = self.rm.by_position.get((e.replica, e.seq))
        if t is None or t.kind != e.kind:
            raise _Divergence(f"live event {e!r} has no counterpart in the target")
        if e.kind == INTERNAL:
            if t.value != e.value:
                raise _Divergence(f"internal value {e.value!r} differs from target {t.value!r}")
        else:
            if t.message.content != e.message.content:
                raise _Divergence(f"{e!r} carries different content than target {t!r}")
            if e.kind == SEND:
                self.live_to_target[e.uid] = t.uid
                self.target_to_live[t.uid] = e.uid
            elif self.live_to_target.get(e.uid) != t.uid:
                raise _Divergence(f"{e!r} consumes a different message than target {t!r}")
        return t

    def release(self, uids) -> None:
        for u in uids:
            live = self.target_to_live.get(u)
            if live is None:
                tm = self.rm.target.message(u)
                m = Message(self.config.next_uid, tm.sender, tm.to, tm.mtype, tm.data, True)
                self.config = step_adversary(self.config, list(self.config.pool.values()) + [m])
                self.trace.add("adversary", m.sender, message=m)
                self.live_to_target[m.uid] = u
                self.target_to_live[u] = m.uid
                live = m.uid
            m = self.config.pool[live]
            self.config = step_network(self.config, live)
            self.trace.add("deliver", m.to, message=m)

    def run(self) -> tuple[bool, str | None]:
        automata = self.automata
        self.rm.reset()
        self.release(self.rm.initial_release())
        for _ in range(self.budget):
            moves = []
            if self.queue:
                moves.append(("monitor", None))
            for r in range(len(automata)):
                if internal_enabled(automata, self.config, r):
                    moves.append(("internal", r))
                if receive_enabled(automata, self.config, r):
                    moves.append(("receive", r))
            if not moves:
                break
            kind, r = moves[int(self.rng.integers(len(moves)))]
            if kind == "monitor":
                e = self.queue.popleft()
                self.trace.add("monitor", e.replica, message=e.message)
                released, _ = self.rm.step(self.translated[self._index[e.key]])
                if not downward_closed(self.rm.target, self.rm.observed):
                    return False, "observed events are not downward-closed in the target order"
                if not set(self.rm.released) <= self.rm.deliveries:
                    return False, "released a message the target never delivered"
                self.release(released)
                continue
            if kind == "internal":
                self.config, e = step_internal(automata, self.config, r)
            else:
                self.config, e = step_receive(automata, self.config, r)
            self.trace.add(e.kind, r, e)
            self._index[e.key] = len(self.translated)
            self.translated.append(self.translate(e))
            self.queue.append(e)
        return True, None


def run_trial(automata: Sequence, rm: ReplayMonitor, seed: int, trial: int, budget: int = 20000) -> TrialResult:
    rng = np.random.default_rng([seed, trial])
    t = _Trial(automata, rm, rng, budget)
    try:
        ok, reason = t.run()
    except _Divergence as exc:
        ok, reason = False, f"divergence: {exc}"
    complete = all(a.is_final(s) for a, s in zip(automata, t.config.states))
    t.trace.complete = complete
    if ok:
        live = History(t.translated, complete)
        reason = prefix_violation(live, rm.target)
        ok = reason is None and is_prefix(live, rm.target)
    return TrialResult(trial, ok, len(t.translated), complete, reason, t.trace)


def check_theorem(automata: Sequence, rm: ReplayMonitor, trials: int = 100, seed: int = 0,
                  budget: int = 20000) -> TheoremVerdict:
    """Run ``trials`` uniformly random product interleavings under ``rm``."""
    results = [run_trial(automata, rm, seed, t, budget) for t in range(trials)]
    return TheoremVerdict(trials, results)


def recorded_history(trace: ExecutionTrace) -> History:
    from .history import history_of
    return history_of(trace)


__all__ = ["ReplayMonitor", "synthesize", "check_theorem", "run_trial", "pick_gate_to_mutate",
           "TheoremVerdict", "TrialResult", "recorded_history"]
