"""Messages, events, replica automata and the protocol transition rules.

A protocol is a list of replica automata, one per replica id ``0..n-1``.
Configurations are immutable values; every rule returns a fresh one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from .errors import EmptyInbox, NoStepEnabled, NotInPool, ReplicaFinal

SEND = "send"
RECEIVE = "receive"
INTERNAL = "internal"
EVENT_KINDS = (SEND, RECEIVE, INTERNAL)

TIMEOUT = "Timeout"


class Replica(NamedTuple):
    id: int
    label: str


def replicas(n: int) -> list[Replica]:
    return [Replica(i, f"r{i}") for i in range(n)]


class Codec:
    """Canonical JSON payload codec.

    Protocol codecs subclass this to name the field that carries the
    view/round/term of a message (``view_field``).
    """

    name = "json"
    view_field = "view"

    def encode(self, payload) -> bytes:
        """``payload`` is a mapping or an iterable of ``(key, value)`` pairs."""
        return json.dumps(dict(payload), sort_keys=True, separators=(",", ":")).encode()

    def decode(self, data: bytes) -> dict:
        if not data:
            return {}
        return json.loads(data.decode())

    def view_of(self, message: "Message"):
        return message.fields.get(self.view_field)


DEFAULT_CODEC = Codec()


@dataclass(frozen=True)
class Message:
    uid: int
    sender: int
    to: int
    mtype: str
    data: bytes = b""
    fictitious: bool = False

    @cached_property
    def fields(self) -> dict:
        return DEFAULT_CODEC.decode(self.data)

    @property
    def content(self) -> tuple:
        """Everything except identity and provenance."""
        return (self.sender, self.to, self.mtype, self.data)

    def __repr__(self) -> str:
        flag = "*" if self.fictitious else ""
        return f"{self.mtype}{flag}#{self.uid}({self.sender}->{self.to} {self.data.decode(errors='replace')})"


class InternalValue(NamedTuple):
    """Value of an internal event: a type name plus sorted parameters."""

    name: str
    params: tuple = ()

    def get(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default

    def __getitem__(self, key):
        for k, v in self.params:
            if k == key:
                return v
        raise KeyError(key)

    def as_dict(self) -> dict:
        return dict(self.params)


def internal(name: str, **params) -> InternalValue:
    return InternalValue(name, tuple(sorted(params.items())))


@dataclass(frozen=True)
class Event:
    replica: int
    kind: str
    seq: int
    message: Message | None = None
    value: InternalValue | None = None

    @property
    def type(self) -> str:
        if self.kind == SEND:
            return "MessageSend"
        if self.kind == RECEIVE:
            return "MessageReceive"
        return self.value.name if self.value is not None else INTERNAL

    @property
    def uid(self) -> int | None:
        return self.message.uid if self.message is not None else None

    @property
    def key(self) -> tuple:
        """Identity that is stable under replay of the same schedule."""
        return (self.replica, self.seq, self.kind, self.uid)

    def __repr__(self) -> str:
        body = self.message if self.message is not None else self.value
        return f"<{self.replica}:{self.seq} {self.kind} {body!r}>"


# -- automaton emissions ---------------------------------------------------

class Send(NamedTuple):
    to: int
    mtype: str
    payload: tuple  # sorted (key, value) pairs so replica states stay hashable


def send(to: int, mtype: str, **payload) -> Send:
    return Send(to, mtype, tuple(sorted(payload.items())))


class Internal(NamedTuple):
    value: InternalValue


class ReplicaAutomaton:
    """Deterministic partial transition system of a single replica.

    ``step(state, None)`` is the internal (bottom) input and must return
    ``(state', Send | Internal)``; ``step(state, message)`` returns
    ``(state', None)`` since the emitted event is always the receive itself.
    ``None`` means the step is undefined. Steps must depend only on message
    content, never on uids.
    """

    codec: Codec = DEFAULT_CODEC

    def __init__(self, replica: int):
        self.replica = replica

    def initial_state(self):
        raise NotImplementedError

    def step(self, state, message: Message | None):
        raise NotImplementedError

    def is_final(self, state) -> bool:
        return False

    def timeout_rank(self, state) -> int | None:
        """Rank of an armed logical timer, lower fires first; ``None`` if unarmed."""
        return None


@dataclass(frozen=True)
class ProtocolConfiguration:
    event_log: tuple = ()
    pool: Mapping[int, Message] = field(default_factory=dict)
    states: tuple = ()
    inboxes: tuple = ()
    consumed: frozenset = frozenset()
    seqs: tuple = ()
    next_uid: int = 0

    @property
    def n(self) -> int:
        return len(self.states)

    def inbox(self, r: int) -> tuple:
        return self.inboxes[r]

    def check_invariants(self) -> None:
        seen = set(self.pool)
        for r, box in enumerate(self.inboxes):
            for m in box:
                assert m.to == r, f"{m!r} queued at replica {r}"
                assert m.uid not in seen, f"uid {m.uid} in two places"
                seen.add(m.uid)
        assert not (seen & self.consumed), "consumed message still in transit"


def initial_configuration(automata: Sequence[ReplicaAutomaton]) -> ProtocolConfiguration:
    n = len(automata)
    return ProtocolConfiguration(
        event_log=(),
        pool={},
        states=tuple(a.initial_state() for a in automata),
        inboxes=tuple(() for _ in range(n)),
        consumed=frozenset(),
        seqs=tuple(0 for _ in range(n)),
        next_uid=0,
    )


def _set(seq: tuple, i: int, value) -> tuple:
    return seq[:i] + (value,) + seq[i + 1:]


def new_message(config: ProtocolConfiguration, sender: int, to: int, mtype: str, payload=None,
                codec: Codec = DEFAULT_CODEC, fictitious: bool = False):
    """Mint a message with the next free uid; returns ``(config, message)``."""
    data = codec.encode(payload or {})
    m = Message(config.next_uid, sender, to, mtype, data, fictitious)
    return replace(config, next_uid=config.next_uid + 1), m


def internal_enabled(automata, config: ProtocolConfiguration, r: int) -> bool:
    state = config.states[r]
    return not automata[r].is_final(state) and automata[r].step(state, None) is not None


def receive_enabled(automata, config: ProtocolConfiguration, r: int) -> bool:
    box = config.inboxes[r]
    if not box or automata[r].is_final(config.states[r]):
        return False
    return automata[r].step(config.states[r], box[0]) is not None


def step_internal(automata, config: ProtocolConfiguration, r: int):
    """Internal or Send rule for replica ``r``; returns ``(config, event)``."""
    a = automata[r]
    state = config.states[r]
    if a.is_final(state):
        raise ReplicaFinal(f"replica {r} is in a final state")
    out = a.step(state, None)
    if out is None:
        raise NoStepEnabled(f"replica {r} has no internal step")
    new_state, emission = out
    seq = config.seqs[r]
    config = replace(config, states=_set(config.states, r, new_state), seqs=_set(config.seqs, r, seq + 1))
    if isinstance(emission, Send):
        config, m = new_message(config, r, emission.to, emission.mtype, emission.payload, a.codec)
        event = Event(r, SEND, seq, message=m)
        pool = dict(config.pool)
        pool[m.uid] = m
        return replace(config, event_log=config.event_log + (event,), pool=pool), event
    if isinstance(emission, Internal):
        return config, Event(r, INTERNAL, seq, value=emission.value)
    raise TypeError(f"automaton {r} emitted {emission!r} on an internal step")


def step_network(config: ProtocolConfiguration, uid: int) -> ProtocolConfiguration:
    """Network rule: move a pooled message to the tail of its target's inbox."""
    if uid not in config.pool:
        raise NotInPool(uid)
    pool = dict(config.pool)
    m = pool.pop(uid)
    inboxes = _set(config.inboxes, m.to, config.inboxes[m.to] + (m,))
    return replace(config, pool=pool, inboxes=inboxes)


def step_receive(automata, config: ProtocolConfiguration, r: int):
    """Receive rule: consume the inbox head of ``r``; returns ``(config, event)``."""
    box = config.inboxes[r]
    if not box:
        raise EmptyInbox(f"replica {r} has an empty inbox")
    a = automata[r]
    state = config.states[r]
    if a.is_final(state):
        raise ReplicaFinal(f"replica {r} is in a final state")
    m = box[0]
    out = a.step(state, m)
    if out is None:
        raise NoStepEnabled(f"replica {r} cannot consume {m!r}")
    new_state, _ = out
    seq = config.seqs[r]
    event = Event(r, RECEIVE, seq, message=m)
    config = replace(
        config,
        event_log=config.event_log + (event,),
        states=_set(config.states, r, new_state),
        inboxes=_set(config.inboxes, r, box[1:]),
        seqs=_set(config.seqs, r, seq + 1),
        consumed=config.consumed | {m.uid},
    )
    return config, event


def step_adversary(config: ProtocolConfiguration, new_pool: Iterable[Message]) -> ProtocolConfiguration:
    """Adversary rule: replace the pool wholesale; newcomers are flagged fictitious."""
    pool = {}
    next_uid = config.next_uid
    for m in new_pool:
        if m.uid not in config.pool and not m.fictitious:
            m = replace(m, fictitious=True)
        pool[m.uid] = m
        next_uid = max(next_uid, m.uid + 1)
    return replace(config, pool=pool, next_uid=next_uid)


def is_complete(automata, config: ProtocolConfiguration) -> bool:
    return all(a.is_final(s) for a, s in zip(automata, config.states))


def armed_timer(automata, config: ProtocolConfiguration) -> int | None:
    """Replica whose logical timer fires next (lowest rank, then id), if any."""
    best = None
    for r, a in enumerate(automata):
        s = config.states[r]
        if a.is_final(s):
            continue
        rank = a.timeout_rank(s)
        if rank is not None and (best is None or (rank, r) < best):
            best = (rank, r)
    return None if best is None else best[1]


def timeout_message(config: ProtocolConfiguration, r: int):
    return new_message(config, r, r, TIMEOUT, {}, fictitious=True)


def pop_event(config: ProtocolConfiguration):
    """Take the head of the event queue (used by monitor steps)."""
    return replace(config, event_log=config.event_log[1:]), config.event_log[0]


def push_event(config: ProtocolConfiguration, event: Event) -> ProtocolConfiguration:
    return replace(config, event_log=config.event_log + (event,))


# -- traces ----------------------------------------------------------------

@dataclass(frozen=True)
class TraceStep:
    index: int
    rule: str
    replica: int | None = None
    event: Event | None = None
    message: Message | None = None

    def record(self) -> dict:
        m = self.event.message if self.event is not None and self.event.message is not None else self.message
        rec = {
            "step": self.index,
            "rule": self.rule,
            "replica": self.replica,
            "kind": self.event.kind if self.event is not None else None,
            "seq": self.event.seq if self.event is not None else None,
        }
        if m is not None:
            rec.update(uid=m.uid, **{"from": m.sender}, to=m.to, type=m.mtype,
                       data=m.data.decode(), fictitious=m.fictitious)
        elif self.event is not None and self.event.value is not None:
            rec.update(type=self.event.value.name, params=self.event.value.as_dict())
        return rec


@dataclass
class ExecutionTrace:
    initial: ProtocolConfiguration | None
    steps: list = field(default_factory=list)
    complete: bool = False
    n: int = 0
    final: ProtocolConfiguration | None = None

    @property
    def events(self) -> list:
        return [s.event for s in self.steps if s.event is not None]

    def add(self, rule: str, replica=None, event=None, message=None) -> TraceStep:
        st = TraceStep(len(self.steps), rule, replica, event, message)
        self.steps.append(st)
        return st

    def truncated(self, k: int) -> "ExecutionTrace":
        return ExecutionTrace(self.initial, self.steps[:k], False, self.n)

    def dumps(self) -> str:
        header = {"trace": True, "replicas": self.n, "complete": self.complete}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(s.record(), sort_keys=True) for s in self.steps]
        lines.append(json.dumps({"end": True, "steps": len(self.steps)}))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExecutionTrace":
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
        header, records = lines[0], lines[1:]
        footer = records.pop() if records and records[-1].get("end") else None
        # a cut-off file loses its footer and can no longer claim completeness
        intact = footer is not None and footer.get("steps") == len(records)
        trace = cls(None, [], bool(header.get("complete")) and intact, int(header.get("replicas", 0)))
        messages: dict[int, Message] = {}
        for rec in records:
            m = None
            if rec.get("uid") is not None:
                m = messages.get(rec["uid"])
                if m is None:
                    m = Message(rec["uid"], rec["from"], rec["to"], rec["type"],
                                rec["data"].encode(), rec.get("fictitious", False))
                    messages[m.uid] = m
            ev = None
            if rec.get("kind") is not None:
                value = None
                if rec["kind"] == INTERNAL:
                    value = internal(rec["type"], **rec.get("params", {}))
                ev = Event(rec["replica"], rec["kind"], rec["seq"],
                           message=m if rec["kind"] != INTERNAL else None, value=value)
            trace.add(rec["rule"], rec.get("replica"), ev, m if ev is None else None)
        return trace


# -- synchronous reference run ---------------------------------------------

def run_synchronous(automata: Sequence[ReplicaAutomaton], step_budget: int) -> ExecutionTrace:
    """Fault-free round-robin run.

    Each round: every replica (by id) exhausts its internal/send steps, the
    whole pool moves to inboxes in (sender, uid) order, then every replica
    drains its inbox (flushing internal steps between receives). A round with
    no progress fires the next armed logical timer.
    """
    config = initial_configuration(automata)
    trace = ExecutionTrace(config, [], False, len(automata))
    n = len(automata)
    budget = step_budget

    def flush(r):
        nonlocal config, budget
        while budget > 0 and internal_enabled(automata, config, r):
            config, ev = step_internal(automata, config, r)
            trace.add(ev.kind, r, ev)
            budget -= 1

    while budget > 0 and not is_complete(automata, config):
        before = len(trace.steps)
        for r in range(n):
            flush(r)
        for m in sorted(config.pool.values(), key=lambda m: (m.sender, m.uid)):
            if budget <= 0:
                break
            config = step_network(config, m.uid)
            trace.add("network", m.to, message=m)
            budget -= 1
        for r in range(n):
            while budget > 0 and config.inboxes[r]:
                flush(r)
                if budget <= 0 or not receive_enabled(automata, config, r):
                    break
                config, ev = step_receive(automata, config, r)
                trace.add(RECEIVE, r, ev)
                budget -= 1
            flush(r)
        if len(trace.steps) == before:
            r = armed_timer(automata, config)
            if r is None or budget < 2:
                break
            config, m = timeout_message(config, r)
            config = step_adversary(config, list(config.pool.values()) + [m])
            trace.add("adversary", r, message=m)
            config = step_network(config, m.uid)
            trace.add("network", r, message=m)
            budget -= 2
    trace.complete = is_complete(automata, config)
    trace.final = config
    return trace


# -- automaton validation --------------------------------------------------

def _config_key(config: ProtocolConfiguration) -> tuple:
    return (
        config.states,
        tuple(tuple(m.content for m in box) for box in config.inboxes),
        tuple(sorted(m.content for m in config.pool.values())),
    )


def validate_automata(automata: Sequence[ReplicaAutomaton], max_configs: int = 10_000) -> tuple[int, list[str]]:
    """Breadth-first exploration checking the automaton contract.

    In every reachable replica state, at most one of the internal input and
    message inputs may be defined, final states accept nothing, and steps are
    deterministic. Timers fire whenever armed. Returns the number of
    configurations visited and a list of violations.
    """
    from collections import deque

    start = initial_configuration(automata)
    seen = {_config_key(start)}
    frontier = deque([start])
    problems: list[str] = []
    checked: set = set()
    visited = 0
    while frontier and visited < max_configs:
        config = frontier.popleft()
        visited += 1
        for r, a in enumerate(automata):
            s = config.states[r]
            probes = [m for m in config.inboxes[r]] + [m for m in config.pool.values() if m.to == r]
            probes.append(Message(-1, r, r, TIMEOUT, b"{}", True))
            for m in probes:
                key = (r, s, m.content)
                if key in checked:
                    continue
                checked.add(key)
                bottom = a.step(s, None)
                took = a.step(s, m)
                if a.is_final(s) and (bottom is not None or took is not None):
                    problems.append(f"replica {r}: final state accepts input")
                if bottom is not None and took is not None:
                    problems.append(f"replica {r}: internal and {m.mtype} both enabled")
                if took != a.step(s, m) or bottom != a.step(s, None):
                    problems.append(f"replica {r}: nondeterministic step")
        successors = []
        for r in range(len(automata)):
            if internal_enabled(automata, config, r):
                successors.append(step_internal(automata, config, r)[0])
            if receive_enabled(automata, config, r):
                successors.append(step_receive(automata, config, r)[0])
        for uid in config.pool:
            successors.append(step_network(config, uid))
        r = armed_timer(automata, config)
        if r is not None:
            c, m = timeout_message(config, r)
            successors.append(step_network(step_adversary(c, list(c.pool.values()) + [m]), m.uid))
        for c in successors:
            key = _config_key(c)
            if key not in seen:
                seen.add(key)
                frontier.append(c)
    return visited, problems
