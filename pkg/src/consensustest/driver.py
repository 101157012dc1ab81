"""Test-case driver: runs the product of replicas, filters and assertion.

One iteration repeats until every replica is final or the step budget runs
out:

1. if the event queue is nonempty, pop its head and take a monitor step
   (filters, then the assertion machine, then any watchdog machines);
   messages returned by actions go straight to their target inboxes and a
   send that was not blocked is registered with the scheduler;
2. otherwise deliver the scheduler's pick among pooled, unblocked messages
   whose target is not final;
3. otherwise fire the next armed logical timer as a fictitious ``Timeout``.

Replicas react to a delivery eagerly: they consume their inbox and flush
their internal steps before control returns, which fixes the interleaving
given the scheduler seed. The same loop drives in-process automata and
out-of-process replicas behind :mod:`consensustest.rpc`.
"""
from __future__ import annotations

import copy
import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dsl import Filter, FilterSet, MonitorContext, apply_filters
from .errors import ActionFailure, ErroredIteration, NoMatchInNormalRun, StepError, UnreachableReplica
from .model import (
    RECEIVE, SEND, TIMEOUT, DEFAULT_CODEC, Event, ExecutionTrace, Message, ReplicaAutomaton,
    armed_timer, initial_configuration, internal_enabled, is_complete, new_message,
    receive_enabled, run_synchronous, step_adversary, step_internal, step_network, step_receive,
)
from .pctcp import ChainPartitionSchedule, UniformRandomSchedule
from .statemachine import StateMachine

SUCCESS = "success"
FAIL = "fail"
ERRORED = "errored"

DEFAULT_BUDGET = 5000
DEFAULT_DEPTH = 3
DEFAULT_N_BOUND = 100


@dataclass
class TestCase:
    __test__ = False  # not a pytest class

    name: str
    filters: FilterSet = field(default_factory=FilterSet)
    assertion: StateMachine = field(default_factory=StateMachine)
    step_budget: int = DEFAULT_BUDGET
    setup: Callable | None = None
    threshold: float = 1.0
    watchdogs: list = field(default_factory=list)
    description: str = ""

    def __post_init__(self):
        if self.step_budget <= 0:
            raise ValueError("step_budget must be positive")
        self.filters = FilterSet(self.filters)


@dataclass
class IterationOutcome:
    seed: int
    outcome: str
    state: str
    events: int = 0
    messages: int = 0
    steps: int = 0
    complete: bool = False
    watchdog_failed: bool = False
    schedule: dict = field(default_factory=dict)
    error: str | None = None
    trace: ExecutionTrace | None = field(default=None, repr=False)
    ever_blocked: frozenset = field(default=frozenset(), repr=False)
    consumed: int = 0

    def row(self) -> dict:
        return {
            "seed": self.seed, "outcome": self.outcome, "state": self.state,
            "events": self.events, "messages": self.messages, "steps": self.steps,
            "complete": self.complete, "watchdog_failed": self.watchdog_failed,
            "schedule": self.schedule, "error": self.error,
        }


@dataclass
class SuiteReport:
    name: str
    base_seed: int
    outcomes: list = field(default_factory=list)

    @property
    def successes(self) -> int:
        return sum(o.outcome == SUCCESS for o in self.outcomes)

    @property
    def errored(self) -> int:
        return sum(o.outcome == ERRORED for o in self.outcomes)

    @property
    def summary(self) -> str:
        return f"{self.successes}/{len(self.outcomes)}"

    def counts(self) -> list[str]:
        return [o.outcome for o in self.outcomes]

    def dumps(self) -> str:
        lines = [json.dumps({"suite": self.name, "base_seed": self.base_seed,
                             "iterations": len(self.outcomes)}, sort_keys=True)]
        lines += [json.dumps(o.row(), sort_keys=True) for o in self.outcomes]
        lines.append(json.dumps({
            "summary": self.summary, "success": self.successes,
            "fail": sum(o.outcome == FAIL for o in self.outcomes), "errored": self.errored,
        }, sort_keys=True))
        return "\n".join(lines) + "\n"


# -- backends --------------------------------------------------------------

class InProcessBackend:
    """Replica automata stepped in this process on a protocol configuration."""

    def __init__(self, automata: Sequence[ReplicaAutomaton]):
        self.automata = list(automata)
        self.n = len(self.automata)
        self.codec = getattr(self.automata[0], "codec", DEFAULT_CODEC)
        self.config = initial_configuration(self.automata)

    def reset(self) -> list[Event]:
        self.config = initial_configuration(self.automata)
        out = []
        for r in range(self.n):
            out += self._flush(r)
        return out

    def _flush(self, r: int) -> list[Event]:
        out = []
        while internal_enabled(self.automata, self.config, r):
            self.config, ev = step_internal(self.automata, self.config, r)
            out.append(ev)
        return out

    def mint(self, sender: int, to: int, mtype: str, payload: dict, fictitious: bool = True) -> Message:
        self.config, m = new_message(self.config, sender, to, mtype, payload, self.codec, fictitious)
        return m

    def deliver(self, m: Message) -> list[Event]:
        if m.uid not in self.config.pool:
            self.config = step_adversary(self.config, list(self.config.pool.values()) + [m])
        self.config = step_network(self.config, m.uid)
        r = m.to
        out = []
        while receive_enabled(self.automata, self.config, r):
            self.config, ev = step_receive(self.automata, self.config, r)
            out.append(ev)
            out += self._flush(r)
        return out

    def is_final(self, r: int) -> bool:
        return self.automata[r].is_final(self.config.states[r])

    def timer(self) -> int | None:
        return armed_timer(self.automata, self.config)

    def complete(self) -> bool:
        return is_complete(self.automata, self.config)

    def close(self) -> None:
        pass


def make_scheduler(seed: int, n_bound: int, depth: int, strategy: str = "pctcp"):
    if strategy == "uniform":
        return UniformRandomSchedule(seed)
    return ChainPartitionSchedule(seed, n_bound, depth)


# -- one iteration ---------------------------------------------------------

class _Iteration:
    def __init__(self, tc: TestCase, backend, seed: int, n_bound: int, depth: int, strategy: str):
        self.tc = tc
        self.backend = backend
        self.seed = seed
        self.scheduler = make_scheduler(seed, n_bound, depth, strategy)
        self.ctx = MonitorContext(codec=backend.codec, mint=self._mint)
        if tc.setup is not None:
            tc.setup(self.ctx, np.random.default_rng([seed, 7]))
        self.sm = tc.assertion
        self.sm.reset()
        for wd in tc.watchdogs:
            wd.reset()
        self.queue: deque[Event] = deque()
        self.pool: dict[int, Message] = {}
        self.ever_blocked: set[int] = set()
        self.trace = ExecutionTrace(None, [], False, backend.n)
        self.steps = 0
        self.consumed = 0
        # causal message pasts for scheduler registration
        self.known: list[set] = [set() for _ in range(backend.n)]
        self.preds_at_send: dict[int, frozenset] = {}
        self.registered: set[int] = set()

    def _mint(self, sender, to, mtype, payload):
        m = self.backend.mint(sender, to, mtype, payload, True)
        self.trace.add("adversary", sender, message=m)
        return m

    def _absorb(self, events: list[Event]) -> None:
        for e in events:
            self.steps += 1
            self.trace.add(e.kind, e.replica, e)
            self.queue.append(e)
            if e.kind == SEND:
                m = e.message
                self.pool[m.uid] = m
                self.preds_at_send[m.uid] = frozenset(self.known[e.replica])
                self.known[e.replica].add(m.uid)
            elif e.kind == RECEIVE:
                m = e.message
                self.known[e.replica] |= self.preds_at_send.get(m.uid, frozenset())
                self.known[e.replica].add(m.uid)

    def _deliver(self, m: Message, rule: str) -> None:
        self.pool.pop(m.uid, None)
        self.trace.add(rule, m.to, message=m)
        self.steps += 1
        self._absorb(self.backend.deliver(m))

    def _monitor_step(self) -> None:
        e = self.queue.popleft()
        self.consumed += 1
        self.steps += 1
        self.trace.add("monitor", e.replica, message=e.message)
        ctx = self.ctx
        ctx.pool_view = dict(self.pool)
        ctx.sm_state = self.sm.current
        _, deliveries, blocked = apply_filters(self.tc.filters, e, ctx)
        self.sm.step(e, ctx)
        for wd in self.tc.watchdogs:
            wd.step(e, ctx)
        ctx.event_history.append(e)
        ctx.sm_state = self.sm.current
        if blocked:
            self.ever_blocked.add(e.uid)
        for m in deliveries:
            ctx.blocked.discard(m.uid)
            self._deliver(m, "deliver")
        if e.kind == SEND and not blocked and e.uid in self.pool:
            m = e.message
            self.scheduler.register_message(m.uid, self.preds_at_send[m.uid] & self.registered)
            self.registered.add(m.uid)

    def _enabled(self) -> list[int]:
        return sorted(uid for uid, m in self.pool.items()
                      if uid in self.registered and uid not in self.ctx.blocked
                      and not self.backend.is_final(m.to))

    def run(self) -> IterationOutcome:
        try:
            self._absorb(self.backend.reset())
            budget = self.tc.step_budget
            while self.steps < budget:
                if self.queue:
                    self._monitor_step()
                    continue
                if self.backend.complete():
                    break
                enabled = self._enabled()
                uid = self.scheduler.next_delivery(enabled) if enabled else None
                if uid is not None:
                    m = self.pool[uid]
                    self.scheduler.notify_delivered(uid)
                    self._deliver(m, "network")
                    continue
                r = self.backend.timer()
                if r is None:
                    break  # deadlock: nothing can move
                m = self.backend.mint(r, r, TIMEOUT, {}, True)
                self.trace.add("adversary", r, message=m)
                self.steps += 1
                self._deliver(m, "network")
        except (StepError, ActionFailure, AssertionError, KeyError) as exc:
            return self._outcome(ERRORED, str(ErroredIteration(f"{type(exc).__name__}: {exc}")))
        except (UnreachableReplica, OSError) as exc:  # out-of-process replica went away
            return self._outcome(ERRORED, f"{type(exc).__name__}: {exc}")
        return self._outcome(SUCCESS if self.sm.is_accepting() else FAIL)

    def _outcome(self, outcome: str, error: str | None = None) -> IterationOutcome:
        complete = False
        try:
            complete = self.backend.complete()
        except OSError:
            pass
        self.trace.complete = complete
        return IterationOutcome(
            seed=self.seed,
            outcome=outcome,
            state=self.sm.current,
            events=len(self.trace.events),
            messages=sum(1 for e in self.trace.events if e.kind == SEND),
            steps=self.steps,
            complete=complete,
            watchdog_failed=any(wd.failed for wd in self.tc.watchdogs),
            schedule=self.scheduler.dump(),
            error=error,
            trace=self.trace,
            ever_blocked=frozenset(self.ever_blocked),
            consumed=self.consumed,
        )


def _backend_for(automata_or_backend):
    if hasattr(automata_or_backend, "deliver"):
        return automata_or_backend
    return InProcessBackend(automata_or_backend)


def run_iteration(tc: TestCase, automata, seed: int, n_bound: int = DEFAULT_N_BOUND,
                  depth: int = DEFAULT_DEPTH, strategy: str = "pctcp") -> IterationOutcome:
    """Run one seeded iteration; ``automata`` may also be a ready backend."""
    return _Iteration(tc, _backend_for(automata), seed, n_bound, depth, strategy).run()


def run_suite(tc: TestCase, automata, iterations: int, base_seed: int = 0, *,
              n_bound: int = DEFAULT_N_BOUND, depth: int = DEFAULT_DEPTH,
              strategy: str = "pctcp", jobs: int = 1) -> SuiteReport:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    seeds = range(base_seed, base_seed + iterations)
    shared = hasattr(automata, "deliver")

    def one(seed):
        backend = automata if shared else InProcessBackend(automata)
        return run_iteration(copy.deepcopy(tc), backend, seed, n_bound, depth, strategy)

    if jobs > 1 and not shared:
        with ThreadPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(one, seeds))
    else:
        outcomes = [one(s) for s in seeds]
    return SuiteReport(tc.name, base_seed, outcomes)


# -- filter distance -------------------------------------------------------

INFINITY = float("inf")


@dataclass
class DistanceRow:
    filters: str
    kind: str
    distance: float | None
    capture_index: int | None = None
    release_index: int | None = None
    note: str = ""

    def line(self) -> str:
        d = "inf" if self.distance == INFINITY else ("-" if self.distance is None else str(int(self.distance)))
        return f"{self.kind:<10} {d:>5}  {self.filters}"


def _first_match(cond, events, ctx, start=0):
    for i in range(start, len(events)):
        if cond(events[i], ctx):
            return i
    return None


def filter_distance(tc: TestCase, automata, seed: int = 0) -> list[DistanceRow]:
    """Distance of every capture/release pair, drop and byzantine filter of ``tc``.

    Indices count send events of the fault-free synchronous run. A capture
    whose release never fires in that run is measured to the end of the run,
    exactly like a drop.
    """
    trace = run_synchronous(automata, tc.step_budget)
    sends = [e for e in trace.events if e.kind == SEND]
    ctx = MonitorContext(codec=getattr(automata[0], "codec", DEFAULT_CODEC))
    if tc.setup is not None:
        tc.setup(ctx, np.random.default_rng([seed, 7]))
    rows = []
    releases = {f.set_name: f for f in tc.filters if f.kind == "release"}
    for f in tc.filters:
        kind = f.kind
        if kind == "byzantine":
            rows.append(DistanceRow(repr(f), kind, INFINITY))
        elif kind in ("capture", "drop"):
            i = _first_match(f.condition, sends, ctx)
            if i is None:
                raise NoMatchInNormalRun(f"{f!r} never matches a message of the fault-free run")
            rel = releases.get(f.set_name) if kind == "capture" else None
            j = _first_match(rel.condition, sends, ctx, i + 1) if rel is not None else None
            if j is None:
                note = "" if kind == "drop" else "release never fires; measured to end of run"
                label = repr(f) if rel is None else f"{f!r} / {rel!r}"
                rows.append(DistanceRow(label, kind, float(len(sends) - i), i, None, note))
            else:
                rows.append(DistanceRow(f"{f!r} / {rel!r}", "reorder", float(j - i), i, j))
        elif kind == "release":
            continue
        else:
            rows.append(DistanceRow(repr(f), "unknown", None))
    return rows


def filter_pair_distance(capture: Filter, release: Filter | None, automata, budget: int = DEFAULT_BUDGET,
                         ctx: MonitorContext | None = None) -> float:
    """Distance for a single pair; ``release=None`` treats ``capture`` as a drop."""
    if capture.kind == "byzantine":
        return INFINITY
    trace = run_synchronous(automata, budget)
    sends = [e for e in trace.events if e.kind == SEND]
    ctx = ctx or MonitorContext()
    i = _first_match(capture.condition, sends, ctx)
    if i is None:
        raise NoMatchInNormalRun(repr(capture))
    if release is None:
        return float(len(sends) - i)
    j = _first_match(release.condition, sends, ctx, i + 1)
    return float((j if j is not None else len(sends)) - i)
