"""Named registry of shipped test cases.

Each entry is a factory ``(n, f) -> TestCase`` so suites can be rebuilt for
other cluster sizes. Replica roles such as ``p``/``q``/``r`` are drawn by the
setup hook from the iteration seed.
"""
from __future__ import annotations

from typing import Callable

from .driver import TestCase
from .dsl import (
    Condition, Count, FilterSet, If, MessageSet, drop_message, is_event_type, is_message_from,
    is_message_send, is_message_to, is_message_type, message_view,
)
from .protocols import pbft_automaton, raft_automaton
from .protocols.pbft import (
    NEWVIEW, PREPARE, PREPREPARE, VIEWCHANGE, add_to_log, change_prepare_to_nil,
    conflicting_decision, distinct_senders,
)
from .protocols.raft import BECOME_LEADER, REQUEST_VOTE, REQUEST_VOTE_REPLY
from .statemachine import FAIL, StateMachine

REGISTRY: dict[str, dict[str, Callable[..., TestCase]]] = {"pbft": {}, "raft": {}}


def register(protocol: str, name: str):
    def wrap(factory):
        REGISTRY[protocol][name] = factory
        return factory
    return wrap


def lookup(protocol: str, name: str) -> Callable[..., TestCase]:
    try:
        return REGISTRY[protocol][name]
    except KeyError:
        raise KeyError(f"no test case {name!r} for protocol {protocol!r}") from None


def automata_for(protocol: str, n: int, f: int = 1):
    if protocol == "pbft":
        return pbft_automaton(n, f)
    if protocol == "raft":
        return raft_automaton(n)
    raise KeyError(f"unknown protocol {protocol!r}")


# -- assertion machines ----------------------------------------------------

def agreement_machine() -> StateMachine:
    """Success after any decision; Fail once two decisions conflict."""
    sm = StateMachine()
    init = sm.builder()
    init.on(conflicting_decision(), FAIL)
    once = init.on(add_to_log(), "DecidedOnce")
    once.mark_success()
    once.on(conflicting_decision(), FAIL)
    return sm


def new_view_machine(view: int = 1, quorum: int = 3, leader: int = 1) -> StateMachine:
    """Agreement, extended: ``quorum`` distinct ViewChange senders, then a NewView from the leader."""
    sm = StateMachine()
    init = sm.builder()
    init.on(conflicting_decision(), FAIL)
    expected = init.on(distinct_senders(VIEWCHANGE, view, quorum), "ViewChangeExpected")
    expected.on(conflicting_decision(), FAIL)
    new_view = is_message_send() & is_message_type(NEWVIEW) & message_view(view) & is_message_from(leader)
    done = expected.on(new_view, "NewViewObserved")
    done.mark_success()
    done.on(conflicting_decision(), FAIL)
    return sm


def single_view_change_machine(view: int = 1) -> StateMachine:
    """Exactly one replica asks for ``view`` and nobody starts it."""
    sm = StateMachine()
    bad = conflicting_decision() | distinct_senders(VIEWCHANGE, view, 2) \
        | (is_message_send() & is_message_type(NEWVIEW))
    init = sm.builder()
    init.on(bad, FAIL)
    one = init.on(is_message_send() & is_message_type(VIEWCHANGE) & message_view(view), "OneViewChange")
    one.mark_success()
    one.on(bad, FAIL)
    return sm


def late_prepares_machine() -> StateMachine:
    """View 1 begins before any view-0 Prepare reaches its target."""
    sm = StateMachine()
    init = sm.builder()
    init.on(is_message_type(PREPARE) & message_view(0) & ~is_message_send(), FAIL)
    began = init.on(is_message_send() & message_view(1), "ViewOneBegan")
    began.mark_success()
    return sm


def leader_machine(term: int | None = None) -> StateMachine:
    sm = StateMachine()
    init = sm.builder()

    def elected(e, ctx):
        return e.value is not None and e.value.name == BECOME_LEADER and (term is None or e.value["term"] == term)

    two_leaders = Condition(_second_leader_same_term, "SecondLeaderSameTerm")
    init.on(two_leaders, FAIL)
    done = init.on(Condition(elected, "BecomeLeader", (term,)), "LeaderElected")
    done.mark_success()
    done.on(two_leaders, FAIL)
    return sm


def _second_leader_same_term(e, ctx) -> bool:
    if e.value is None or e.value.name != BECOME_LEADER:
        return False
    return any(p.value is not None and p.value.name == BECOME_LEADER and p.value["term"] == e.value["term"]
               for p in ctx.event_history)


def election_safety_machine() -> StateMachine:
    sm = StateMachine()
    sm.builder().on(Condition(_second_leader_same_term, "SecondLeaderSameTerm"), FAIL)
    sm.mark_success("Initial")
    return sm


# -- setup hooks -----------------------------------------------------------

def pick_roles(n: int, names=("p", "q", "r")):
    def setup(ctx, rng):
        chosen = rng.choice(n, size=len(names), replace=False)
        for name, r in zip(names, chosen):
            ctx.vars[name] = int(r)
    return setup


# -- PBFT ------------------------------------------------------------------

@register("pbft", "no-filters")
def pbft_no_filters(n: int = 4, f: int = 1) -> TestCase:
    return TestCase("no-filters", FilterSet(), agreement_machine(), watchdogs=[agreement_machine()],
                    description="scheduler-only exploration; every replica decides")


@register("pbft", "drop-prepare-one")
def pbft_drop_prepare_one(n: int = 4, f: int = 1) -> TestCase:
    fs = FilterSet([If(is_message_type(PREPARE) & is_message_to("p")).Then(drop_message())])
    return TestCase("drop-prepare-one", fs, single_view_change_machine(1), setup=pick_roles(n, ("p",)),
                    watchdogs=[agreement_machine()],
                    description="Prepare to p dropped: p alone asks for view 1, no NewView")


@register("pbft", "drop-prepare-three")
def pbft_drop_prepare_three(n: int = 4, f: int = 1) -> TestCase:
    cond = is_message_type(PREPARE) & (is_message_to("p") | is_message_to("q") | is_message_to("r"))
    fs = FilterSet([If(cond).Then(drop_message())])
    return TestCase("drop-prepare-three", fs, new_view_machine(1, 2 * f + 1, 1 % n), setup=pick_roles(n),
                    watchdogs=[agreement_machine()],
                    description="Prepare to p, q, r dropped: view change to view 1 completes")


@register("pbft", "byzantine-prepare-nil")
def pbft_byzantine_nil(n: int = 4, f: int = 1) -> TestCase:
    fs = FilterSet([If(is_message_send() & is_message_type(PREPARE) & is_message_from("p"))
                    .Then(change_prepare_to_nil())])
    return TestCase("byzantine-prepare-nil", fs, agreement_machine(), setup=pick_roles(n, ("p",)),
                    watchdogs=[agreement_machine()],
                    description="Prepare of p rewritten to nil; the others still agree")


@register("pbft", "reorder-preprepare")
def pbft_reorder_preprepare(n: int = 4, f: int = 1) -> TestCase:
    fs = FilterSet([
        If(is_message_send() & is_message_type(PREPARE) & message_view(0)).Then(drop_message()),
        If(is_message_send() & is_message_type(PREPREPARE) & is_message_to("r") & message_view(0))
        .Then(MessageSet("reordered").store()),
        If(is_message_send() & is_message_type(PREPREPARE) & message_view(1))
        .Then(MessageSet("reordered").deliver_all()),
    ])
    sm = StateMachine()
    init = sm.builder()
    init.on(conflicting_decision(), FAIL)
    sm.mark_success("Initial")
    return TestCase("reorder-preprepare", fs, sm, setup=pick_roles(n, ("r",)), watchdogs=[agreement_machine()],
                    description="view-0 PrePrepare to r held until view 1 is proposed; safety must hold")


@register("pbft", "baseline-late-prepares")
def pbft_baseline_late(n: int = 4, f: int = 1) -> TestCase:
    return TestCase("baseline-late-prepares", FilterSet(), late_prepares_machine(), threshold=0.0,
                    watchdogs=[agreement_machine()],
                    description="no filters: does the scheduler alone delay all view-0 Prepares past view 1?")


# -- Raft ------------------------------------------------------------------

@register("raft", "no-filters")
def raft_no_filters(n: int = 5, f: int = 2) -> TestCase:
    return TestCase("no-filters", FilterSet(), leader_machine(1), watchdogs=[election_safety_machine()],
                    description="scheduler-only exploration; replica 0 wins term 1")


@register("raft", "drop-f-votes")
def raft_drop_f_votes(n: int = 5, f: int = 2) -> TestCase:
    fs = FilterSet([
        If(is_message_send() & is_message_type(REQUEST_VOTE_REPLY) & Count("dropped").lt((n - 1) // 2))
        .Then(Count("dropped").incr(), drop_message()),
    ])
    return TestCase("drop-f-votes", fs, leader_machine(1), threshold=0.95, watchdogs=[election_safety_machine()],
                    description="f vote replies dropped; the candidate still wins term 1")


@register("raft", "revote")
def raft_revote(n: int = 5, f: int = 2) -> TestCase:
    fs = FilterSet([
        If(is_message_send() & is_message_type(REQUEST_VOTE_REPLY) & message_view(1))
        .Then(MessageSet("votes").store()),
        If(is_message_send() & is_message_type(REQUEST_VOTE) & message_view(2))
        .Then(MessageSet("votes").deliver_all()),
    ])
    return TestCase("revote", fs, leader_machine(2), watchdogs=[election_safety_machine()],
                    description="term-1 votes held back until the term-2 election; leader of term 2")


@register("raft", "drop-all-votes")
def raft_drop_all(n: int = 5, f: int = 2) -> TestCase:
    fs = FilterSet([If(is_message_send() & is_message_type(REQUEST_VOTE_REPLY)).Then(drop_message())])
    sm = StateMachine()
    init = sm.builder()
    retry = init.on(is_message_send() & is_message_type(REQUEST_VOTE) & message_view(2), "Retried")
    retry.mark_success()
    retry.on(is_event_type(BECOME_LEADER), FAIL)
    init.on(is_event_type(BECOME_LEADER), FAIL)
    return TestCase("drop-all-votes", fs, sm, watchdogs=[election_safety_machine()],
                    description="every vote reply dropped: the election retries in a higher term")


__all__ = ["REGISTRY", "register", "lookup", "automata_for", "agreement_machine", "new_view_machine",
           "single_view_change_machine", "late_prepares_machine", "leader_machine"]
