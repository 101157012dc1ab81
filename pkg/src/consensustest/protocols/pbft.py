"""Toy PBFT replica automaton.

Normal case: the leader of view ``v`` (replica ``v mod n``) broadcasts
``PrePrepare(v, i, req)``; every replica that pre-prepares broadcasts
``Prepare``; with ``2f+1`` matching prepares (own included) it broadcasts
``Commit``; with ``2f+1`` matching commits it decides, emitting an internal
``AddToLog`` event. Broadcasts skip the sender, whose own vote is counted
locally.

View change: an armed timer fires a ``Timeout``; the replica moves to the
next view and broadcasts ``ViewChange``. The leader of that view broadcasts
``NewView`` once it holds ``2f`` view-change votes from others, then
re-proposes every undecided request. Reaching ``view_bound`` ends the run.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..dsl import Condition, register_condition
from ..errors import ConfigError
from ..model import TIMEOUT, Codec, Internal, ReplicaAutomaton, internal, send

PREPREPARE = "PrePrepare"
PREPARE = "Prepare"
COMMIT = "Commit"
VIEWCHANGE = "ViewChange"
NEWVIEW = "NewView"
ADD_TO_LOG = "AddToLog"
MESSAGE_TYPES = (PREPREPARE, PREPARE, COMMIT, VIEWCHANGE, NEWVIEW)


class PbftCodec(Codec):
    name = "pbft"
    view_field = "view"


@dataclass(frozen=True)
class PbftReplicaState:
    view: int = 0
    in_view_change: bool = False
    outbox: tuple = ()
    preprepared: frozenset = frozenset()   # (view, index, request)
    prepares: frozenset = frozenset()      # (view, index, request, sender)
    commits: frozenset = frozenset()       # (view, index, request, sender)
    prepared: frozenset = frozenset()      # (view, index)
    decided: frozenset = frozenset()       # (index, request)
    vc_votes: frozenset = frozenset()      # (view, sender)
    newview_sent: frozenset = frozenset()
    buffered: tuple = ()                   # (view, sender, mtype, sorted payload items)
    gave_up: bool = False
    final: bool = False
    view_leader: bool = False


class PbftReplica(ReplicaAutomaton):
    codec = PbftCodec()

    def __init__(self, replica: int, n: int, f: int, requests=("alpha",), view_bound: int = 3):
        super().__init__(replica)
        self.n = n
        self.f = f
        self.requests = tuple(requests)
        self.view_bound = view_bound
        self.quorum = 2 * f + 1

    def leader(self, view: int) -> int:
        return view % self.n

    def _others(self):
        return [r for r in range(self.n) if r != self.replica]

    def _broadcast(self, mtype: str, **payload) -> tuple:
        return tuple(send(r, mtype, **payload) for r in self._others())

    # -- automaton interface ---------------------------------------------

    def initial_state(self) -> PbftReplicaState:
        s = PbftReplicaState(view_leader=self.leader(0) == self.replica)
        if s.view_leader:
            s = self._propose(s, 0)
        return s

    def is_final(self, state: PbftReplicaState) -> bool:
        return state.final

    def timeout_rank(self, state: PbftReplicaState):
        if state.final or state.outbox or self._all_decided(state):
            return None
        return state.view

    def step(self, state: PbftReplicaState, message):
        if state.final:
            return None
        if message is None:
            if not state.outbox:
                return None
            head, rest = state.outbox[0], state.outbox[1:]
            return self._settle(replace(state, outbox=rest)), head
        if state.outbox:
            return None
        if message.mtype == TIMEOUT:
            return self._settle(self._timeout(state)), None
        return self._settle(self._handle(state, message.sender, message.mtype, message.fields)), None

    # -- helpers -----------------------------------------------------------

    def _all_decided(self, s: PbftReplicaState) -> bool:
        return len({i for i, _ in s.decided}) == len(self.requests)

    def _settle(self, s: PbftReplicaState) -> PbftReplicaState:
        if not s.outbox and (s.gave_up or self._all_decided(s)):
            return replace(s, final=True)
        return s

    def _propose(self, s: PbftReplicaState, view: int) -> PbftReplicaState:
        done = {i for i, _ in s.decided}
        for i, req in enumerate(self.requests):
            if i in done:
                continue
            s = replace(s, outbox=s.outbox + self._broadcast(PREPREPARE, view=view, index=i, request=req))
            s = self._preprepare(s, view, i, req)
        return s

    def _preprepare(self, s, view, index, req):
        s = replace(
            s,
            preprepared=s.preprepared | {(view, index, req)},
            prepares=s.prepares | {(view, index, req, self.replica)},
            outbox=s.outbox + self._broadcast(PREPARE, view=view, index=index, request=req),
        )
        return self._advance(s)

    def _advance(self, s: PbftReplicaState) -> PbftReplicaState:
        for (v, i, req) in sorted(s.preprepared):
            if v != s.view or s.in_view_change:
                continue
            if (v, i) not in s.prepared:
                votes = sum(1 for (pv, pi, preq, _) in s.prepares if (pv, pi, preq) == (v, i, req))
                if votes >= self.quorum:
                    s = replace(
                        s,
                        prepared=s.prepared | {(v, i)},
                        commits=s.commits | {(v, i, req, self.replica)},
                        outbox=s.outbox + self._broadcast(COMMIT, view=v, index=i, request=req),
                    )
            if (v, i) in s.prepared and i not in {di for di, _ in s.decided}:
                votes = sum(1 for (cv, ci, creq, _) in s.commits if (cv, ci, creq) == (v, i, req))
                if votes >= self.quorum:
                    s = replace(
                        s,
                        decided=s.decided | {(i, req)},
                        outbox=s.outbox + (Internal(internal(ADD_TO_LOG, request=req, view=v, index=i)),),
                    )
        return s

    def _handle(self, s: PbftReplicaState, sender: int, mtype: str, fields: dict) -> PbftReplicaState:
        view = fields.get("view")
        if mtype == VIEWCHANGE:
            s = replace(s, vc_votes=s.vc_votes | {(view, sender)})
            return self._maybe_new_view(s, view)
        if mtype == NEWVIEW:
            if sender == self.leader(view) and (view > s.view or (view == s.view and s.in_view_change)):
                return self._enter_view(s, view)
            return s
        if view < s.view:
            return s
        if view > s.view or s.in_view_change:
            item = (view, sender, mtype, tuple(sorted(fields.items())))
            return replace(s, buffered=tuple(sorted(set(s.buffered) | {item}, key=repr)))
        index, req = fields["index"], fields["request"]
        if mtype == PREPREPARE:
            if sender != self.leader(view) or any((v, i) == (view, index) for v, i, _ in s.preprepared):
                return s
            return self._preprepare(s, view, index, req)
        if mtype == PREPARE:
            return self._advance(replace(s, prepares=s.prepares | {(view, index, req, sender)}))
        if mtype == COMMIT:
            return self._advance(replace(s, commits=s.commits | {(view, index, req, sender)}))
        return s

    def _timeout(self, s: PbftReplicaState) -> PbftReplicaState:
        if self._all_decided(s):
            return s
        target = s.view + 1
        if target >= self.view_bound:
            return replace(s, gave_up=True)
        s = replace(
            s,
            view=target,
            in_view_change=True,
            view_leader=self.leader(target) == self.replica,
            vc_votes=s.vc_votes | {(target, self.replica)},
            outbox=s.outbox + self._broadcast(VIEWCHANGE, view=target),
        )
        return self._maybe_new_view(s, target)

    def _maybe_new_view(self, s: PbftReplicaState, view: int) -> PbftReplicaState:
        if self.leader(view) != self.replica or view in s.newview_sent or view < s.view:
            return s
        if view >= self.view_bound:
            return s
        others = {r for v, r in s.vc_votes if v == view and r != self.replica}
        if len(others) < 2 * self.f:
            return s
        s = replace(
            s,
            newview_sent=s.newview_sent | {view},
            vc_votes=s.vc_votes | {(view, self.replica)},
            outbox=s.outbox + self._broadcast(NEWVIEW, view=view),
        )
        s = replace(s, view=view, in_view_change=False, view_leader=True)
        s = self._propose(s, view)
        return self._replay_buffer(s)

    def _enter_view(self, s: PbftReplicaState, view: int) -> PbftReplicaState:
        s = replace(s, view=view, in_view_change=False, view_leader=self.leader(view) == self.replica)
        return self._replay_buffer(s)

    def _replay_buffer(self, s: PbftReplicaState) -> PbftReplicaState:
        ready = [b for b in s.buffered if b[0] == s.view]
        s = replace(s, buffered=tuple(b for b in s.buffered if b[0] > s.view))
        for _, sender, mtype, items in ready:
            s = self._handle(s, sender, mtype, dict(items))
        return s


def pbft_automaton(n: int = 4, f: int = 1, requests=("alpha",), view_bound: int = 3) -> list[PbftReplica]:
    """One automaton per replica."""
    if f < 0 or n < 3 * f + 1:
        raise ConfigError(f"PBFT needs n >= 3f+1 (n={n}, f={f})")
    if not requests:
        raise ConfigError("at least one request is required")
    return [PbftReplica(r, n, f, requests, view_bound) for r in range(n)]


# -- protocol-specific conditions -------------------------------------------

def _decision(e):
    return e.kind == "internal" and e.value is not None and e.value.name == ADD_TO_LOG


def add_to_log(request=None, view=None, index=None) -> Condition:
    """A decision event, optionally pinned to request/view/index."""
    def pred(e, ctx):
        if not _decision(e):
            return False
        v = e.value
        return ((request is None or v["request"] == request)
                and (view is None or v["view"] == view)
                and (index is None or v["index"] == index))
    return Condition(pred, "AddToLog", (request, view, index))


def conflicting_decision() -> Condition:
    """A decision at a (view, index) where an earlier event decided another request."""
    def pred(e, ctx):
        if not _decision(e):
            return False
        v = e.value
        for past in ctx.event_history:
            if _decision(past) and (past.value["view"], past.value["index"]) == (v["view"], v["index"]) \
                    and past.value["request"] != v["request"]:
                return True
        return False
    return Condition(pred, "ConflictingDecision")


def distinct_senders(mtype: str, view, at_least: int) -> Condition:
    """At least ``at_least`` replicas have sent ``mtype`` for ``view`` so far (this event included)."""
    def pred(e, ctx):
        senders = set()
        for past in list(ctx.event_history) + [e]:
            m = past.message
            if past.kind == "send" and m.mtype == mtype and m.fields.get("view") == view:
                senders.add(m.sender)
        return len(senders) >= at_least
    return Condition(pred, "DistinctSenders", (mtype, view, at_least))


def change_prepare_to_nil():
    from ..dsl import byzantine_action

    def forge(m, ctx):
        if m.mtype != PREPARE:
            return None
        payload = dict(m.fields)
        payload["request"] = None
        return PREPARE, payload
    return byzantine_action("ChangePrepareToNil", forge)


register_condition("AddToLog", add_to_log)
register_condition("ConflictingDecision", conflicting_decision)
register_condition("DistinctSenders", distinct_senders)
