"""Toy Raft leader election plus single-entry replication.

A replica whose logical timer fires becomes candidate for the next term and
broadcasts ``RequestVote``. Votes are granted first-come per term. With a
majority (own vote included) the candidate becomes leader, emits an internal
``BecomeLeader`` event and broadcasts ``AppendEntries`` carrying one entry.
Followers append and acknowledge, then stop; the leader commits once a
majority holds the entry. Only the candidate designated for the next term by
``election_order`` has an armed timer, so elections never split by accident.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..errors import ConfigError
from ..model import TIMEOUT, Codec, Internal, ReplicaAutomaton, internal, send

REQUEST_VOTE = "RequestVote"
REQUEST_VOTE_REPLY = "RequestVoteReply"
APPEND_ENTRIES = "AppendEntries"
APPEND_ENTRIES_REPLY = "AppendEntriesReply"
BECOME_LEADER = "BecomeLeader"
COMMIT = "Commit"
MESSAGE_TYPES = (REQUEST_VOTE, REQUEST_VOTE_REPLY, APPEND_ENTRIES, APPEND_ENTRIES_REPLY)

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"


class RaftCodec(Codec):
    name = "raft"
    view_field = "term"


@dataclass(frozen=True)
class RaftReplicaState:
    term: int = 0
    role: str = FOLLOWER
    voted_for: int | None = None
    votes: frozenset = frozenset()
    log: tuple = ()            # (term, value)
    acks: frozenset = frozenset()
    commit_index: int = -1
    leader_known: bool = False
    outbox: tuple = ()
    replicated: bool = False   # follower holds the leader's entry
    gave_up: bool = False
    final: bool = False


class RaftReplica(ReplicaAutomaton):
    codec = RaftCodec()

    def __init__(self, replica: int, n: int, election_order=(0,), term_bound: int = 3, entry: str = "x"):
        super().__init__(replica)
        self.n = n
        self.election_order = tuple(election_order)
        self.term_bound = term_bound
        self.entry = entry
        self.majority = n // 2 + 1

    def candidate_for(self, term: int) -> int:
        return self.election_order[(term - 1) % len(self.election_order)]

    def _broadcast(self, mtype: str, **payload) -> tuple:
        return tuple(send(r, mtype, **payload) for r in range(self.n) if r != self.replica)

    def initial_state(self) -> RaftReplicaState:
        return RaftReplicaState()

    def is_final(self, state: RaftReplicaState) -> bool:
        return state.final

    def timeout_rank(self, state: RaftReplicaState):
        if state.final or state.outbox or state.role == LEADER or state.leader_known:
            return None
        if self.candidate_for(state.term + 1) != self.replica:
            return None
        return state.term

    def step(self, state: RaftReplicaState, message):
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

    def _settle(self, s: RaftReplicaState) -> RaftReplicaState:
        done = s.gave_up or s.replicated or (s.role == LEADER and s.commit_index >= 0)
        if not s.outbox and done:
            return replace(s, final=True)
        return s

    def _new_term(self, s: RaftReplicaState, term: int) -> RaftReplicaState:
        return replace(s, term=term, role=FOLLOWER, voted_for=None, votes=frozenset(), leader_known=False)

    def _timeout(self, s: RaftReplicaState) -> RaftReplicaState:
        target = s.term + 1
        if target > self.term_bound:
            return replace(s, gave_up=True)
        s = self._new_term(s, target)
        s = replace(s, role=CANDIDATE, voted_for=self.replica, votes=frozenset({self.replica}),
                    outbox=self._broadcast(REQUEST_VOTE, term=target))
        return self._maybe_lead(s)

    def _maybe_lead(self, s: RaftReplicaState) -> RaftReplicaState:
        if s.role != CANDIDATE or len(s.votes) < self.majority:
            return s
        return replace(
            s,
            role=LEADER,
            leader_known=True,
            log=s.log + ((s.term, self.entry),),
            acks=frozenset({self.replica}),
            outbox=s.outbox + (Internal(internal(BECOME_LEADER, term=s.term)),)
            + self._broadcast(APPEND_ENTRIES, term=s.term, entry=self.entry),
        )

    def _handle(self, s: RaftReplicaState, sender: int, mtype: str, fields: dict) -> RaftReplicaState:
        term = fields.get("term", 0)
        if term > s.term:
            s = self._new_term(s, term)
        if mtype == REQUEST_VOTE:
            grant = term == s.term and s.role == FOLLOWER and s.voted_for in (None, sender)
            if grant:
                s = replace(s, voted_for=sender)
            return replace(s, outbox=s.outbox + (send(sender, REQUEST_VOTE_REPLY, term=s.term, granted=grant),))
        if mtype == REQUEST_VOTE_REPLY:
            if s.role == CANDIDATE and term == s.term and fields.get("granted"):
                s = self._maybe_lead(replace(s, votes=s.votes | {sender}))
            return s
        if mtype == APPEND_ENTRIES:
            ok = term == s.term and s.role != LEADER
            if ok:
                s = replace(s, leader_known=True, log=s.log + ((term, fields["entry"]),), replicated=True)
            return replace(s, outbox=s.outbox + (send(sender, APPEND_ENTRIES_REPLY, term=s.term, success=ok),))
        if mtype == APPEND_ENTRIES_REPLY:
            if s.role == LEADER and term == s.term and fields.get("success"):
                s = replace(s, acks=s.acks | {sender})
                if len(s.acks) >= self.majority and s.commit_index < 0:
                    s = replace(s, commit_index=0,
                                outbox=s.outbox + (Internal(internal(COMMIT, term=s.term, index=0)),))
            return s
        return s


def raft_automaton(n: int = 5, election_order=(0,), term_bound: int = 3) -> list[RaftReplica]:
    if n < 3 or n % 2 == 0:
        raise ConfigError(f"Raft needs an odd n >= 3, got {n}")
    if not election_order or any(not 0 <= r < n for r in election_order):
        raise ConfigError(f"election order {election_order!r} names unknown replicas")
    return [RaftReplica(r, n, election_order, term_bound) for r in range(n)]
