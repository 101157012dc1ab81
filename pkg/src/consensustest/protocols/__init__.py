"""Built-in toy protocols."""
from __future__ import annotations

from ..dsl import register_action
from .pbft import PbftCodec, PbftReplica, PbftReplicaState, change_prepare_to_nil, pbft_automaton
from .raft import RaftCodec, RaftReplica, RaftReplicaState, raft_automaton

register_action("ChangePrepareToNil", change_prepare_to_nil)

__all__ = [
    "PbftCodec", "PbftReplica", "PbftReplicaState", "pbft_automaton",
    "RaftCodec", "RaftReplica", "RaftReplicaState", "raft_automaton",
]
