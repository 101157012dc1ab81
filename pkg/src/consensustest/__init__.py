"""Filter-driven testing of consensus protocol implementations.

Replicas are deterministic automata; a test case pairs match-action filters
with an assertion state machine, and a chain-partition priority scheduler
explores the message orders the filters leave open.
"""
from __future__ import annotations

from .driver import InProcessBackend, IterationOutcome, SuiteReport, TestCase, filter_distance, run_iteration, run_suite
from .dsl import (
    Count, FilterSet, If, MessageSet, MonitorContext, apply_filters, byzantine_action, deliver_message,
    drop_message, is_event_type, is_message_from, is_message_receive, is_message_send, is_message_to,
    is_message_type, isolate_node, message_view, parse_filters,
)
from .history import History, happens_before, history_of, is_prefix
from .model import Event, ExecutionTrace, Message, ReplicaAutomaton, run_synchronous
from .pctcp import ChainPartitionSchedule, hitting_bound, new_schedule
from .protocols import pbft_automaton, raft_automaton
from .replay import check_theorem, synthesize
from .statemachine import FAIL, INITIAL, SUCCESS, StateMachine

__version__ = "0.1.0"

__all__ = [
    "InProcessBackend", "IterationOutcome", "SuiteReport", "TestCase", "filter_distance", "run_iteration",
    "run_suite", "Count", "FilterSet", "If", "MessageSet", "MonitorContext", "apply_filters",
    "byzantine_action", "deliver_message", "drop_message", "is_event_type", "is_message_from",
    "is_message_receive", "is_message_send", "is_message_to", "is_message_type", "isolate_node",
    "message_view", "parse_filters", "History", "happens_before", "history_of", "is_prefix", "Event",
    "ExecutionTrace", "Message", "ReplicaAutomaton", "run_synchronous", "ChainPartitionSchedule",
    "hitting_bound", "new_schedule", "pbft_automaton", "raft_automaton", "check_theorem", "synthesize",
    "FAIL", "INITIAL", "SUCCESS", "StateMachine",
]
