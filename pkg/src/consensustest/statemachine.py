"""Event-driven assertion state machines.

Built with the builder pattern::

    sm = StateMachine()
    init = sm.builder()
    once = init.on(add_to_log("a", 0, 0), "DecidedOnce")
    once.mark_success()
    once.on(add_to_log("b", 0, 0), FAIL)

Each consumed event moves the machine along the first transition of the
current state whose condition holds; with no match it stays put.
"""
from __future__ import annotations

import json

from .dsl import Condition, MonitorContext
from .errors import DuplicateTransitionTarget
from .model import Event

INITIAL = "Initial"
SUCCESS = "Success"
FAIL = "Fail"


class State:
    def __init__(self, machine: "StateMachine", label: str):
        self.machine = machine
        self.label = label

    def on(self, cond: Condition, label: str) -> "State":
        return self.machine.add_transition(self.label, cond, label)

    def mark_success(self) -> "State":
        self.machine.mark_success(self.label)
        return self

    # capitalized builder aliases
    On = on
    MarkSuccess = mark_success

    def __repr__(self) -> str:
        return f"<State {self.label}>"


class StateMachine:
    """Initial, Success and Fail exist from the start; Fail is absorbing."""

    def __init__(self):
        self.transitions: dict[str, list[tuple[Condition, str]]] = {INITIAL: [], SUCCESS: [], FAIL: []}
        self.success_labels: set[str] = {SUCCESS}
        self.current = INITIAL
        self.steps = 0

    def builder(self) -> State:
        return State(self, INITIAL)

    Builder = builder

    def state(self, label: str) -> State:
        self.transitions.setdefault(label, [])
        return State(self, label)

    def add_transition(self, source: str, cond: Condition, target: str) -> State:
        if source == FAIL:
            raise DuplicateTransitionTarget("the Fail state has no outgoing transitions")
        out = self.transitions.setdefault(source, [])
        for existing, tgt in out:
            if tgt == target:
                if existing is cond:
                    return self.state(target)
                raise DuplicateTransitionTarget(f"{source} -> {target} already defined")
        out.append((cond, target))
        return self.state(target)

    def mark_success(self, label: str) -> None:
        if label == FAIL:
            raise ValueError("Fail can never be accepting")
        self.transitions.setdefault(label, [])
        self.success_labels.add(label)

    @property
    def labels(self) -> list[str]:
        return list(self.transitions)

    def step(self, e: Event, ctx: MonitorContext) -> "StateMachine":
        self.steps += 1
        if self.current == FAIL:
            return self
        for cond, target in self.transitions.get(self.current, ()):
            if cond(e, ctx):
                self.current = target
                break
        return self

    def is_accepting(self) -> bool:
        return self.current in self.success_labels

    @property
    def failed(self) -> bool:
        return self.current == FAIL

    def reset(self) -> None:
        self.current = INITIAL
        self.steps = 0

    def dump(self) -> str:
        return json.dumps({
            "states": self.labels,
            "success": sorted(self.success_labels),
            "transitions": [
                {"from": src, "to": tgt, "when": repr(c)}
                for src, outs in self.transitions.items() for c, tgt in outs
            ],
        }, sort_keys=True)


def step(sm: StateMachine, e: Event, ctx: MonitorContext) -> StateMachine:
    return sm.step(e, ctx)


def is_accepting(sm: StateMachine) -> bool:
    return sm.is_accepting()
