"""Match-action filters over (event, context).

Filters have the shape ``If(condition).Then(action, ...)`` and run first-match:
the first filter whose condition holds runs its actions, the rest are
skipped. Conditions are pure; only actions mutate the context.

Python spelling::

    If(is_message_type("Prepare") & is_message_to("p")).Then(drop_message())

The same filter in the declarative text form (see :func:`parse_filters`)::

    if IsMessageType("Prepare") and IsMessageTo("p") then DropMessage()
"""
from __future__ import annotations

import ast
import re
from typing import Callable, Iterable

from .errors import ActionFailure, FilterSyntaxError
from .model import RECEIVE, SEND, DEFAULT_CODEC, Event, Message


class MonitorContext:
    """Key-value monitor state seen by conditions, actions and assertions."""

    def __init__(self, vars: dict | None = None, codec=DEFAULT_CODEC, mint=None):
        self.counters: dict[str, int] = {}
        self.message_sets: dict[str, dict[int, Message]] = {}
        self.pool_view: dict[int, Message] = {}
        self.event_history: list[Event] = []
        self.blocked: set[int] = set()
        self.sm_state: str | None = None
        self.vars = dict(vars or {})
        self.codec = codec
        self._mint = mint

    def count(self, name: str) -> int:
        return self.counters.get(name, 0)

    def message_set(self, name: str) -> dict:
        return self.message_sets.get(name, {})

    def resolve(self, replica):
        """Replica arguments may name a context variable, e.g. ``"p"``."""
        if isinstance(replica, str):
            return self.vars[replica]
        return replica

    def new_message(self, sender: int, to: int, mtype: str, payload: dict) -> Message:
        """Construct a fictitious message with a fresh uid."""
        if self._mint is None:
            raise ActionFailure("context cannot mint messages outside a driver")
        m = self._mint(sender, to, mtype, payload)
        self.pool_view[m.uid] = m
        return m

    def snapshot(self) -> tuple:
        return (
            tuple(sorted(self.counters.items())),
            tuple(sorted((k, tuple(v)) for k, v in self.message_sets.items())),
            tuple(sorted(self.pool_view)),
            len(self.event_history),
            tuple(sorted(self.blocked)),
            self.sm_state,
            tuple(sorted(self.vars.items(), key=repr)),
        )


# -- conditions ------------------------------------------------------------

class Condition:
    def __init__(self, fn: Callable[[Event, MonitorContext], bool], name: str, args: tuple = ()):
        self.fn = fn
        self.name = name
        self.args = args

    def __call__(self, e: Event, ctx: MonitorContext) -> bool:
        return bool(self.fn(e, ctx))

    def and_(self, other: "Condition") -> "Condition":
        return Condition(lambda e, c: self(e, c) and other(e, c), "And", (self, other))

    def or_(self, other: "Condition") -> "Condition":
        return Condition(lambda e, c: self(e, c) or other(e, c), "Or", (self, other))

    def not_(self) -> "Condition":
        return Condition(lambda e, c: not self(e, c), "Not", (self,))

    __and__ = and_
    __or__ = or_
    __invert__ = not_

    def __repr__(self) -> str:
        if self.name == "And":
            return f"({self.args[0]!r} and {self.args[1]!r})"
        if self.name == "Or":
            return f"({self.args[0]!r} or {self.args[1]!r})"
        if self.name == "Not":
            return f"not {self.args[0]!r}"
        return f"{self.name}({', '.join(map(repr, self.args))})"


def condition(name: str):
    """Decorator turning ``fn(*args) -> predicate(e, ctx)`` into a Condition factory."""
    def wrap(factory):
        def make(*args):
            return Condition(factory(*args), name, args)
        make.__name__ = factory.__name__
        make.__doc__ = factory.__doc__
        CONDITIONS[name] = make
        return make
    return wrap


CONDITIONS: dict[str, Callable[..., Condition]] = {}
ACTIONS: dict[str, Callable[..., "Action"]] = {}


def _message(e: Event) -> Message | None:
    return e.message if e.kind in (SEND, RECEIVE) else None


@condition("IsEventType")
def is_event_type(t: str):
    return lambda e, ctx: e.type == t


@condition("IsMessageType")
def is_message_type(t: str):
    def pred(e, ctx):
        m = _message(e)
        return m is not None and m.mtype == t
    return pred


@condition("IsMessageSend")
def is_message_send():
    return lambda e, ctx: e.kind == SEND


@condition("IsMessageReceive")
def is_message_receive():
    return lambda e, ctx: e.kind == RECEIVE


@condition("IsMessageFrom")
def is_message_from(r):
    def pred(e, ctx):
        m = _message(e)
        return m is not None and m.sender == ctx.resolve(r)
    return pred


@condition("IsMessageTo")
def is_message_to(r):
    def pred(e, ctx):
        m = _message(e)
        return m is not None and m.to == ctx.resolve(r)
    return pred


@condition("MessageView")
def message_view(v):
    """Message carries view/round/term ``v`` according to the context codec."""
    def pred(e, ctx):
        m = _message(e)
        return m is not None and ctx.codec.view_of(m) == v
    return pred


@condition("MessageField")
def message_field(key: str, value):
    def pred(e, ctx):
        m = _message(e)
        return m is not None and m.fields.get(key) == value
    return pred


@condition("InState")
def in_state(label: str):
    """Gate a filter on the assertion machine's current state."""
    return lambda e, ctx: ctx.sm_state == label


@condition("Always")
def always():
    return lambda e, ctx: True


# -- actions ---------------------------------------------------------------

class Action:
    """``fn(e, ctx) -> messages``. ``blocks`` is the blocked flag the action
    asserts for a sent message: True (withhold), False (deliver) or None."""

    def __init__(self, fn, name: str, args: tuple = (), blocks: bool | None = None,
                 byzantine: bool = False, set_name: str | None = None):
        self.fn = fn
        self.name = name
        self.args = args
        self.blocks = blocks
        self.byzantine = byzantine
        self.set_name = set_name

    def __call__(self, e: Event, ctx: MonitorContext) -> list[Message]:
        return list(self.fn(e, ctx) or ())

    def __repr__(self) -> str:
        return f"{self.name}({', '.join(map(repr, self.args))})"


def deliver_message() -> Action:
    # receive events return nothing: there is no message left to deliver
    return Action(lambda e, ctx: [e.message] if e.kind == SEND else [], "DeliverMessage", blocks=False)


def drop_message() -> Action:
    return Action(lambda e, ctx: [], "DropMessage", blocks=True)


ACTIONS["DeliverMessage"] = deliver_message
ACTIONS["DropMessage"] = drop_message


class Count:
    def __init__(self, name: str):
        self.name = name

    def _cmp(self, op, label, v):
        return Condition(lambda e, ctx: op(ctx.count(self.name), v), f"Count({self.name!r}).{label}", (v,))

    def lt(self, v):
        return self._cmp(lambda a, b: a < b, "Lt", v)

    def gt(self, v):
        return self._cmp(lambda a, b: a > b, "Gt", v)

    def leq(self, v):
        return self._cmp(lambda a, b: a <= b, "Leq", v)

    def gte(self, v):
        return self._cmp(lambda a, b: a >= b, "Gte", v)

    def incr(self) -> Action:
        def run(e, ctx):
            ctx.counters[self.name] = ctx.count(self.name) + 1
            return []
        return Action(run, f"Count({self.name!r}).Incr")


class MessageSet:
    def __init__(self, name: str):
        self.name = name

    def contains(self) -> Condition:
        def pred(e, ctx):
            m = _message(e)
            return m is not None and m.uid in ctx.message_set(self.name)
        return Condition(pred, f"MessageSet({self.name!r}).Contains")

    def store(self) -> Action:
        def run(e, ctx):
            m = _message(e)
            if m is not None:
                ctx.message_sets.setdefault(self.name, {})[m.uid] = m
            return []
        return Action(run, f"MessageSet({self.name!r}).Store", blocks=True, set_name=self.name)

    def deliver_all(self) -> Action:
        def run(e, ctx):
            stored = ctx.message_sets.get(self.name)
            if not stored:
                return []
            out = list(stored.values())
            ctx.message_sets[self.name] = {}
            ctx.blocked.difference_update(m.uid for m in out)
            return out
        return Action(run, f"MessageSet({self.name!r}).DeliverAll", set_name=self.name)


def byzantine_action(name: str, transform: Callable[[Message, MonitorContext], tuple | None]) -> Action:
    """Replace a sent message by a forged copy.

    ``transform(m, ctx)`` returns ``(mtype, payload)`` for the forgery, or
    ``None`` to pass the message through unchanged. The original is blocked
    and the forgery is a fresh fictitious message with its own uid.
    """
    def run(e, ctx):
        if e.kind != SEND:
            return []
        out = transform(e.message, ctx)
        if out is None:
            return [e.message]
        mtype, payload = out
        return [ctx.new_message(e.message.sender, e.message.to, mtype, payload)]
    return Action(run, name, blocks=True, byzantine=True)


def register_action(name: str, factory: Callable[..., Action]) -> None:
    ACTIONS[name] = factory


def register_condition(name: str, factory: Callable[..., Condition]) -> None:
    CONDITIONS[name] = factory


# -- filters ---------------------------------------------------------------

class Filter:
    def __init__(self, cond: Condition, actions: Iterable[Action] = ()):
        self.condition = cond
        self.actions = list(actions)

    def Then(self, *actions: Action) -> "Filter":
        self.actions = list(actions)
        return self

    then = Then

    @property
    def kind(self) -> str:
        """Syntactic class used by the distance metric."""
        if any(a.byzantine for a in self.actions):
            return "byzantine"
        names = [a.name for a in self.actions]
        if any(n.endswith(".Store") for n in names):
            return "capture"
        if any(n.endswith(".DeliverAll") for n in names):
            return "release"
        if "DropMessage" in names:
            return "drop"
        return "unknown"

    @property
    def set_name(self) -> str | None:
        for a in self.actions:
            if a.set_name:
                return a.set_name
        return None

    def __repr__(self) -> str:
        return f"If({self.condition!r}).Then({', '.join(map(repr, self.actions))})"


def If(cond: Condition) -> Filter:
    return Filter(cond)


class FilterSet(list):
    def add_filter(self, f: Filter) -> "FilterSet":
        self.append(f)
        return self


def apply_filters(fs: Iterable[Filter], e: Event, ctx: MonitorContext):
    """Run the first matching filter; returns ``(matched, deliveries, blocked)``.

    ``blocked`` is only ever true for send events; the last action that takes
    a position on blocking wins. A message that the same filter also delivers
    is not blocked.
    """
    for f in fs:
        try:
            hit = f.condition(e, ctx)
        except Exception as exc:
            raise ActionFailure(f"condition {f.condition!r} raised {exc!r}") from exc
        if not hit:
            continue
        deliveries: dict[int, Message] = {}
        flag = None
        for a in f.actions:
            try:
                out = a(e, ctx)
            except ActionFailure:
                raise
            except Exception as exc:
                raise ActionFailure(f"action {a!r} raised {exc!r}") from exc
            for m in out:
                deliveries.setdefault(m.uid, m)
            if a.blocks is not None:
                flag = a.blocks
        blocked = bool(flag) and e.kind == SEND and e.uid not in deliveries
        if blocked:
            ctx.blocked.add(e.uid)
        return True, list(deliveries.values()), blocked
    return False, [], False


# -- declarative text form -------------------------------------------------

_METHODS = {
    "Count": {"Lt": "lt", "Gt": "gt", "Leq": "leq", "Gte": "gte", "Incr": "incr"},
    "MessageSet": {"Contains": "contains", "Store": "store", "DeliverAll": "deliver_all"},
}
_OBJECTS = {"Count": Count, "MessageSet": MessageSet}
_LINE = re.compile(r"^\s*if\s+(?P<cond>.+?)\s+then\s+(?P<actions>.+?)\s*$")


def _literal(node):
    try:
        return ast.literal_eval(node)
    except ValueError as exc:
        raise FilterSyntaxError(f"arguments must be literals: {ast.unparse(node)}") from exc


def _call(node, table):
    if not isinstance(node, ast.Call) or node.keywords:
        raise FilterSyntaxError(f"expected a call, got {ast.unparse(node)}")
    args = [_literal(a) for a in node.args]
    fn = node.func
    if isinstance(fn, ast.Name):
        if fn.id not in table:
            raise FilterSyntaxError(f"unknown name {fn.id!r}")
        return table[fn.id](*args)
    if isinstance(fn, ast.Attribute) and isinstance(fn.value, ast.Call) and isinstance(fn.value.func, ast.Name):
        obj_name = fn.value.func.id
        if obj_name not in _OBJECTS or fn.attr not in _METHODS[obj_name]:
            raise FilterSyntaxError(f"unknown method {obj_name}.{fn.attr}")
        obj = _OBJECTS[obj_name](*[_literal(a) for a in fn.value.args])
        return getattr(obj, _METHODS[obj_name][fn.attr])(*args)
    raise FilterSyntaxError(f"unsupported expression {ast.unparse(node)}")


def _cond(node) -> Condition:
    if isinstance(node, ast.BoolOp):
        parts = [_cond(v) for v in node.values]
        out = parts[0]
        for p in parts[1:]:
            out = out.and_(p) if isinstance(node.op, ast.And) else out.or_(p)
        return out
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not):
        return _cond(node.operand).not_()
    c = _call(node, CONDITIONS)
    if not isinstance(c, Condition):
        raise FilterSyntaxError(f"{ast.unparse(node)} is not a condition")
    return c


def parse_filter(line: str) -> Filter:
    match = _LINE.match(line)
    if not match:
        raise FilterSyntaxError(f"expected 'if <condition> then <actions>': {line!r}")
    try:
        cond_tree = ast.parse(match["cond"], mode="eval").body
        act_tree = ast.parse(match["actions"], mode="eval").body
    except SyntaxError as exc:
        raise FilterSyntaxError(str(exc)) from exc
    act_nodes = act_tree.elts if isinstance(act_tree, ast.Tuple) else [act_tree]
    actions = []
    for node in act_nodes:
        a = _call(node, ACTIONS)
        if not isinstance(a, Action):
            raise FilterSyntaxError(f"{ast.unparse(node)} is not an action")
        actions.append(a)
    return If(_cond(cond_tree)).Then(*actions)


def parse_filters(text: str) -> FilterSet:
    """One filter per line; blank lines and ``#`` comments are ignored."""
    fs = FilterSet()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            fs.add_filter(parse_filter(line))
    return fs


def isolate_node(r) -> Filter:
    """Drop every message to or from ``r``."""
    return If(is_message_to(r) | is_message_from(r)).Then(drop_message())
