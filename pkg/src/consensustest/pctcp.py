"""Chain-partition priority scheduler for message delivery (PCTCP).

Messages are registered as they are sent, together with their causal
predecessors, and inserted greedily into causally ordered chains. Each chain
gets a random priority; ``depth - 1`` change points drawn from ``1..n_bound``
demote the chain of the message delivered at that step to a reserved low
priority. Delivery always picks the highest-priority chain that has an
enabled message.

Randomness comes from a PCG64 generator seeded through ``SeedSequence(seed)``
and split with ``spawn(2)``: child 0 drives chain priorities, child 1 draws
the change points.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import DuplicateMessage, InvalidDepth, OutOfOrderNotification, UnknownPredecessor


class ChainPartitionSchedule:
    def __init__(self, seed: int, n_bound: int, depth: int):
        if depth < 1:
            raise InvalidDepth(f"depth must be >= 1, got {depth}")
        if n_bound < depth:
            raise InvalidDepth(f"n_bound ({n_bound}) must be >= depth ({depth})")
        self.rng_seed = seed
        self.n_bound = n_bound
        self.depth = depth
        prio_seq, change_seq = np.random.SeedSequence(seed).spawn(2)
        self._prio_rng = np.random.Generator(np.random.PCG64(prio_seq))
        change_rng = np.random.Generator(np.random.PCG64(change_seq))
        picks = change_rng.choice(n_bound, size=depth - 1, replace=False) + 1
        self.change_points = [int(x) for x in picks]
        self.chains: list[list] = []
        self.priorities: dict[int, float] = {}
        self.chain_of: dict = {}
        self.delivered: list = []
        self.delivered_count = 0
        self._delivered_set: set = set()
        self._pending = None

    @property
    def width_estimate(self) -> int:
        return len(self.chains)

    def _fresh_priority(self) -> float:
        # reserved low priorities are 1..depth-1; fresh ones live in [depth, depth+1)
        while True:
            p = self.depth + float(self._prio_rng.random())
            if p not in self.priorities.values():
                return p

    def register_message(self, uid, causal_predecessors: Iterable = ()) -> "ChainPartitionSchedule":
        if uid in self.chain_of:
            raise DuplicateMessage(uid)
        preds = set(causal_predecessors)
        unknown = [p for p in preds if p not in self.chain_of]
        if unknown:
            raise UnknownPredecessor(unknown)
        for c, chain in enumerate(self.chains):
            if chain[-1] in preds:
                chain.append(uid)
                self.chain_of[uid] = c
                return self
        self.chains.append([uid])
        c = len(self.chains) - 1
        self.chain_of[uid] = c
        self.priorities[c] = self._fresh_priority()
        return self

    def next_delivery(self, enabled_uids: Iterable):
        enabled = set(enabled_uids)
        if not enabled:
            self._pending = None
            return None
        order = sorted(range(len(self.chains)), key=lambda c: -self.priorities[c])
        for c in order:
            for uid in self.chains[c]:
                if uid in enabled and uid not in self._delivered_set:
                    self._pending = uid
                    return uid
        self._pending = None
        return None

    def notify_delivered(self, uid) -> "ChainPartitionSchedule":
        if uid != self._pending:
            raise OutOfOrderNotification(f"expected {self._pending!r}, got {uid!r}")
        self._pending = None
        self.delivered.append(uid)
        self._delivered_set.add(uid)
        self.delivered_count += 1
        for k, point in enumerate(self.change_points, start=1):
            if point == self.delivered_count:
                self.priorities[self.chain_of[uid]] = float(k)
        return self

    def dump(self) -> dict:
        return {
            "seed": self.rng_seed,
            "n_bound": self.n_bound,
            "depth": self.depth,
            "change_points": list(self.change_points),
            "chains": [list(c) for c in self.chains],
            "priorities": [self.priorities[c] for c in range(len(self.chains))],
            "delivered": list(self.delivered),
        }


def new_schedule(seed: int, n_bound: int, depth: int) -> ChainPartitionSchedule:
    return ChainPartitionSchedule(seed, n_bound, depth)


class UniformRandomSchedule:
    """Baseline: deliver a uniformly random enabled message. Same interface."""

    def __init__(self, seed: int, n_bound: int = 0, depth: int = 1):
        self.rng_seed = seed
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self.registered: list = []
        self.delivered: list = []
        self._pending = None

    def register_message(self, uid, causal_predecessors=()):
        self.registered.append(uid)
        return self

    def next_delivery(self, enabled_uids):
        pick = sorted(enabled_uids)
        if not pick:
            self._pending = None
            return None
        self._pending = pick[int(self._rng.integers(len(pick)))]
        return self._pending

    def notify_delivered(self, uid):
        if uid != self._pending:
            raise OutOfOrderNotification(f"expected {self._pending!r}, got {uid!r}")
        self._pending = None
        self.delivered.append(uid)
        return self

    def dump(self) -> dict:
        return {"seed": self.rng_seed, "strategy": "uniform", "delivered": list(self.delivered)}


def hitting_bound(width: int, n: int, depth: int) -> float:
    return 1.0 / (width ** 2 * n ** (depth - 1))
