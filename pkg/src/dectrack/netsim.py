"""Synchronous round-based message passing restricted to graph neighbors.

Every decentralized algorithm in the package talks through :func:`run_rounds`.
A robot step only ever sees its own state and the messages delivered to it;
delivery happens at round boundaries and only along edges of the graph snapshot
bound to the exchange.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def freeze(payload):
    """Read-only copy of a message payload so receivers cannot mutate the sender."""
    if isinstance(payload, np.ndarray):
        out = payload.copy()
        out.setflags(write=False)
        return out
    if isinstance(payload, dict):
        return {k: freeze(v) for k, v in payload.items()}
    if isinstance(payload, (list, tuple)):
        return tuple(freeze(v) for v in payload)
    return payload


def payload_size(payload):
    """Approximate wire size in bytes (8 per float/int scalar)."""
    if payload is None:
        return 0
    if isinstance(payload, np.ndarray):
        return int(payload.nbytes)
    if isinstance(payload, dict):
        return sum(payload_size(v) for v in payload.values())
    if isinstance(payload, (list, tuple)):
        return sum(payload_size(v) for v in payload)
    if isinstance(payload, (bool, int, float, np.floating, np.integer)):
        return 8
    if hasattr(payload, "__dataclass_fields__"):
        return sum(payload_size(getattr(payload, k)) for k in payload.__dataclass_fields__)
    return 8


@dataclass
class MessageLog:
    """Per-delivery record ``(round, src, dst, type, size)`` plus running totals."""
    keep_entries: bool = False
    entries: list = field(default_factory=list)
    count: int = 0
    bytes: int = 0
    by_type: dict = field(default_factory=dict)

    def record(self, rnd, src, dst, kind, size):
        self.count += 1
        self.bytes += size
        c, b = self.by_type.get(kind, (0, 0))
        self.by_type[kind] = (c + 1, b + size)
        if self.keep_entries:
            self.entries.append((rnd, src, dst, kind, size))

    def snapshot(self):
        return self.count, self.bytes

    def dump_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rnd, src, dst, kind, size in self.entries:
                fh.write(json.dumps({"round": rnd, "src": src, "dst": dst,
                                     "type": kind, "size": size}) + "\n")


@dataclass
class RoundResult:
    states: list
    rounds: int
    converged: bool
    last_inbox: list


class Network:
    """Neighbor-only fabric bound to one graph snapshot.

    ``neighbors`` is a sequence of neighbor-index tuples. ``adjacency`` is kept
    only so the message log can be audited against edge weights.
    """

    def __init__(self, neighbors, adjacency=None, log=None):
        self.neighbors = tuple(tuple(nb) for nb in neighbors)
        self.adjacency = adjacency
        self.log = log if log is not None else MessageLog()
        self._round = 0

    @classmethod
    def from_graph(cls, graph, log=None):
        return cls(graph.neighbors, graph.adjacency, log)

    @property
    def n(self):
        return len(self.neighbors)

    def deliver(self, outboxes, kind):
        """Broadcast each robot's outbox to its neighbors; returns per-robot inboxes."""
        self._round += 1
        inboxes = [dict() for _ in range(self.n)]
        for src, msg in enumerate(outboxes):
            if msg is None:
                continue
            frozen = freeze(msg)
            size = payload_size(msg)
            for dst in self.neighbors[src]:
                if src not in self.neighbors[dst]:
                    raise RuntimeError(f"asymmetric neighbor sets at {src}->{dst}")
                inboxes[dst][src] = frozen
                self.log.record(self._round, src, dst, kind, size)
        return inboxes

    def exchange(self, messages, kind):
        """One-shot broadcast of ``messages`` (one per robot)."""
        return self.deliver(messages, kind)


def run_rounds(network, states, step, announce, halt=None, max_rounds=100, kind="msg",
               order=None):
    """Run synchronous rounds until every robot reports convergence.

    ``announce(i, state)`` builds robot i's first outgoing message.
    ``step(i, state, inbox)`` returns ``(new_state, outbox)`` and must be pure.
    ``halt(i, old_state, new_state)`` is the per-robot convergence predicate; the
    run stops after the first round in which it holds for all robots, or after
    ``max_rounds``. Exhausting the cap is reported, not raised.
    With ``halt=None`` exactly ``max_rounds`` rounds are run.
    ``order`` permutes the evaluation order within a round (results must not change).
    """
    n = network.n
    states = list(states)
    outboxes = [announce(i, states[i]) for i in range(n)]
    order = list(range(n)) if order is None else list(order)
    inboxes = [dict() for _ in range(n)]
    for rnd in range(1, max_rounds + 1):
        inboxes = network.deliver(outboxes, kind)
        new_states = [None] * n
        new_out = [None] * n
        for i in order:
            new_states[i], new_out[i] = step(i, states[i], inboxes[i])
        done = halt is not None and all(halt(i, states[i], new_states[i]) for i in range(n))
        states, outboxes = new_states, new_out
        if done:
            return RoundResult(states, rnd, True, inboxes)
    if halt is None:
        return RoundResult(states, max_rounds, True, inboxes)
    log.debug("%s: round cap %d reached without convergence", kind, max_rounds)
    return RoundResult(states, max_rounds, False, inboxes)


def flood_extrema(network, values, rounds=None, kind="extrema"):
    """Min/max consensus by flooding; exact after ``diameter`` rounds (N - 1 suffices)."""
    start = [(np.asarray(v, float), np.asarray(v, float)) for v in values]
    rounds = max(network.n - 1, 1) if rounds is None else rounds

    def step(i, state, inbox):
        lo, hi = state
        for other_lo, other_hi in inbox.values():
            lo = np.minimum(lo, other_lo)
            hi = np.maximum(hi, other_hi)
        return (lo, hi), (lo, hi)

    res = run_rounds(network, start, step, lambda i, s: s, max_rounds=rounds, kind=kind)
    return [s[0] for s in res.states], [s[1] for s in res.states]
