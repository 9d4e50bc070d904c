"""Synchronous round engine for the complete bipartite network.

Every facility is linked to every client. In each round a node may put at
most one message on each of its links; a message is a small tag plus two
bounded integers. Messages sent in round t are visible to their receivers
only when those compute their round t+1 output.

Node programs are usually generators::

    def program(ctx):
        inbox = yield out_round_1     # messages received in round 1
        inbox = yield out_round_2
        ...
        return result

A plain ``None`` yield sends nothing. Sub-protocols compose with
``yield from``. Objects exposing ``step(round_no, inbox)`` are accepted too
(see :class:`NodeProgram`).

Payload columns are numpy arrays so that a node can address thousands of
receivers in one call; a broadcast is stored once and shared by all
receivers of the round.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

FACILITY = 0
CLIENT = 1
SIDE_NAME = ("F", "C")


class Kind(enum.IntEnum):
    PING = 1
    ACK = 2
    RADIUS = 3
    COUNT = 4
    GO = 5
    BREAK = 6
    ABORT = 7
    SHIFT = 8
    EDGE = 9
    LOAD = 10
    OFFSET = 11
    CONTINUE = 12
    STOP = 13
    CANDIDATE = 14
    DOMINATED = 15
    REMOVED = 16
    OPEN = 17
    OPENED = 18


_MAX_KIND = max(Kind)


class SimulationError(RuntimeError):
    pass


class BandwidthError(SimulationError):
    pass


@dataclass(frozen=True)
class Message:
    kind: int
    a: int = 0
    b: int = 0


_EMPTY_I64 = np.zeros(0, dtype=np.int64)


class Outbox:
    """Messages one node sends in one round."""

    __slots__ = ("_to", "_kind", "_a", "_b", "bcast")

    def __init__(self):
        self._to: list = []
        self._kind: list = []
        self._a: list = []
        self._b: list = []
        self.bcast: Message | None = None

    def send(self, to: int, kind: int, a: int = 0, b: int = 0) -> "Outbox":
        self._to.append(np.array([to], dtype=np.int64))
        self._kind.append(np.array([kind], dtype=np.int64))
        self._a.append(np.array([a], dtype=np.int64))
        self._b.append(np.array([b], dtype=np.int64))
        return self

    def send_many(self, to, kind: int, a=0, b=0) -> "Outbox":
        to = np.asarray(to, dtype=np.int64).reshape(-1)
        n = to.size
        if n == 0:
            return self
        self._to.append(to)
        self._kind.append(np.full(n, kind, dtype=np.int64))
        self._a.append(np.broadcast_to(np.asarray(a, dtype=np.int64), (n,)))
        self._b.append(np.broadcast_to(np.asarray(b, dtype=np.int64), (n,)))
        return self

    def broadcast(self, kind: int, a: int = 0, b: int = 0) -> "Outbox":
        if self.bcast is not None:
            raise BandwidthError("two broadcasts from one node in one round")
        self.bcast = Message(int(kind), int(a), int(b))
        return self

    def columns(self):
        if not self._to:
            return None
        if len(self._to) == 1:
            return self._to[0], self._kind[0], self._a[0], self._b[0]
        return (
            np.concatenate(self._to),
            np.concatenate(self._kind),
            np.concatenate(self._a),
            np.concatenate(self._b),
        )


def send(to: int, kind: int, a: int = 0, b: int = 0) -> Outbox:
    return Outbox().send(to, kind, a, b)


def send_many(to, kind: int, a=0, b=0) -> Outbox:
    return Outbox().send_many(to, kind, a, b)


def broadcast(kind: int, a: int = 0, b: int = 0) -> Outbox:
    return Outbox().broadcast(kind, a, b)


@dataclass(frozen=True)
class Batch:
    senders: np.ndarray
    kinds: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __len__(self):
        return int(self.senders.size)


EMPTY_BATCH = Batch(_EMPTY_I64, _EMPTY_I64, _EMPTY_I64, _EMPTY_I64)


class Inbox:
    """Messages delivered to one node at the end of a round, by sender id.

    ``direct`` holds point-to-point messages; ``bcast`` holds the broadcasts
    of the opposite side (shared between all receivers of that round).
    """

    __slots__ = ("direct", "bcast")

    def __init__(self, direct: Batch = EMPTY_BATCH, bcast: Batch = EMPTY_BATCH):
        self.direct = direct
        self.bcast = bcast

    def __len__(self):
        return len(self.direct) + len(self.bcast)

    def _merged(self) -> Batch:
        if not len(self.bcast):
            return self.direct
        if not len(self.direct):
            return self.bcast
        d, c = self.direct, self.bcast
        senders = np.concatenate([d.senders, c.senders])
        order = np.argsort(senders, kind="stable")
        return Batch(
            senders[order],
            np.concatenate([d.kinds, c.kinds])[order],
            np.concatenate([d.a, c.a])[order],
            np.concatenate([d.b, c.b])[order],
        )

    def messages(self) -> Iterator[tuple[int, Message]]:
        m = self._merged()
        for s, k, a, b in zip(m.senders.tolist(), m.kinds.tolist(), m.a.tolist(), m.b.tolist()):
            yield s, Message(k, a, b)

    def select(self, kind: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(senders, a, b) of all messages with the given tag, sorted by sender."""
        parts = []
        for batch in (self.direct, self.bcast):
            if len(batch):
                mask = batch.kinds == kind
                if mask.all():
                    parts.append((batch.senders, batch.a, batch.b))
                elif mask.any():
                    parts.append((batch.senders[mask], batch.a[mask], batch.b[mask]))
        if not parts:
            return _EMPTY_I64, _EMPTY_I64, _EMPTY_I64
        if len(parts) == 1:
            return parts[0]
        s = np.concatenate([p[0] for p in parts])
        order = np.argsort(s, kind="stable")
        return s[order], np.concatenate([p[1] for p in parts])[order], np.concatenate([p[2] for p in parts])[order]

    def first(self, kind: int | None = None) -> tuple[int, Message] | None:
        for s, m in self.messages():
            if kind is None or m.kind == kind:
                return s, m
        return None


EMPTY_INBOX = Inbox()


class NodeContext:
    """What a node knows about itself: side, index, network size, randomness."""

    __slots__ = ("side", "index", "n_f", "n_c", "_seed", "_rng", "shared")

    def __init__(self, side: int, index: int, n_f: int, n_c: int, seed: int, shared: dict):
        self.side = side
        self.index = index
        self.n_f = n_f
        self.n_c = n_c
        self._seed = seed
        self._rng = None
        # memo for pure local computations that many nodes repeat on identical input
        self.shared = shared

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            self._rng = np.random.default_rng([self._seed, self.side, self.index])
        return self._rng

    def random_int(self, k: int) -> int:
        """Uniform draw from {1, ..., k} on this node's private stream."""
        if k < 1:
            raise ValueError("range must be at least 1")
        return int(self.rng.integers(1, k + 1))

    @property
    def n_opposite(self) -> int:
        return self.n_c if self.side == FACILITY else self.n_f


class NodeProgram:
    """Step-function form of a node: ``step`` returns the outbox for round
    ``round_no`` given the inbox of the previous round, and sets ``done``
    (optionally ``result``) to halt."""

    done = False
    result = None

    def step(self, round_no: int, inbox: Inbox) -> Outbox | None:
        raise NotImplementedError


class _GeneratorNode(NodeProgram):
    def __init__(self, gen):
        self.gen = gen

    def step(self, round_no, inbox):
        try:
            if round_no == 1:
                return next(self.gen)
            return self.gen.send(inbox)
        except StopIteration as stop:
            self.done = True
            self.result = stop.value
            return None


class Transcript:
    """Line-per-message log ``round sender->receiver kind a b``; broadcasts
    are expanded to one line per receiver."""

    def __init__(self):
        self.lines: list[str] = []

    def record(self, round_no: int, side: int, sender: int, receivers, kind, a, b):
        src = f"{SIDE_NAME[side]}{sender}"
        dst = SIDE_NAME[1 - side]
        for r, k, x, y in zip(receivers, kind, a, b):
            self.lines.append(f"{round_no} {src}->{dst}{int(r)} {Kind(int(k)).name} {int(x)} {int(y)}")

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


@dataclass(frozen=True)
class RunOutcome:
    rounds: int
    cap_exceeded: bool


ProgramFactory = Callable[[NodeContext], object]


class Network:
    """Facilities ``0..n_f-1`` and clients ``0..n_c-1`` on the complete
    bipartite graph, each running its own program."""

    def __init__(
        self,
        n_f: int,
        n_c: int,
        facility_program: ProgramFactory,
        client_program: ProgramFactory,
        seed: int = 0,
        scalar_bound: int | None = None,
        transcript: Transcript | None = None,
    ):
        if n_f < 1 or n_c < 1:
            raise ValueError("network needs at least one node per side")
        self.n_f = n_f
        self.n_c = n_c
        self.seed = seed
        self.scalar_bound = default_scalar_bound(n_f, n_c) if scalar_bound is None else scalar_bound
        self.transcript = transcript
        self.round = 0
        self.messages_delivered = 0
        self.shared: dict = {}
        self.contexts = (
            [NodeContext(FACILITY, i, n_f, n_c, seed, self.shared) for i in range(n_f)],
            [NodeContext(CLIENT, j, n_f, n_c, seed, self.shared) for j in range(n_c)],
        )
        factories = (facility_program, client_program)
        self.programs: tuple[list[NodeProgram], list[NodeProgram]] = tuple(
            [_as_program(factories[side](ctx)) for ctx in self.contexts[side]] for side in (FACILITY, CLIENT)
        )
        # outboxes for the next round; computed one round ahead so a node
        # halts as soon as it has consumed its last inbox
        self._pending = self._advance(1, (None, None))

    # ------------------------------------------------------------ public

    @property
    def all_done(self) -> bool:
        return all(p.done for side in self.programs for p in side)

    def results(self, side: int) -> list:
        return [p.result for p in self.programs[side]]

    def node_random_int(self, side: int, index: int, k: int) -> int:
        return self.contexts[side][index].random_int(k)

    def run_round(self) -> "Network":
        inboxes = self._deliver(self._pending)
        self.round += 1
        self._pending = self._advance(self.round + 1, inboxes)
        return self

    def run_until(self, predicate: Callable[["Network"], bool], round_cap: int) -> RunOutcome:
        if round_cap <= 0:
            raise ValueError("round_cap must be positive")
        used = 0
        while not predicate(self):
            if used == round_cap:
                return RunOutcome(used, True)
            self.run_round()
            used += 1
        return RunOutcome(used, False)

    def run(self, round_cap: int = 1_000_000) -> int:
        outcome = self.run_until(lambda net: net.all_done, round_cap)
        if outcome.cap_exceeded:
            raise SimulationError(f"programs still running after {round_cap} rounds")
        return outcome.rounds

    # ---------------------------------------------------------- internals

    def _advance(self, round_no: int, inboxes) -> tuple[list, list]:
        pending = ([], [])
        for side in (FACILITY, CLIENT):
            side_inboxes = inboxes[side]
            out = pending[side]
            for idx, prog in enumerate(self.programs[side]):
                if prog.done:
                    out.append(None)
                    continue
                inbox = EMPTY_INBOX if side_inboxes is None else side_inboxes[idx]
                out.append(prog.step(round_no, inbox))
        return pending

    def _deliver(self, pending) -> tuple[list, list]:
        inboxes: list = [None, None]
        for side in (FACILITY, CLIENT):
            recv_side = 1 - side
            n_recv = self.n_c if side == FACILITY else self.n_f
            to_parts, from_parts, kind_parts, a_parts, b_parts = [], [], [], [], []
            b_senders, b_kinds, b_a, b_b = [], [], [], []
            for sender, box in enumerate(pending[side]):
                if box is None:
                    continue
                if not isinstance(box, Outbox):
                    raise SimulationError(f"{SIDE_NAME[side]}{sender} produced {type(box).__name__}, not an Outbox")
                cols = box.columns()
                if box.bcast is not None:
                    if cols is not None:
                        raise BandwidthError(
                            f"round {self.round + 1}: {SIDE_NAME[side]}{sender} broadcasts and sends direct messages"
                        )
                    m = box.bcast
                    self._check_payload(side, sender, np.array([m.kind]), np.array([m.a]), np.array([m.b]))
                    b_senders.append(sender)
                    b_kinds.append(m.kind)
                    b_a.append(m.a)
                    b_b.append(m.b)
                    if self.transcript is not None:
                        n = n_recv
                        self.transcript.record(
                            self.round + 1, side, sender, range(n), [m.kind] * n, [m.a] * n, [m.b] * n
                        )
                    continue
                if cols is None:
                    continue
                to, kind, a, b = cols
                self._check_links(side, sender, to, n_recv)
                self._check_payload(side, sender, kind, a, b)
                if self.transcript is not None:
                    order = np.argsort(to, kind="stable")
                    self.transcript.record(self.round + 1, side, sender, to[order], kind[order], a[order], b[order])
                to_parts.append(to)
                from_parts.append(np.full(to.size, sender, dtype=np.int64))
                kind_parts.append(kind)
                a_parts.append(a)
                b_parts.append(b)

            if b_senders:
                bcast = Batch(
                    np.array(b_senders, dtype=np.int64),
                    np.array(b_kinds, dtype=np.int64),
                    np.array(b_a, dtype=np.int64),
                    np.array(b_b, dtype=np.int64),
                )
                self.messages_delivered += len(b_senders) * n_recv
            else:
                bcast = EMPTY_BATCH

            side_inboxes = [None] * n_recv
            if to_parts:
                to = np.concatenate(to_parts)
                order = np.argsort(to, kind="stable")
                to = to[order]
                senders = np.concatenate(from_parts)[order]
                kinds = np.concatenate(kind_parts)[order]
                a = np.concatenate(a_parts)[order]
                b = np.concatenate(b_parts)[order]
                self.messages_delivered += int(to.size)
                bounds = np.searchsorted(to, np.arange(n_recv + 1))
                for r in np.flatnonzero(bounds[1:] > bounds[:-1]).tolist():
                    lo, hi = bounds[r], bounds[r + 1]
                    side_inboxes[r] = Inbox(Batch(senders[lo:hi], kinds[lo:hi], a[lo:hi], b[lo:hi]), bcast)
            shared_inbox = Inbox(EMPTY_BATCH, bcast) if len(bcast) else EMPTY_INBOX
            receivers = self.programs[recv_side]
            for r in range(n_recv):
                if side_inboxes[r] is None:
                    side_inboxes[r] = shared_inbox
                if receivers[r].done and len(side_inboxes[r]):
                    raise SimulationError(
                        f"round {self.round + 1}: message to halted node {SIDE_NAME[recv_side]}{r}"
                    )
            inboxes[recv_side] = side_inboxes
        return inboxes[0], inboxes[1]

    def _check_links(self, side, sender, to, n_recv):
        if to.min() < 0 or to.max() >= n_recv:
            raise SimulationError(f"{SIDE_NAME[side]}{sender} addressed a node outside the opposite side")
        if to.size > 1:
            counts = np.bincount(to, minlength=n_recv)
            if counts.max() > 1:
                r = int(np.argmax(counts))
                raise BandwidthError(
                    f"round {self.round + 1}: {SIDE_NAME[side]}{sender} sent {int(counts[r])} messages "
                    f"to {SIDE_NAME[1 - side]}{r}"
                )

    def _check_payload(self, side, sender, kind, a, b):
        if kind.min() < 1 or kind.max() > _MAX_KIND:
            raise SimulationError(f"{SIDE_NAME[side]}{sender} sent an unknown message tag")
        lo = min(int(a.min()), int(b.min()))
        hi = max(int(a.max()), int(b.max()))
        if lo < 0 or hi > self.scalar_bound:
            raise SimulationError(
                f"{SIDE_NAME[side]}{sender} sent a scalar outside [0, {self.scalar_bound}]: {lo if lo < 0 else hi}"
            )


def count_rounds(gen, counter: list):
    """Delegate to a sub-protocol generator, adding the rounds it spans to
    ``counter[0]``; returns the sub-protocol's result."""
    try:
        out = next(gen)
    except StopIteration as stop:
        return stop.value
    while True:
        counter[0] += 1
        inbox = yield out
        try:
            out = gen.send(inbox)
        except StopIteration as stop:
            return stop.value


def default_scalar_bound(n_f: int, n_c: int) -> int:
    return max(n_f * n_f, n_c, 48 * n_f)


def _as_program(obj) -> NodeProgram:
    if isinstance(obj, NodeProgram):
        return obj
    if hasattr(obj, "send") and hasattr(obj, "__next__"):
        return _GeneratorNode(obj)
    raise TypeError(f"not a node program: {obj!r}")
