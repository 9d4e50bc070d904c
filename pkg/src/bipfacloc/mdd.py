"""Message dissemination with duplicates: every client ends up holding the
union of the edge messages initially scattered (with arbitrary duplication)
over the clients.

Each iteration hashes the clients' messages onto facilities with a randomly
drawn member of a family of per-group cyclic shifts, lets facilities drop
duplicates, and spreads the survivors evenly back over the clients. Once at
most ``48 * n_f`` copies remain, they are funnelled through the facilities
and broadcast to everyone.

Messages are identified by their index ``u * n_f + v`` (0-based facilities,
``u < v``) in the universe of ``n_f ** 2`` slots; slot ``m`` belongs to group
``m // n_f``, whose cyclic shift is drawn by facility ``m // n_f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .congest import (
    CLIENT,
    FACILITY,
    Kind,
    Network,
    NodeContext,
    Outbox,
    Transcript,
    broadcast,
    send,
    send_many,
)

BREAK_FACTOR = 48


# ---------------------------------------------------------- hash family


def message_index(u: int, v: int, n_f: int) -> int:
    if not (0 <= u < v < n_f):
        raise ValueError(f"edge ({u}, {v}) is not canonical for {n_f} facilities")
    return u * n_f + v


def edge_of(index, n_f: int):
    return index // n_f, index % n_f


def group_of(index, n_f: int):
    return index // n_f


def hash_message(shifts, index, n_f: int):
    """Destination facility of message slot ``index`` under the given shifts.

    ``shifts[g]`` in ``{1..n_f}`` rotates group ``g``; a shift of ``n_f`` is
    the identity rotation. Works elementwise on arrays of indices.
    """
    shifts = np.asarray(shifts)
    return (index % n_f + shifts[index // n_f]) % n_f


def random_assignment(rng: np.random.Generator, n_f: int) -> np.ndarray:
    return rng.integers(1, n_f + 1, size=n_f)


def dissemination_cap(n_f: int, n_c: int) -> int:
    """Iteration budget max(7, ceil(7 log2 log2 min(n_f, n_c))), min clamped to 4."""
    m = max(4, min(n_f, n_c))
    return max(7, math.ceil(7 * math.log2(math.log2(m))))


def route_client_messages(
    held: np.ndarray, shifts: np.ndarray, n_f: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One client's sends for a hashing round.

    Returns ``(to, msgs, kept)``: destinations and messages to send (one per
    facility) and messages that found no free link and stay with the client.
    Among messages hashing to the same facility one is chosen uniformly at
    random; the others (leftovers), in index order, take the lowest-index
    facilities that receive nothing else from this client.
    """
    if held.size == 0:
        return held, held, held
    dest = hash_message(shifts, held, n_f)
    order = np.lexsort((rng.random(held.size), dest))
    sdest = dest[order]
    first = np.ones(held.size, dtype=bool)
    first[1:] = sdest[1:] != sdest[:-1]
    chosen = order[first]
    leftovers = np.sort(held[order[~first]])
    free = np.ones(n_f, dtype=bool)
    free[dest[chosen]] = False
    free_ids = np.flatnonzero(free)
    n_left = min(leftovers.size, free_ids.size)
    to = np.concatenate([dest[chosen], free_ids[:n_left]])
    msgs = np.concatenate([held[chosen], leftovers[:n_left]])
    return to, msgs, leftovers[n_left:]


def redistribution_targets(offset: int, count: int, n_c: int) -> np.ndarray:
    """Clients receiving a facility's ``count`` messages, starting after ``offset``."""
    return (offset + np.arange(count)) % n_c


# --------------------------------------------------------- node programs


@dataclass
class MddOutcome:
    success: bool
    iterations: int
    rounds: int
    messages: np.ndarray | None = None  # clients: final set on success


@dataclass
class MddLog:
    """Observer hooks for tests and statistics (never read by the protocol)."""

    held_at_check: list = field(default_factory=list)  # (iteration, client, count)
    received: list = field(default_factory=list)  # (iteration, client, count) after redistribution
    totals: list = field(default_factory=list)  # x_1's view of sum n_j per check


def facility_program(ctx: NodeContext, cap: int, log: MddLog | None = None):
    """Facility side of one dissemination. Returns an :class:`MddOutcome`."""
    n_f, n_c = ctx.n_f, ctx.n_c
    iteration = 0
    rounds = 0
    while True:
        # clients report their counts to x_1
        inbox = yield None
        out = None
        if ctx.index == 0:
            _, counts, _ = inbox.select(Kind.COUNT)
            total = int(counts.sum())
            if log is not None:
                log.totals.append(total)
            if total <= BREAK_FACTOR * n_f:
                per_client = np.zeros(n_c, dtype=np.int64)
                senders, counts, _ = inbox.select(Kind.COUNT)
                per_client[senders] = counts
                prefix = np.cumsum(per_client) - per_client
                load = -(-total // n_f)
                out = send_many(np.arange(n_c), Kind.BREAK, prefix, load)
            elif iteration >= cap:
                out = broadcast(Kind.ABORT)
            else:
                out = broadcast(Kind.GO)
        inbox = yield out
        # y_1 relays the decision
        inbox = yield None
        rounds += 3
        _, msg = inbox.first()
        if msg.kind == Kind.ABORT:
            return MddOutcome(False, iteration, rounds)
        if msg.kind == Kind.BREAK:
            load = msg.a
            got = []
            for _ in range(load):
                inbox = yield None
                _, u, v = inbox.select(Kind.EDGE)
                got.append(u * n_f + v)
            held = np.unique(np.concatenate(got)) if got else np.zeros(0, dtype=np.int64)
            for r in range(load):
                out = None
                if r < held.size:
                    out = broadcast(Kind.EDGE, held[r] // n_f, held[r] % n_f)
                inbox = yield out
            rounds += 2 * load
            return MddOutcome(True, iteration, rounds)
        assert msg.kind == Kind.GO
        # draw this facility's shift of the hash function
        inbox = yield broadcast(Kind.SHIFT, ctx.random_int(n_f))
        # clients route their messages
        inbox = yield None
        _, u, v = inbox.select(Kind.EDGE)
        held = np.unique(u * n_f + v)
        # report distinct count to y_1, receive the start offset
        inbox = yield send(0, Kind.COUNT, held.size)
        inbox = yield None
        _, msg = inbox.first(Kind.OFFSET)
        to = redistribution_targets(msg.a, held.size, n_c)
        inbox = yield send_many(to, Kind.EDGE, held // n_f, held % n_f)
        rounds += 5
        iteration += 1


def client_program(ctx: NodeContext, held: np.ndarray, cap: int, log: MddLog | None = None):
    """Client side of one dissemination starting from ``held`` (message indices)."""
    n_f, n_c = ctx.n_f, ctx.n_c
    held = np.unique(np.asarray(held, dtype=np.int64))
    iteration = 0
    rounds = 0
    while True:
        if log is not None:
            log.held_at_check.append((iteration, ctx.index, held.copy()))
        inbox = yield send(0, Kind.COUNT, held.size)
        inbox = yield None
        _, msg = inbox.first()
        relay = None
        if ctx.index == 0:
            relay = broadcast(msg.kind, msg.b if msg.kind == Kind.BREAK else 0)
        inbox = yield relay
        rounds += 3
        if msg.kind == Kind.ABORT:
            return MddOutcome(False, iteration, rounds)
        if msg.kind == Kind.BREAK:
            offset, load = msg.a, msg.b
            # global slot p = offset + t goes to facility p mod n_f in spread round p div n_f
            slots = offset + np.arange(held.size)
            spread_round = slots // n_f
            for r in range(load):
                pick = spread_round == r
                out = None
                if pick.any():
                    out = send_many(slots[pick] % n_f, Kind.EDGE, held[pick] // n_f, held[pick] % n_f)
                inbox = yield out
            final = []
            for _ in range(load):
                inbox = yield None
                _, u, v = inbox.select(Kind.EDGE)
                final.append((u, v))
            rounds += 2 * load
            return MddOutcome(True, iteration, rounds, _final_union(ctx, final, n_f))
        assert msg.kind == Kind.GO
        inbox = yield None
        senders, shift_vals, _ = inbox.select(Kind.SHIFT)
        shifts = np.empty(n_f, dtype=np.int64)
        shifts[senders] = shift_vals
        to, msgs, held = route_client_messages(held, shifts, n_f, ctx.rng)
        out = send_many(to, Kind.EDGE, msgs // n_f, msgs % n_f) if to.size else None
        inbox = yield out
        inbox = yield None
        out = None
        if ctx.index == 0:
            senders, counts, _ = inbox.select(Kind.COUNT)
            b = np.zeros(n_f, dtype=np.int64)
            b[senders] = counts
            offsets = (np.cumsum(b) - b) % n_c
            out = send_many(np.arange(n_f), Kind.OFFSET, offsets)
        inbox = yield out
        inbox = yield None
        _, u, v = inbox.select(Kind.EDGE)
        if log is not None:
            log.received.append((iteration, ctx.index, int(u.size)))
        held = np.union1d(held, u * n_f + v)
        rounds += 5
        iteration += 1


def _final_union(ctx: NodeContext, parts: list, n_f: int) -> np.ndarray:
    # all clients receive the very same broadcast arrays; dedupe them once
    key = tuple(id(x) for pair in parts for x in pair)
    memo = ctx.shared.setdefault("mdd-final", {})
    hit = memo.get(key)
    if hit is None:
        if parts:
            msgs = np.unique(np.concatenate([u * n_f + v for u, v in parts]))
        else:
            msgs = np.zeros(0, dtype=np.int64)
        memo.clear()
        # keep the arrays alive so their ids stay unique while the entry exists
        memo[key] = hit = (parts, msgs)
    return hit[1]


# ------------------------------------------------------------ standalone


@dataclass
class DisseminationResult:
    success: bool
    iterations_used: int
    rounds_used: int
    initial_total_copies: int
    messages: list  # per client final message arrays (None on timeout)

    def stats(self) -> dict:
        return {
            "iterations_used": self.iterations_used,
            "rounds_used": self.rounds_used,
            "initial_total_copies": self.initial_total_copies,
            "success": self.success,
        }


def disseminate(
    witness_sets,
    n_f: int,
    seed: int = 0,
    cap: int | None = None,
    transcript: Transcript | None = None,
    log: MddLog | None = None,
) -> DisseminationResult:
    """Run the protocol on a fresh network; ``witness_sets[j]`` lists the
    message indices initially held by client ``j``."""
    sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in witness_sets]
    n_c = len(sets)
    if cap is None:
        cap = dissemination_cap(n_f, n_c)
    for s in sets:
        if s.size and (s.min() < 0 or s.max() >= n_f * n_f):
            raise ValueError("message index outside the universe")
    net = Network(
        n_f,
        n_c,
        lambda ctx: facility_program(ctx, cap, log if ctx.index == 0 else None),
        lambda ctx: client_program(ctx, sets[ctx.index], cap, log),
        seed=seed,
        transcript=transcript,
    )
    rounds = net.run()
    outcomes = net.results(CLIENT)
    f_outcomes = net.results(FACILITY)
    success = outcomes[0].success
    assert all(o.success == success for o in outcomes + f_outcomes)
    assert all(o.rounds == rounds for o in outcomes + f_outcomes)
    return DisseminationResult(
        success=success,
        iterations_used=outcomes[0].iterations,
        rounds_used=rounds,
        initial_total_copies=int(sum(s.size for s in sets)),
        messages=[o.messages for o in outcomes] if success else None,
    )
