"""2-ruling set of the facility overlay graph by a random walk over sampling
probabilities.

Each iteration samples candidate facilities with probability
``p_i = 1 / (8 * n_f ** (2 ** -i))``, disseminates the overlay edges among
candidates to all clients, and, if dissemination finishes within its budget,
lets every client compute the same greedy MIS of the candidate subgraph.
The MIS joins the ruling set and candidates plus their neighbours leave the
graph; success moves the walk to the next state, a timeout moves it back.

Overlay edges exist only as witness records held by clients; a record is the
message index ``u * n_f + v`` of the edge (``u < v``).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import mdd
from .congest import (
    CLIENT,
    FACILITY,
    Kind,
    Network,
    NodeContext,
    Transcript,
    broadcast,
    send,
    send_many,
)
from .instance import Violation

BERNOULLI_GRID = 1 << 53


# ---------------------------------------------------------------- overlay


@dataclass
class OverlayGraph:
    n_f: int
    witnesses: list  # per client: sorted unique int64 array of edge indices
    active: np.ndarray = None  # per facility

    def __post_init__(self):
        self.witnesses = [np.unique(np.asarray(w, dtype=np.int64)) for w in self.witnesses]
        if self.active is None:
            self.active = np.ones(self.n_f, dtype=bool)
        for w in self.witnesses:
            if w.size:
                u, v = w // self.n_f, w % self.n_f
                if not np.all(u < v):
                    raise ValueError("witness records must be canonical edges u < v")

    @property
    def n_c(self) -> int:
        return len(self.witnesses)

    def edge_indices(self) -> np.ndarray:
        """Logical edge set: union of witness records between active facilities."""
        if not self.witnesses:
            return np.zeros(0, dtype=np.int64)
        allw = np.unique(np.concatenate(self.witnesses))
        u, v = allw // self.n_f, allw % self.n_f
        return allw[self.active[u] & self.active[v]]

    def edges(self) -> set[tuple[int, int]]:
        idx = self.edge_indices()
        return set(zip((idx // self.n_f).tolist(), (idx % self.n_f).tolist()))

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_f)]
        for u, v in self.edges():
            adj[u].append(v)
            adj[v].append(u)
        return adj

    @classmethod
    def from_edges(cls, n_f: int, n_c: int, edges: Iterable[tuple[int, int]], rng=None, max_witnesses: int = 1):
        """Overlay whose edges are each witnessed by 1..max_witnesses random clients
        (client ``(u + v) % n_c`` when no generator is given)."""
        recs: list[list[int]] = [[] for _ in range(n_c)]
        for u, v in edges:
            u, v = min(u, v), max(u, v)
            m = u * n_f + v
            if rng is None:
                recs[(u + v) % n_c].append(m)
            else:
                k = int(rng.integers(1, max_witnesses + 1))
                for j in rng.choice(n_c, size=min(k, n_c), replace=False):
                    recs[int(j)].append(m)
        return cls(n_f, recs)


# ------------------------------------------------------------ walk states


def max_state(n_f: int) -> int:
    return math.ceil(math.log2(math.log2(max(4, n_f)))) + 1


def join_probability(i: int, n_f: int) -> float:
    """1 / (8 * n_f ** (2 ** -i)); the root is taken by ``i`` square roots."""
    x = float(n_f)
    for _ in range(i):
        x = math.sqrt(x)
    return 1.0 / (8.0 * x)


def level_bound(j: int, n_f: int) -> float:
    """Edge-count milestone 8 * n_f ** (1 + 2 ** -j)."""
    return 8.0 * n_f ** (1.0 + 2.0 ** -j)


def greedy_mis(edges: Iterable[tuple[int, int]], candidates: Iterable[int]) -> set[int]:
    """Ascending-id greedy MIS of the graph induced on ``candidates``."""
    cands = sorted(set(candidates))
    inside = set(cands)
    adj: dict[int, list[int]] = {c: [] for c in cands}
    for u, v in edges:
        if u in inside and v in inside and u != v:
            adj[u].append(v)
            adj[v].append(u)
    chosen: set[int] = set()
    for c in cands:
        if not any(n in chosen for n in adj[c]):
            chosen.add(c)
    return chosen


def _shared_mis(ctx: NodeContext, messages: np.ndarray, cand_ids: np.ndarray) -> np.ndarray:
    # every client evaluates the same pure function on identical inputs; memoise by content
    key = ("mis", cand_ids.tobytes(), messages.tobytes())
    memo = ctx.shared.setdefault("mis", {})
    hit = memo.get(key)
    if hit is None:
        n_f = ctx.n_f
        edges = zip((messages // n_f).tolist(), (messages % n_f).tolist())
        hit = np.array(sorted(greedy_mis(edges, cand_ids.tolist())), dtype=np.int64)
        memo.clear()
        memo[key] = hit
    return hit


# --------------------------------------------------------- node programs


@dataclass
class WalkStats:
    iterations: int = 0
    successes: int = 0
    timeouts: int = 0
    mdd_iterations: int = 0
    trace: list = field(default_factory=list)  # (state i, |E(H)|) at each iteration start


@dataclass
class ClientWalkState:
    records: np.ndarray
    active: np.ndarray
    ruling: np.ndarray  # bool per facility


def facility_program(
    ctx: NodeContext,
    start_state: int = 1,
    max_iterations: int | None = None,
    stats: WalkStats | None = None,
    observe=None,
):
    """Facility side. Returns whether the facility is still active at the end."""
    n_f = ctx.n_f
    i_max = max_state(n_f)
    i = min(max(start_state, 0), i_max)
    cap = mdd.dissemination_cap(ctx.n_f, ctx.n_c)
    active = True
    iteration = 0
    while True:
        # clients report live witness counts to x_1
        inbox = yield None
        out = None
        if ctx.index == 0:
            _, counts, _ = inbox.select(Kind.COUNT)
            if stats is not None:
                stats.trace.append((i, observe() if observe else None))
            done = int(counts.sum()) == 0 or (max_iterations is not None and iteration >= max_iterations)
            out = broadcast(Kind.STOP if done else Kind.CONTINUE)
        inbox = yield out
        inbox = yield None
        _, msg = inbox.first()
        if msg.kind == Kind.STOP:
            return active
        threshold = join_threshold(i, n_f)
        candidate = active and ctx.random_int(BERNOULLI_GRID) <= threshold
        inbox = yield broadcast(Kind.CANDIDATE) if candidate else None
        outcome = yield from mdd.facility_program(ctx, cap)
        iteration += 1
        if stats is not None and ctx.index == 0:
            stats.iterations += 1
            stats.mdd_iterations += outcome.iterations
        if outcome.success:
            inbox = yield None
            senders, _, _ = inbox.select(Kind.DOMINATED)
            removed = active and (candidate or senders.size > 0)
            if removed:
                active = False
            inbox = yield broadcast(Kind.REMOVED) if removed else None
            i = min(i + 1, i_max)
            if stats is not None and ctx.index == 0:
                stats.successes += 1
        else:
            i = max(i - 1, 0)
            if stats is not None and ctx.index == 0:
                stats.timeouts += 1


def join_threshold(i: int, n_f: int) -> int:
    return math.floor(join_probability(i, n_f) * BERNOULLI_GRID)


def client_program(ctx: NodeContext, state: ClientWalkState, start_state: int = 1):
    """Client side; ``state`` is updated in place. Returns the ruling set as a
    sorted array of facility ids."""
    n_f = ctx.n_f
    i_max = max_state(n_f)
    i = min(max(start_state, 0), i_max)
    cap = mdd.dissemination_cap(ctx.n_f, ctx.n_c)
    while True:
        inbox = yield send(0, Kind.COUNT, state.records.size)
        inbox = yield None
        _, msg = inbox.first()
        inbox = yield broadcast(msg.kind) if ctx.index == 0 else None
        if msg.kind == Kind.STOP:
            break
        inbox = yield None
        cand_ids, _, _ = inbox.select(Kind.CANDIDATE)
        cand = np.zeros(n_f, dtype=bool)
        cand[cand_ids] = True
        recs = state.records
        u, v = recs // n_f, recs % n_f
        sub = recs[cand[u] & cand[v]]
        outcome = yield from mdd.client_program(ctx, sub, cap)
        if outcome.success:
            mis = _shared_mis(ctx, outcome.messages, cand_ids)
            state.ruling[mis] = True
            # neighbours of candidates that this client can vouch for
            hit_u = cand[u] & ~cand[v]
            hit_v = cand[v] & ~cand[u]
            targets = np.unique(np.concatenate([v[hit_u], u[hit_v]]))
            inbox = yield send_many(targets, Kind.DOMINATED) if targets.size else None
            inbox = yield None
            removed, _, _ = inbox.select(Kind.REMOVED)
            state.active[removed] = False
            keep = state.active[u] & state.active[v]
            state.records = recs[keep]
            i = min(i + 1, i_max)
        else:
            i = max(i - 1, 0)
    state.ruling |= state.active
    return np.flatnonzero(state.ruling)


@dataclass
class RulingSetResult:
    ruling_set: set[int]
    rounds: int
    stats: WalkStats

    def to_dict(self) -> dict:
        return {
            "iterations": self.stats.iterations,
            "successes": self.stats.successes,
            "timeouts": self.stats.timeouts,
            "mdd_iterations": self.stats.mdd_iterations,
            "final_rounds": self.rounds,
            "size": len(self.ruling_set),
            "trace": [[i, e] for i, e in self.stats.trace],
        }


def live_edge_count(states: list[ClientWalkState], n_f: int) -> int:
    recs = [s.records for s in states if s.records.size]
    if not recs:
        return 0
    return int(np.unique(np.concatenate(recs)).size)


def compute_2ruling_set(
    overlay: OverlayGraph,
    seed: int = 0,
    start_state: int = 1,
    max_iterations: int | None = None,
    transcript: Transcript | None = None,
) -> RulingSetResult:
    n_f, n_c = overlay.n_f, overlay.n_c
    if not overlay.active.all():
        raise ValueError("compute_2ruling_set expects a fresh overlay with every facility active")
    states = [
        ClientWalkState(
            records=_live_records(w, overlay.active, n_f),
            active=overlay.active.copy(),
            ruling=np.zeros(n_f, dtype=bool),
        )
        for w in overlay.witnesses
    ]
    stats = WalkStats()

    def facility(ctx):
        return facility_program(
            ctx,
            start_state,
            max_iterations,
            stats if ctx.index == 0 else None,
            (lambda: live_edge_count(states, n_f)) if ctx.index == 0 else None,
        )

    net = Network(
        n_f,
        n_c,
        facility,
        lambda ctx: client_program(ctx, states[ctx.index], start_state),
        seed=seed,
        transcript=transcript,
    )
    rounds = net.run()
    results = net.results(CLIENT)
    first = results[0]
    assert all(np.array_equal(first, r) for r in results), "clients disagree on the ruling set"
    return RulingSetResult(set(first.tolist()), rounds, stats)


def _live_records(w: np.ndarray, active: np.ndarray, n_f: int) -> np.ndarray:
    if w.size == 0:
        return w
    return w[active[w // n_f] & active[w % n_f]]


# ------------------------------------------------------------ verification


def verify_ruling(overlay: OverlayGraph, ruling: Iterable[int], beta: int = 2) -> Violation | None:
    """Independence of ``ruling`` in the overlay and coverage of every facility
    within ``beta`` hops, by breadth-first search from the ruling set."""
    members = sorted(set(ruling))
    inside = np.zeros(overlay.n_f, dtype=bool)
    inside[members] = True
    for u, v in sorted(overlay.edges()):
        if inside[u] and inside[v]:
            return Violation("independence", (u, v), f"edge ({u}, {v}) joins two ruling-set members")
    adj = overlay.adjacency()
    dist = np.full(overlay.n_f, -1, dtype=np.int64)
    queue = deque()
    for m in members:
        dist[m] = 0
        queue.append(m)
    while queue:
        x = queue.popleft()
        if dist[x] == beta:
            continue
        for y in adj[x]:
            if dist[y] < 0:
                dist[y] = dist[x] + 1
                queue.append(y)
    uncovered = np.flatnonzero(dist < 0)
    if uncovered.size:
        x = int(uncovered[0])
        return Violation("coverage", (x,), f"facility {x} is more than {beta} hops from the ruling set")
    return None
