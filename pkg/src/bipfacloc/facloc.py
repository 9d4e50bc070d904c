"""End-to-end distributed facility location on the bipartite network.

Facilities broadcast their characteristic radii; clients split facilities
into classes of radii within a factor 3, record which same-class pairs they
witness as adjacent, and jointly compute a 2-ruling set of that overlay.
Clients then send ``open`` to ruling-set members they have no reason to
veto, a facility opens iff every client agrees, and clients connect to the
nearest open facility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rulingset
from .congest import (
    CLIENT,
    FACILITY,
    Kind,
    Network,
    NodeContext,
    SimulationError,
    Transcript,
    broadcast,
    count_rounds,
    send_many,
)
from .instance import (
    Instance,
    RadiusProfile,
    Solution,
    Violation,
    classify,
    compute_radii,
    radius_from_distances,
    solution_cost,
)
from .rulingset import ClientWalkState, OverlayGraph, WalkStats

_INT64_SAFE = 1 << 62
LOCAL_ROUNDS = 3  # radius broadcast, open messages, status broadcast


# --------------------------------------------------------------- overlay


@dataclass(frozen=True)
class RadiusTable:
    """Radii as numerator/denominator columns plus classes, as seen by a client."""

    num: np.ndarray
    den: np.ndarray
    class_of: np.ndarray
    exact_int64: bool

    @classmethod
    def from_fractions(cls, r, class_of) -> "RadiusTable":
        num = [x.numerator for x in r]
        den = [x.denominator for x in r]
        return cls._build(num, den, class_of)

    @classmethod
    def _build(cls, num, den, class_of) -> "RadiusTable":
        big = max(max(num), max(den))
        ok = big < (1 << 31)
        dtype = np.int64 if ok else object
        return cls(
            np.array(num, dtype=dtype),
            np.array(den, dtype=dtype),
            np.asarray(class_of, dtype=np.int64),
            ok,
        )


def _pair_ok(d_sum, p1, q1, p2, q2, safe: bool):
    # d_sum <= p1/q1 + p2/q2, cross-multiplied
    if not safe:
        d_sum, p1, q1, p2, q2 = (np.array(x.tolist(), dtype=object) for x in (d_sum, p1, q1, p2, q2))
    return d_sum * q1 * q2 <= p1 * q2 + p2 * q1


def client_witnesses(dist: np.ndarray, table: RadiusTable, n_f: int) -> np.ndarray:
    """Edge indices ``u * n_f + v`` of same-class pairs with
    D(x_u, y) + D(x_v, y) <= r_u + r_v, for one client's distance column."""
    dist = np.asarray(dist, dtype=np.int64)
    d_max = int(dist.max()) if dist.size else 0
    q_max = int(table.den.max())
    safe = (
        table.exact_int64
        and 2 * (2 * d_max + 1) * q_max**2 < _INT64_SAFE
        and 2 * int(table.num.max()) * q_max < _INT64_SAFE
    )
    # prune: the pair test is s_u + s_v <= 0 with s = d - r, so a member needs
    # s_u <= -min(s) over its class; the float test only widens the set
    s = dist - table.num.astype(float) / table.den.astype(float)
    slack = 1e-9 * (1.0 + np.abs(s))
    out = []
    for k in np.unique(table.class_of):
        members = np.flatnonzero(table.class_of == k)
        if members.size < 2:
            continue
        sk = s[members]
        keep = members[sk <= -sk.min() + slack[members]]
        if keep.size < 2:
            continue
        a, b = np.triu_indices(keep.size, k=1)
        u, v = keep[a], keep[b]
        ok = _pair_ok(dist[u] + dist[v], table.num[u], table.den[u], table.num[v], table.den[v], safe)
        ok = np.asarray(ok, dtype=bool)
        if ok.any():
            out.append(u[ok] * n_f + v[ok])
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(out))


def build_overlay(inst: Instance, radii: RadiusProfile) -> OverlayGraph:
    table = RadiusTable.from_fractions(radii.r, radii.class_of)
    return OverlayGraph(inst.n_f, [client_witnesses(inst.D[:, j], table, inst.n_f) for j in range(inst.n_c)])


def open_targets(dist: np.ndarray, ruling: np.ndarray, table: RadiusTable) -> np.ndarray:
    """Ruling-set members this client sends ``open`` to: x_i in class k is
    vetoed when the client itself sees some x_i' of a lower class with
    D(x_i, y) + D(x_i', y) <= 2 r_i."""
    if ruling.size == 0:
        return ruling
    dist = np.asarray(dist, dtype=np.int64)
    n_classes = int(table.class_of.max()) + 1
    per_class = np.full(n_classes, np.iinfo(np.int64).max // 4, dtype=np.int64)
    np.minimum.at(per_class, table.class_of, dist)
    # lower[k] = min distance to any facility of class < k
    lower = np.concatenate([[np.iinfo(np.int64).max // 4], np.minimum.accumulate(per_class)[:-1]])
    k = table.class_of[ruling]
    has_lower = k > 0
    m = lower[k]
    lhs = (dist[ruling] + m).astype(object) * table.den[ruling].astype(object)
    veto = has_lower & np.asarray(lhs <= 2 * table.num[ruling].astype(object), dtype=bool)
    return ruling[~veto]


# --------------------------------------------------------- node programs


@dataclass
class LocateTrace:
    stats: WalkStats = field(default_factory=WalkStats)
    ruling_rounds: list = field(default_factory=lambda: [0])
    client_states: list = field(default_factory=list)


def _client_radii(ctx: NodeContext, nums: np.ndarray, dens: np.ndarray) -> RadiusTable:
    key = (nums.tobytes(), dens.tobytes())
    memo = ctx.shared.setdefault("radii", {})
    hit = memo.get(key)
    if hit is None:
        r = [Fraction(int(p), int(q)) for p, q in zip(nums.tolist(), dens.tolist())]
        _, cls = classify(r)
        hit = RadiusTable.from_fractions(r, cls)
        memo.clear()
        memo[key] = hit
    return hit


def facility_program(ctx: NodeContext, f_i: int, row: np.ndarray, trace: LocateTrace | None = None):
    r = radius_from_distances(f_i, row)
    inbox = yield broadcast(Kind.RADIUS, r.numerator, r.denominator)
    walk = rulingset.facility_program(
        ctx,
        stats=trace.stats if trace is not None else None,
        observe=(lambda: rulingset.live_edge_count(trace.client_states, ctx.n_f)) if trace is not None else None,
    )
    if trace is not None:
        yield from count_rounds(walk, trace.ruling_rounds)
    else:
        yield from walk
    inbox = yield None
    senders, _, _ = inbox.select(Kind.OPEN)
    is_open = senders.size == ctx.n_c
    inbox = yield broadcast(Kind.OPENED) if is_open else None
    return is_open


def client_program(ctx: NodeContext, col: np.ndarray, trace: LocateTrace | None = None):
    inbox = yield None
    senders, nums, dens = inbox.select(Kind.RADIUS)
    if senders.size != ctx.n_f:
        raise SimulationError(f"client {ctx.index} heard {senders.size} of {ctx.n_f} radii")
    table = _client_radii(ctx, nums, dens)
    state = ClientWalkState(
        records=client_witnesses(col, table, ctx.n_f),
        active=np.ones(ctx.n_f, dtype=bool),
        ruling=np.zeros(ctx.n_f, dtype=bool),
    )
    if trace is not None:
        trace.client_states.append(state)
    ruling = yield from rulingset.client_program(ctx, state)
    targets = open_targets(col, ruling, table)
    inbox = yield send_many(targets, Kind.OPEN) if targets.size else None
    inbox = yield None
    opened, _, _ = inbox.select(Kind.OPENED)
    if opened.size == 0:
        raise SimulationError(f"client {ctx.index} found no open facility")
    serving = int(opened[np.argmin(col[opened])])
    return ruling, serving


@dataclass
class LocateResult:
    solution: Solution
    rounds: int
    ruling_rounds: int
    ruling_set: set[int]
    stats: WalkStats
    radii: RadiusProfile
    transcript: Transcript | None = None

    def to_dict(self) -> dict:
        d = self.solution.to_dict()
        d["rounds"] = self.rounds
        d["ruling_set"] = {
            "members": sorted(self.ruling_set),
            "iterations": self.stats.iterations,
            "successes": self.stats.successes,
            "timeouts": self.stats.timeouts,
            "mdd_iterations": self.stats.mdd_iterations,
            "final_rounds": self.ruling_rounds,
            "size": len(self.ruling_set),
            "trace": [[i, e] for i, e in self.stats.trace],
        }
        return d


def locate_facilities(inst: Instance, seed: int = 0, transcript: Transcript | None = None) -> LocateResult:
    trace = LocateTrace()
    D = inst.D
    bound = max(inst.n_f**2, inst.n_c, 48 * inst.n_f, (inst.f_max + inst.d_max) * inst.n_c)
    net = Network(
        inst.n_f,
        inst.n_c,
        lambda ctx: facility_program(ctx, int(inst.f[ctx.index]), D[ctx.index], trace if ctx.index == 0 else None),
        lambda ctx: client_program(ctx, D[:, ctx.index], trace),
        seed=seed,
        scalar_bound=bound,
        transcript=transcript,
    )
    rounds = net.run()
    opened = [i for i, is_open in enumerate(net.results(FACILITY)) if is_open]
    client_out = net.results(CLIENT)
    ruling = client_out[0][0]
    if not all(np.array_equal(ruling, r) for r, _ in client_out):
        raise SimulationError("clients disagree on the ruling set")
    solution = solution_cost(inst, opened)
    if tuple(s for _, s in client_out) != solution.assign:
        raise SimulationError("client connections differ from the nearest-open rule")
    return LocateResult(
        solution=solution,
        rounds=rounds,
        ruling_rounds=trace.ruling_rounds[0],
        ruling_set=set(ruling.tolist()),
        stats=trace.stats,
        radii=compute_radii(inst),
        transcript=transcript,
    )


# ---------------------------------------------------------- verification


def verify_solution(inst: Instance, radii: RadiusProfile, solution: Solution) -> Violation | None:
    """(a) each client lies inside the ball of at most one open facility;
    (b) the open set is nonempty; (c) every client is served by its nearest
    open facility (lowest index on ties) and the cost adds up."""
    if not solution.open:
        return Violation("empty", (), "no facility is open")
    opened = list(solution.open)
    for j in range(inst.n_c):
        inside = [i for i in opened if int(inst.D[i, j]) <= radii.r[i]]
        if len(inside) > 1:
            return Violation(
                "ball overlap", (j, inside[0], inside[1]), f"client {j} is within r_i of open facilities {inside}"
            )
    expected = solution_cost(inst, opened)
    for j, (got, want) in enumerate(zip(solution.assign, expected.assign)):
        if got != want:
            return Violation("assignment", (j, got), f"client {j} served by {got}, nearest open is {want}")
    if solution.cost != expected.cost:
        return Violation("cost", (), f"reported cost {solution.cost} != {expected.cost}")
    return None
