import math
from itertools import combinations

import numpy as np
import pytest

from bipfacloc import mdd, rulingset
from bipfacloc.congest import Transcript
from bipfacloc.rulingset import (
    BERNOULLI_GRID,
    OverlayGraph,
    compute_2ruling_set,
    greedy_mis,
    join_probability,
    join_threshold,
    level_bound,
    max_state,
    verify_ruling,
)


def random_graph(rng, n, density):
    return [(u, v) for u, v in combinations(range(n), 2) if rng.random() < density]


def hops_from(adj, sources, n):
    dist = [None] * n
    frontier = list(sources)
    for s in frontier:
        dist[s] = 0
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if dist[y] is None:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    return dist


# ------------------------------------------------------------------- MIS


def test_mis_without_edges():
    assert greedy_mis([], [4, 1, 2]) == {1, 2, 4}


def test_mis_single_edge():
    assert greedy_mis([(5, 2)], [2, 5, 7, 9]) == {2, 7, 9}


def test_mis_path():
    # path 1-2-3 in one-based labels
    assert greedy_mis([(0, 1), (1, 2)], [0, 1, 2]) == {0, 2}


def test_mis_ignores_edges_outside_candidates():
    assert greedy_mis([(0, 1), (1, 2)], [1, 2]) == {1}


def test_mis_is_maximal_and_independent():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 20))
        edges = random_graph(rng, n, rng.random())
        cands = [c for c in range(n) if rng.random() < 0.7]
        L = greedy_mis(edges, cands)
        adj = {c: set() for c in cands}
        for u, v in edges:
            if u in adj and v in adj:
                adj[u].add(v)
                adj[v].add(u)
        assert all(not (adj[x] & L) for x in L)
        assert all(x in L or adj[x] & L for x in cands)


# ---------------------------------------------------------------- states


def test_walk_parameters():
    assert max_state(2) == max_state(4) == 2
    assert max_state(256) == 4
    assert max_state(257) == 5
    assert join_probability(0, 64) == pytest.approx(1 / (8 * 64))
    assert join_probability(1, 64) == pytest.approx(1 / 64)
    for n in (4, 100, 4096):
        for i in range(max_state(n) + 1):
            p = join_probability(i, n)
            assert 0 < p <= 1
            assert p == pytest.approx(1 / (8 * n ** (2.0**-i)))
        # the top state is within a factor 2 of 1/8
        assert join_probability(max_state(n), n) >= 1 / 16
    assert join_threshold(1, 64) == math.floor(BERNOULLI_GRID / 64)
    assert level_bound(1, 16) == pytest.approx(8 * 64)


# ---------------------------------------------------------------- overlay


def test_overlay_edges_are_the_union_of_witness_records():
    ov = OverlayGraph(4, [[1, 2], [2, 11], []])
    assert ov.edges() == {(0, 1), (0, 2), (2, 3)}
    ov.active[2] = False
    assert ov.edges() == {(0, 1)}
    with pytest.raises(ValueError):
        OverlayGraph(4, [[4]])  # (1, 0) is not canonical


# ----------------------------------------------------------- verification


def test_verify_ruling_basics():
    empty = OverlayGraph(3, [[]])
    assert verify_ruling(empty, [0, 1, 2]) is None
    path = OverlayGraph.from_edges(5, 2, [(0, 1), (1, 2), (2, 3), (3, 4)])
    assert verify_ruling(path, [2]) is None
    v = verify_ruling(path, [])
    assert v is not None and v.kind == "coverage"
    v = verify_ruling(path, [0])
    assert v.kind == "coverage" and v.where == (3,)
    v = verify_ruling(path, [1, 2])
    assert v.kind == "independence" and v.where == (1, 2)


# ------------------------------------------------------------- protocol


def test_edgeless_overlay_takes_everything():
    res = compute_2ruling_set(OverlayGraph(6, [[], []]), seed=0)
    assert res.ruling_set == set(range(6))
    assert res.stats.iterations == 0


def test_complete_graph_gives_one_member():
    n = 12
    ov = OverlayGraph.from_edges(n, 5, combinations(range(n), 2))
    for seed in range(10):
        res = compute_2ruling_set(ov, seed=seed)
        assert len(res.ruling_set) == 1
        dist = hops_from(ov.adjacency(), res.ruling_set, n)
        assert all(d is not None and d <= 1 for d in dist)


def test_random_overlays_are_ruled():
    rng = np.random.default_rng(12)
    for run in range(100):
        n_f = int(rng.integers(1, 65))
        n_c = int(rng.integers(1, 41))
        edges = random_graph(rng, n_f, float(rng.choice([0.02, 0.1, 0.3, 0.8])))
        ov = OverlayGraph.from_edges(n_f, n_c, edges, rng=rng, max_witnesses=3)
        res = compute_2ruling_set(ov, seed=run)
        assert verify_ruling(ov, res.ruling_set) is None, run
        # the walk never leaves its state range and the edge count never grows
        states = [i for i, _ in res.stats.trace]
        sizes = [e for _, e in res.stats.trace]
        assert all(0 <= i <= max_state(n_f) for i in states)
        assert sizes == sorted(sizes, reverse=True) and sizes[-1] == 0
        assert res.stats.successes + res.stats.timeouts == res.stats.iterations


def test_state_walk_moves_up_on_success():
    rng = np.random.default_rng(3)
    ov = OverlayGraph.from_edges(40, 10, random_graph(rng, 40, 0.3), rng=rng)
    res = compute_2ruling_set(ov, seed=1)
    states = [i for i, _ in res.stats.trace]
    assert res.stats.timeouts == 0
    i_max = max_state(40)
    assert states == [min(1 + t, i_max) for t in range(len(states))]


def test_timeouts_move_the_walk_down(monkeypatch):
    # every facility joins and dissemination gets no hashing budget
    monkeypatch.setattr(rulingset, "join_threshold", lambda i, n: BERNOULLI_GRID)
    monkeypatch.setattr(mdd, "dissemination_cap", lambda n_f, n_c: 0)
    n_f, n_c = 16, 200
    edges = list(combinations(range(n_f), 2))
    ov = OverlayGraph(n_f, [[u * n_f + v for u, v in edges]] * n_c)
    res = compute_2ruling_set(ov, seed=0, start_state=2, max_iterations=3)
    assert res.stats.timeouts == 3 and res.stats.successes == 0
    assert [i for i, _ in res.stats.trace] == [2, 1, 0, 0]


def test_requires_fresh_overlay():
    ov = OverlayGraph(3, [[1]])
    ov.active[0] = False
    with pytest.raises(ValueError):
        compute_2ruling_set(ov)


def test_level_progress():
    # |E(H)| <= l_1 at the start, state forced to 2; one iteration should reach l_2
    n_f, n_c = 256, 16
    rng = np.random.default_rng(42)
    edges = random_graph(rng, n_f, 0.26)
    ov = OverlayGraph.from_edges(n_f, n_c, edges, rng=rng, max_witnesses=2)
    assert level_bound(2, n_f) < len(edges) <= level_bound(1, n_f)
    hits = 0
    trials = 200
    for seed in range(trials):
        res = compute_2ruling_set(ov, seed=seed, start_state=2, max_iterations=1)
        hits += res.stats.trace[-1][1] <= level_bound(2, n_f)
    frac = hits / trials
    sigma = math.sqrt(0.25 / trials)
    assert frac >= 0.5 - 3 * sigma


def test_ruling_transcript_is_deterministic():
    rng = np.random.default_rng(5)
    ov = OverlayGraph.from_edges(20, 8, random_graph(rng, 20, 0.3), rng=rng, max_witnesses=2)
    t1, t2 = Transcript(), Transcript()
    r1 = compute_2ruling_set(ov, seed=9, transcript=t1)
    r2 = compute_2ruling_set(ov, seed=9, transcript=t2)
    assert r1.ruling_set == r2.ruling_set and t1.digest() == t2.digest()
    assert r1.to_dict()["size"] == len(r1.ruling_set)
