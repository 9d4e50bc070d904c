import itertools
from fractions import Fraction

import numpy as np
import pytest

from bipfacloc.exact import (
    OracleRefused,
    brute_force_opt,
    mask_to_set,
    mettu_plaxton,
    subset_costs,
    verify_mp_sparseness,
)
from bipfacloc.instance import (
    Instance,
    compute_radii,
    facility_distance_matrix,
    generate_instance,
    rbar_sum,
    solution_cost,
)

from conftest import random_metric_instance, small_instances


def enumerate_opt(inst):
    best = None
    for size in range(1, inst.n_f + 1):
        for F in itertools.combinations(range(inst.n_f), size):
            c = solution_cost(inst, F).cost
            if best is None or (c, F) < best:
                best = (c, F)
    return best


def reference_mp(inst, radii):
    fd = facility_distance_matrix(inst)
    F = []
    for i in sorted(range(inst.n_f), key=lambda i: (radii.r[i], i)):
        if not F or min(fd[i, k] for k in F) > 2 * radii.r[i]:
            F.append(i)
    return sorted(F)


def test_mp_single_facility():
    inst = Instance([4], [[1, 2]])
    assert mettu_plaxton(inst, compute_radii(inst)).open == (0,)


def test_mp_colocated_twins_open_once():
    row = [0, 3, 5, 2]
    inst = Instance([6, 6], [row, row])
    radii = compute_radii(inst)
    assert 2 * min(row) <= 2 * radii.r[0]
    assert mettu_plaxton(inst, radii).open == (0,)


def test_mp_matches_reference_greedy():
    for inst in small_instances(150, max_f=10, max_c=20, seed=1):
        radii = compute_radii(inst)
        assert list(mettu_plaxton(inst, radii).open) == reference_mp(inst, radii)


def test_mp_sparseness_on_many_instances():
    for inst in small_instances(1000, max_f=12, max_c=24, seed=2):
        radii = compute_radii(inst)
        assert verify_mp_sparseness(inst, radii, mettu_plaxton(inst, radii).open) is None


def test_sparseness_detects_corrupted_set():
    found = 0
    for inst in small_instances(100, max_f=10, seed=3):
        radii = compute_radii(inst)
        F = set(mettu_plaxton(inst, radii).open)
        outside = [i for i in range(inst.n_f) if i not in F]
        if not outside:
            continue
        fd = facility_distance_matrix(inst)
        extra = min(outside, key=lambda i: (min(fd[i, k] for k in F), i))
        v = verify_mp_sparseness(inst, radii, F | {extra})
        assert v is not None and extra in v.where
        found += 1
    assert found > 20


def test_sparseness_singleton():
    inst = generate_instance(5, 5, 0)
    assert verify_mp_sparseness(inst, compute_radii(inst), [3]) is None


def test_opt_single_facility():
    inst = Instance([7], [[1, 2, 3]])
    sol = brute_force_opt(inst)
    assert sol.open == (0,) and sol.cost == 13


def test_opt_hand_enumerated():
    # {0}: 10 + 0, {1}: 1 + 2, {0, 1}: 11 + 0
    inst = Instance([10, 1], [[0, 0], [1, 1]])
    sol = brute_force_opt(inst)
    assert sol.open == (1,) and sol.cost == 3


def test_opt_ties_pick_lexicographically_smallest():
    inst = Instance([1, 1, 1], [[0, 0], [0, 0], [0, 0]])
    assert brute_force_opt(inst).open == (0,)
    inst = Instance([2, 1, 1], [[1, 5], [1, 5], [5, 1]])
    # {0,2}: 3 + 2, {1,2}: 2 + 2, {1}: 1 + 6
    assert brute_force_opt(inst).open == (1, 2)


def test_opt_matches_enumeration():
    for inst in small_instances(80, max_f=8, max_c=10, seed=5):
        c, F = enumerate_opt(inst)
        sol = brute_force_opt(inst)
        assert sol.cost == c and sol.open == F


def test_subset_costs_blocked_path():
    rng = np.random.default_rng(9)
    inst = random_metric_instance(rng, 12, 6)
    costs = subset_costs(inst)
    for mask in rng.integers(1, 1 << 12, size=200).tolist():
        assert costs[mask] == solution_cost(inst, mask_to_set(mask)).cost
    assert costs[0] == -1


def test_opt_guard():
    inst = generate_instance(21, 2, 0)
    with pytest.raises(OracleRefused):
        brute_force_opt(inst)


def test_mp_within_three_of_every_subset():
    for inst in small_instances(60, max_f=10, max_c=16, seed=6):
        mp = mettu_plaxton(inst, compute_radii(inst)).cost
        costs = subset_costs(inst)[1:]
        assert mp <= 3 * int(costs.min())


def test_lower_bounds():
    for inst in small_instances(150, max_f=12, max_c=16, seed=7):
        radii = compute_radii(inst)
        lb = rbar_sum(inst, radii)
        opt = brute_force_opt(inst).cost
        mp = mettu_plaxton(inst, radii).cost
        assert lb / 6 <= opt <= mp
        assert mp >= lb / 2
        assert mp <= 3 * opt


def test_lower_bound_is_a_fraction():
    inst = Instance([1], [[10, 10]])
    assert rbar_sum(inst, compute_radii(inst)) == Fraction(21, 2) * 2 + 20
