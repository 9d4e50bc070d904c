from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from bipfacloc.congest import Transcript
from bipfacloc.exact import brute_force_opt, mettu_plaxton
from bipfacloc.facloc import (
    LOCAL_ROUNDS,
    RadiusTable,
    build_overlay,
    client_witnesses,
    locate_facilities,
    open_targets,
    verify_solution,
)
from bipfacloc.instance import (
    Instance,
    Solution,
    compute_radii,
    facility_distance_matrix,
    generate_instance,
    rbar_sum,
    solution_cost,
)
from bipfacloc.rulingset import verify_ruling

from conftest import small_instances


def overlay_oracle(inst, radii):
    fd = facility_distance_matrix(inst)
    return {
        (i, k)
        for i, k in combinations(range(inst.n_f), 2)
        if radii.class_of[i] == radii.class_of[k] and fd[i, k] <= radii.r[i] + radii.r[k]
    }


def witnesses_oracle(col, radii):
    out = set()
    for i, k in combinations(range(len(col)), 2):
        if radii.class_of[i] == radii.class_of[k] and int(col[i]) + int(col[k]) <= radii.r[i] + radii.r[k]:
            out.add(i * len(col) + k)
    return out


def veto_oracle(col, ruling, radii):
    keep = []
    for i in ruling:
        lower = [k for k in range(len(col)) if radii.class_of[k] < radii.class_of[i]]
        if any(int(col[i]) + int(col[k]) <= 2 * radii.r[i] for k in lower):
            continue
        keep.append(i)
    return keep


# ---------------------------------------------------------------- overlay


def test_overlay_matches_facility_distance_oracle():
    for inst in small_instances(120, max_f=12, max_c=20, seed=11):
        radii = compute_radii(inst)
        assert build_overlay(inst, radii).edges() == overlay_oracle(inst, radii)


def test_client_witnesses_exact():
    for inst in small_instances(40, max_f=10, max_c=8, seed=12):
        radii = compute_radii(inst)
        table = RadiusTable.from_fractions(radii.r, radii.class_of)
        for j in range(inst.n_c):
            got = set(client_witnesses(inst.D[:, j], table, inst.n_f).tolist())
            assert got == witnesses_oracle(inst.D[:, j], radii)


def test_client_witnesses_with_huge_costs():
    rng = np.random.default_rng(2)
    scale = 10**12
    for _ in range(5):
        pts = rng.integers(0, 50, size=(14, 2)) * scale + rng.integers(0, 3, size=(14, 2))
        D = np.abs(pts[:6, None, :] - pts[None, 6:, :]).sum(axis=2)
        inst = Instance(rng.integers(1, 40 * scale, size=6), D)
        radii = compute_radii(inst)
        table = RadiusTable.from_fractions(radii.r, radii.class_of)
        for j in range(inst.n_c):
            got = set(client_witnesses(inst.D[:, j], table, inst.n_f).tolist())
            assert got == witnesses_oracle(inst.D[:, j], radii)


def test_different_classes_are_never_adjacent():
    # both facilities sit on the only client; radii 1 and 5 fall in classes 0 and 1
    inst = Instance([1, 5], [[0], [0]])
    radii = compute_radii(inst)
    assert radii.class_of == (0, 1)
    assert build_overlay(inst, radii).edges() == set()


def test_colocated_same_class_pair_is_witnessed():
    inst = Instance([4, 5], [[0, 3], [0, 3]])
    radii = compute_radii(inst)
    assert radii.class_of[0] == radii.class_of[1]
    ov = build_overlay(inst, radii)
    assert ov.edges() == {(0, 1)}
    assert 1 in ov.witnesses[0].tolist()


def test_open_targets_match_per_client_veto():
    for inst in small_instances(60, max_f=10, max_c=10, seed=13):
        radii = compute_radii(inst)
        table = RadiusTable.from_fractions(radii.r, radii.class_of)
        ruling = np.arange(inst.n_f)
        for j in range(inst.n_c):
            got = open_targets(inst.D[:, j], ruling, table).tolist()
            assert got == veto_oracle(inst.D[:, j], range(inst.n_f), radii)


# ---------------------------------------------------------------- pipeline


def test_single_facility_opens():
    inst = Instance([3], [[1, 2, 4]])
    res = locate_facilities(inst)
    assert res.solution.open == (0,) and res.solution.assign == (0, 0, 0)
    assert res.solution.cost == 3 + 7


def test_identical_twins_open_once():
    row = [0, 2, 3, 1, 4]
    inst = Instance([5, 5], [row, row])
    for seed in range(5):
        res = locate_facilities(inst, seed=seed)
        assert len(res.solution.open) == 1
        assert verify_solution(inst, compute_radii(inst), res.solution) is None


def test_seeded_runs_satisfy_every_check():
    for n, inst in enumerate(small_instances(40, max_f=12, max_c=30, seed=14)):
        radii = compute_radii(inst)
        res = locate_facilities(inst, seed=n)
        sol = res.solution
        assert verify_solution(inst, radii, sol) is None
        assert verify_ruling(build_overlay(inst, radii), res.ruling_set) is None
        assert set(sol.open) <= res.ruling_set
        lowest = [i for i in res.ruling_set if radii.class_of[i] == 0]
        assert set(lowest) <= set(sol.open)
        assert res.rounds == res.ruling_rounds + LOCAL_ROUNDS
        lb = rbar_sum(inst, radii)
        opt = brute_force_opt(inst).cost
        assert lb / 6 <= opt <= sol.cost <= 48 * lb
        assert sol.cost <= 288 * opt


def test_larger_run():
    inst = generate_instance(96, 160, 3, geometry="clustered")
    radii = compute_radii(inst)
    res = locate_facilities(inst, seed=1)
    assert verify_solution(inst, radii, res.solution) is None
    assert verify_ruling(build_overlay(inst, radii), res.ruling_set) is None
    assert res.solution.cost <= 48 * rbar_sum(inst, radii)
    assert res.solution.cost <= 3 * 48 * mettu_plaxton(inst, radii).cost


def test_locate_is_deterministic():
    inst = generate_instance(10, 25, 4)
    t1, t2 = Transcript(), Transcript()
    a = locate_facilities(inst, seed=3, transcript=t1)
    b = locate_facilities(inst, seed=3, transcript=t2)
    assert a.to_dict() == b.to_dict() and t1.digest() == t2.digest()
    assert t1.lines[0].startswith("1 F0->C0 RADIUS")


# ------------------------------------------------------------ verification


def test_verify_solution_flags_overlapping_balls():
    inst = Instance([4, 5], [[0, 3], [0, 3]])
    radii = compute_radii(inst)
    v = verify_solution(inst, radii, solution_cost(inst, [0, 1]))
    assert v is not None and v.kind == "ball overlap" and v.where[0] == 0


def test_verify_solution_other_failures():
    inst = Instance([1, 1], [[1, 5], [4, 2]])
    radii = compute_radii(inst)
    assert verify_solution(inst, radii, solution_cost(inst, [0])) is None
    assert verify_solution(inst, radii, Solution((), (), Fraction(0))).kind == "empty"
    wrong = Solution((0, 1), (1, 1), Fraction(1 + 1 + 4 + 2))
    assert verify_solution(inst, radii, wrong).kind == "assignment"
    bad_cost = Solution((0,), (0, 0), Fraction(8))
    assert verify_solution(inst, radii, bad_cost).kind == "cost"
