"""Sequential reference solvers: the bipartite Mettu-Plaxton greedy and an
exhaustive optimum. Both serve as anchors for the distributed pipeline."""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable

import numpy as np

from .instance import Instance, RadiusProfile, Solution, Violation, solution_cost

OPT_MAX_FACILITIES = 20
_BLOCK_BITS = 10


class OracleRefused(ValueError):
    pass


def mettu_plaxton(inst: Instance, radii: RadiusProfile) -> Solution:
    """Greedy over facilities by nondecreasing radius (ties by index): open a
    facility iff its extended distance to the open set exceeds twice its radius.

    D(x, F) = min_y (D(x, y) + D(F, y)), so one running column minimum over
    the open set replaces the facility-facility matrix.
    """
    order = sorted(range(inst.n_f), key=lambda i: (radii.r[i], i))
    D = inst.D
    nearest = None  # D(F, y) for the current open set
    opened = []
    for i in order:
        if nearest is None:
            opened.append(i)
            nearest = D[i].copy()
            continue
        dist = int((D[i] + nearest).min())
        if dist > 2 * radii.r[i]:
            opened.append(i)
            np.minimum(nearest, D[i], out=nearest)
    return solution_cost(inst, opened)


def subset_costs(inst: Instance) -> np.ndarray:
    """FacLoc(F) for every bitmask F in [0, 2^n_f); entry 0 is unused (set to -1).

    Bit i of the mask selects facility i.
    """
    n_f = inst.n_f
    if n_f > OPT_MAX_FACILITIES:
        raise OracleRefused(f"exhaustive search over {n_f} facilities refused (limit {OPT_MAX_FACILITIES})")
    D = inst.D
    f = inst.f
    low_bits = min(n_f, _BLOCK_BITS)
    high_bits = n_f - low_bits
    n_low = 1 << low_bits
    big = np.iinfo(np.int64).max // 4

    # low-block tables: min distance per client and opening cost for each low mask
    low_min = np.full((n_low, inst.n_c), big, dtype=np.int64)
    low_open = np.zeros(n_low, dtype=np.int64)
    for mask in range(1, n_low):
        b = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        np.minimum(low_min[rest], D[b], out=low_min[mask])
        low_open[mask] = low_open[rest] + f[b]

    out = np.empty(1 << n_f, dtype=np.int64)
    high_min = np.full(inst.n_c, big, dtype=np.int64)
    for high in range(1 << high_bits):
        high_min[:] = big
        high_open = 0
        for t in range(high_bits):
            if high >> t & 1:
                np.minimum(high_min, D[low_bits + t], out=high_min)
                high_open += int(f[low_bits + t])
        conn = np.minimum(low_min, high_min[None, :]).sum(axis=1)
        out[high << low_bits:(high + 1) << low_bits] = conn + low_open + high_open
    out[0] = -1
    return out


def mask_to_set(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(mask.bit_length()) if mask >> i & 1)


def brute_force_opt(inst: Instance) -> Solution:
    costs = subset_costs(inst)
    valid = costs[1:]
    best = int(valid.min())
    masks = np.flatnonzero(valid == best) + 1
    subset = min(mask_to_set(int(m)) for m in masks)
    sol = solution_cost(inst, subset)
    assert sol.cost == best
    return sol


def verify_mp_sparseness(inst: Instance, radii: RadiusProfile, opened: Iterable[int]) -> Violation | None:
    """Every pair of facilities in the set must satisfy D(x_i, x_k) > 2 max(r_i, r_k)."""
    members = sorted(set(opened))
    D = inst.D
    for a, i in enumerate(members):
        rest = members[a + 1:]
        if not rest:
            break
        dist = (D[i][None, :] + D[rest]).min(axis=1)
        for k, d in zip(rest, dist):
            if not int(d) > 2 * max(radii.r[i], radii.r[k]):
                return Violation(
                    "sparseness",
                    (i, k),
                    f"D(x_{i},x_{k})={int(d)} <= 2*max(r_{i}, r_{k})={2 * max(radii.r[i], radii.r[k])}",
                )
    return None


def cost_of(inst: Instance, opened: Iterable[int]) -> Fraction:
    return solution_cost(inst, opened).cost
