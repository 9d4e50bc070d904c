"""Problem data, exact metric arithmetic and the closed-form quantities
used by every algorithm: characteristic radii, radius classes, the extended
facility-facility distance, per-client lower-bound terms and charges.

Costs are nonnegative integers; everything derived from them is an exact
``Fraction``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class InvalidInstance(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    """First failing check of a validator. ``where`` holds the indices involved."""

    kind: str
    where: tuple[int, ...]
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.detail}"


@dataclass(frozen=True, eq=False)
class Instance:
    f: np.ndarray  # (n_f,) int64 opening costs
    D: np.ndarray  # (n_f, n_c) int64 connection costs

    def __post_init__(self):
        f = np.array(self.f, dtype=np.int64).reshape(-1)
        D = np.array(self.D, dtype=np.int64)
        if D.ndim != 2 or D.shape[0] != f.shape[0]:
            raise InvalidInstance(f"D must be n_f x n_c, got {D.shape} for {f.shape[0]} facilities")
        if D.shape[0] < 1 or D.shape[1] < 1:
            raise InvalidInstance("need at least one facility and one client")
        f.setflags(write=False)
        D.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "D", D)

    @property
    def n_f(self) -> int:
        return int(self.D.shape[0])

    @property
    def n_c(self) -> int:
        return int(self.D.shape[1])

    @property
    def f_max(self) -> int:
        return int(self.f.max())

    @property
    def d_max(self) -> int:
        return int(self.D.max())

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return np.array_equal(self.f, other.f) and np.array_equal(self.D, other.D)

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "n_f": self.n_f,
            "n_c": self.n_c,
            "f": [int(x) for x in self.f],
            "D": [[int(x) for x in row] for row in self.D],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, data: dict, validate: bool = True) -> "Instance":
        try:
            n_f, n_c, f, D = data["n_f"], data["n_c"], data["f"], data["D"]
        except KeyError as exc:
            raise InvalidInstance(f"missing field {exc}") from None
        if len(f) != n_f or len(D) != n_f or any(len(row) != n_c for row in D):
            raise InvalidInstance("field shapes do not match n_f / n_c")
        values = list(f) + [x for row in D for x in row]
        if any(isinstance(x, bool) or not isinstance(x, int) or x < 0 for x in values):
            raise InvalidInstance("costs must be nonnegative integers")
        inst = cls(np.array(f, dtype=np.int64), np.array(D, dtype=np.int64).reshape(n_f, n_c))
        if validate:
            bad = validate_metric(inst)
            if bad is not None:
                raise InvalidInstance(str(bad))
        return inst


def load_instance(path: str | Path, validate: bool = True) -> Instance:
    with open(path) as fh:
        return Instance.from_dict(json.load(fh), validate=validate)


def save_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(inst.to_json())


# ---------------------------------------------------------------- radii


def radius_from_distances(f: int, distances: Iterable[int]) -> Fraction:
    """Unique r > 0 with sum(max(0, r - d)) == f.

    g(r) = sum(max(0, r - d)) is piecewise linear; on the segment where the k
    nearest clients are inside the ball, g(r) = k*r - (d_1 + ... + d_k).
    """
    if f <= 0:
        raise InvalidInstance("opening cost must be positive")
    ds = sorted(int(d) for d in distances)
    prefix = 0
    for k, d in enumerate(ds, start=1):
        prefix += d
        r = Fraction(f + prefix, k)
        if k == len(ds) or r <= ds[k]:
            return r
    raise AssertionError("unreachable")


def compute_radius(inst: Instance, i: int) -> Fraction:
    return radius_from_distances(int(inst.f[i]), inst.D[i])


@dataclass(frozen=True)
class RadiusProfile:
    r: tuple[Fraction, ...]
    r0: Fraction
    class_of: tuple[int, ...]

    @property
    def num(self) -> np.ndarray:
        return np.array([x.numerator for x in self.r], dtype=object)

    @property
    def den(self) -> np.ndarray:
        return np.array([x.denominator for x in self.r], dtype=object)


def classify(r: Sequence[Fraction]) -> tuple[Fraction, tuple[int, ...]]:
    """Class k of each radius: 3^k * r0 <= r < 3^(k+1) * r0."""
    r0 = min(r)
    out = []
    for x in r:
        q = x / r0
        k = 0
        bound = 3
        while q >= bound:
            k += 1
            bound *= 3
        out.append(k)
    return r0, tuple(out)


def compute_radii(inst: Instance) -> RadiusProfile:
    r = tuple(compute_radius(inst, i) for i in range(inst.n_f))
    r0, cls = classify(r)
    return RadiusProfile(r=r, r0=r0, class_of=cls)


# ------------------------------------------------------ derived distances


def facility_distance(inst: Instance, i: int, k: int) -> int:
    return int((inst.D[i] + inst.D[k]).min())


def facility_distance_matrix(inst: Instance) -> np.ndarray:
    D = inst.D
    out = np.empty((inst.n_f, inst.n_f), dtype=np.int64)
    for i in range(inst.n_f):
        out[i] = (D[i][None, :] + D).min(axis=1)
    return out


def rbar(inst: Instance, radii: RadiusProfile, j: int) -> Fraction:
    return min(r + int(d) for r, d in zip(radii.r, inst.D[:, j]))


def rbar_sum(inst: Instance, radii: RadiusProfile) -> Fraction:
    return sum((rbar(inst, radii, j) for j in range(inst.n_c)), Fraction(0))


def charge(inst: Instance, radii: RadiusProfile, open_set: Iterable[int], j: int) -> Fraction:
    opened = sorted(set(open_set))
    if not opened:
        raise ValueError("charge is undefined for an empty facility set")
    col = inst.D[:, j]
    total = Fraction(int(min(col[i] for i in opened)))
    for i in opened:
        r, d = radii.r[i], int(col[i])
        # integer test first; Fraction arithmetic only for clients inside the ball
        if d * r.denominator < r.numerator:
            total += r - d
    return total


# ------------------------------------------------------------- solutions


@dataclass(frozen=True)
class Solution:
    open: tuple[int, ...]
    assign: tuple[int, ...]
    cost: Fraction

    def to_dict(self) -> dict:
        return {
            "open": list(self.open),
            "assign": list(self.assign),
            "cost": fraction_str(self.cost),
        }


def fraction_str(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def parse_fraction(s: str) -> Fraction:
    num, _, den = s.partition("/")
    return Fraction(int(num), int(den or 1))


def nearest_open(inst: Instance, open_set: Iterable[int]) -> np.ndarray:
    opened = np.array(sorted(set(open_set)), dtype=np.int64)
    if opened.size == 0:
        raise ValueError("open set is empty")
    # argmin returns the first minimum, i.e. the lowest facility index
    return opened[np.argmin(inst.D[opened], axis=0)]


def solution_cost(inst: Instance, open_set: Iterable[int]) -> Solution:
    opened = tuple(sorted(set(int(i) for i in open_set)))
    assign = nearest_open(inst, opened)
    cost = int(inst.f[list(opened)].sum()) + int(inst.D[assign, np.arange(inst.n_c)].sum())
    return Solution(open=opened, assign=tuple(int(a) for a in assign), cost=Fraction(cost))


# ------------------------------------------------------------ validation

FULL_CHECK_LIMIT = 20_000_000  # n_f^2 * n_c above which the quadruple check is sampled


def validate_metric(inst: Instance, samples: int = 20_000, seed: int = 0) -> Violation | None:
    """Check positive opening costs and the bipartite triangle inequality
    D(i,j') <= D(i,j) + D(i',j) + D(i',j') over all quadruples.

    For each (i, j') the tightest right-hand side is min_i' (FD(i,i') + D(i',j'))
    with FD the extended facility distance, so the full check is exact without
    enumerating quadruples. Large instances are checked on sampled (i, j').
    """
    zero = np.flatnonzero(inst.f <= 0)
    if zero.size:
        i = int(zero[0])
        return Violation("zero opening cost", (i,), f"f[{i}] = {int(inst.f[i])}")
    D = inst.D
    n_f, n_c = inst.n_f, inst.n_c
    if n_f * n_f * n_c <= FULL_CHECK_LIMIT:
        rows = range(n_f)
        cols = None
    else:
        rng = np.random.default_rng(seed)
        rows = np.unique(rng.integers(0, n_f, size=min(samples, n_f)))
        cols = np.unique(rng.integers(0, n_c, size=min(samples, n_c)))
    for i in rows:
        i = int(i)
        fd = (D[i][None, :] + D).min(axis=1)  # FD(i, i') for all i'
        sub = D if cols is None else D[:, cols]
        rhs = (fd[:, None] + sub).min(axis=0)
        lhs = D[i] if cols is None else D[i, cols]
        bad = np.flatnonzero(lhs > rhs)
        if bad.size:
            jp = int(bad[0]) if cols is None else int(cols[bad[0]])
            k = int(np.argmin(fd + D[:, jp]))
            j = int(np.argmin(D[i] + D[k]))
            return Violation(
                "triangle inequality",
                (i, j, k, jp),
                f"D({i},{jp})={int(D[i, jp])} > D({i},{j})+D({k},{j})+D({k},{jp})="
                f"{int(D[i, j] + D[k, j] + D[k, jp])}",
            )
    return None


# ------------------------------------------------------------- generator


def default_span(n_f: int, n_c: int) -> int:
    return max(8, math.ceil(2 * math.sqrt(n_f + n_c)))


def generate_instance(
    n_f: int,
    n_c: int,
    seed: int,
    geometry: str = "uniform",
    span: int | None = None,
    f_max: int | None = None,
) -> Instance:
    """Random L1 instance on integer grid points, deterministic per seed.

    ``geometry`` is ``"uniform"`` (points uniform on the grid) or
    ``"clustered"`` (points scattered around a few random centres).
    """
    if n_f < 1 or n_c < 1:
        raise ValueError("n_f and n_c must be positive")
    span = default_span(n_f, n_c) if span is None else span
    f_max = 4 * span if f_max is None else f_max
    if span < 1 or f_max < 1:
        raise ValueError("span and f_max must be positive")
    rng = np.random.default_rng(seed)
    n = n_f + n_c
    if geometry == "uniform":
        pts = rng.integers(0, span + 1, size=(n, 2))
    elif geometry == "clustered":
        n_centres = max(1, int(math.sqrt(n_f)))
        centres = rng.integers(0, span + 1, size=(n_centres, 2))
        spread = max(1, span // (2 * n_centres))
        pick = rng.integers(0, n_centres, size=n)
        pts = np.clip(centres[pick] + rng.integers(-spread, spread + 1, size=(n, 2)), 0, span)
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    fac, cli = pts[:n_f], pts[n_f:]
    D = np.abs(fac[:, None, :] - cli[None, :, :]).sum(axis=2)
    f = rng.integers(1, f_max + 1, size=n_f)
    return Instance(f, D)
