"""Command line entry point: ``bipfacloc {gen,run,bench,verify}``.

Every command that produces a solution also runs the matching checkers and
exits with status 1 when any of them reports a violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from .exact import OPT_MAX_FACILITIES, OracleRefused, brute_force_opt, mettu_plaxton, verify_mp_sparseness
from .facloc import build_overlay, locate_facilities, verify_solution
from .instance import (
    InvalidInstance,
    Solution,
    compute_radii,
    fraction_str,
    generate_instance,
    load_instance,
    parse_fraction,
    save_instance,
    solution_cost,
    validate_metric,
)
from .rulingset import verify_ruling

log = logging.getLogger("bipfacloc")

# brute force is only run implicitly (for ratio_vs_opt) up to this many facilities
AUTO_OPT_FACILITIES = 12
BENCH_FIELDS = ["n_f", "n_c", "seed", "rounds", "mdd_iterations", "cost_ratio_vs_mp", "verdict"]


def _verdict(v) -> str:
    return "ok" if v is None else str(v)


def _write_json(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def run_algorithm(inst, algorithm: str, seed: int = 0) -> dict:
    """Solve ``inst`` and return the result record with embedded checker verdicts."""
    radii = compute_radii(inst)
    record: dict = {"algorithm": algorithm, "seed": seed, "n_f": inst.n_f, "n_c": inst.n_c}
    checks: dict = {}
    if algorithm == "locate":
        res = locate_facilities(inst, seed=seed)
        record.update(res.to_dict())
        sol = res.solution
        checks["solution"] = _verdict(verify_solution(inst, radii, sol))
        checks["ruling_set"] = _verdict(verify_ruling(build_overlay(inst, radii), res.ruling_set))
    elif algorithm == "mp":
        sol = mettu_plaxton(inst, radii)
        record.update(sol.to_dict())
        checks["sparseness"] = _verdict(verify_mp_sparseness(inst, radii, sol.open))
        checks["assignment"] = _verdict(_check_assignment(inst, sol))
    elif algorithm == "opt":
        sol = brute_force_opt(inst)
        record.update(sol.to_dict())
        checks["assignment"] = _verdict(_check_assignment(inst, sol))
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    if algorithm != "mp":
        record["ratio_vs_mp"] = fraction_str(sol.cost / mettu_plaxton(inst, radii).cost)
    if algorithm != "opt" and inst.n_f <= AUTO_OPT_FACILITIES:
        record["ratio_vs_opt"] = fraction_str(sol.cost / brute_force_opt(inst).cost)
    record["checks"] = checks
    return record


def _check_assignment(inst, sol: Solution):
    from .instance import Violation

    expected = solution_cost(inst, sol.open)
    if expected.assign != sol.assign or expected.cost != sol.cost:
        return Violation("assignment", (), "assignment or cost differs from the nearest-open rule")
    return None


def _all_ok(record: dict) -> bool:
    return all(v == "ok" for v in record.get("checks", {}).values())


# ------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    if args.n_f < 1 or args.n_c < 1:
        raise InvalidInstance("n_f and n_c must be at least 1")
    inst = generate_instance(args.n_f, args.n_c, args.seed, geometry=args.geometry, f_max=args.f_max)
    if args.out is None or args.out == "-":
        sys.stdout.write(inst.to_json())
    else:
        save_instance(inst, args.out)
    print(
        f"instance n_f={inst.n_f} n_c={inst.n_c} seed={args.seed} f_max={inst.f_max} d_max={inst.d_max}"
        + (f" -> {args.out}" if args.out and args.out != "-" else ""),
        file=sys.stderr,
    )
    return 0


def cmd_run(args) -> int:
    inst = load_instance(args.instance)
    record = run_algorithm(inst, args.algorithm, args.seed)
    _write_json(record, args.out)
    ok = _all_ok(record)
    print(
        f"{args.algorithm}: cost={record['cost']} open={len(record['open'])}"
        + (f" rounds={record['rounds']}" if "rounds" in record else "")
        + (" checks ok" if ok else " CHECK FAILED"),
        file=sys.stderr,
    )
    return 0 if ok else 1


def bench_cell(n: int, seed: int) -> dict:
    inst = generate_instance(n, n, seed)
    radii = compute_radii(inst)
    res = locate_facilities(inst, seed=seed)
    mp = mettu_plaxton(inst, radii)
    v = verify_solution(inst, radii, res.solution) or verify_ruling(build_overlay(inst, radii), res.ruling_set)
    return {
        "n_f": n,
        "n_c": n,
        "seed": seed,
        "rounds": res.rounds,
        "mdd_iterations": res.stats.mdd_iterations,
        "cost_ratio_vs_mp": f"{float(res.solution.cost / mp.cost):.6f}",
        "verdict": _verdict(v),
    }


def run_bench(sizes: list[int], trials: int, jobs: int = 1) -> list[dict]:
    cells = [(n, s) for n in sizes for s in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(bench_cell, *zip(*cells)))
    else:
        rows = []
        for n, s in cells:
            t = time.perf_counter()
            rows.append(bench_cell(n, s))
            log.info("bench n=%d seed=%d rounds=%d (%.1fs)", n, s, rows[-1]["rounds"], time.perf_counter() - t)
    rows.sort(key=lambda r: (r["n_f"], r["seed"]))
    return rows


def median_rounds(rows: list[dict]) -> dict[int, float]:
    by_size: dict[int, list[int]] = {}
    for r in rows:
        by_size.setdefault(int(r["n_f"]), []).append(int(r["rounds"]))
    return {n: statistics.median(v) for n, v in sorted(by_size.items())}


def cmd_bench(args) -> int:
    sizes = [int(x) for x in args.sizes.split(",") if x]
    if any(n < 1 or n > 1 << 13 for n in sizes):
        raise InvalidInstance("bench sizes must lie in [1, 8192]")
    rows = run_bench(sizes, args.trials, args.jobs)
    out = open(args.out, "w", newline="") if args.out and args.out != "-" else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=BENCH_FIELDS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    for n, m in median_rounds(rows).items():
        print(f"n={n}: median rounds {m}", file=sys.stderr)
    bad = [r for r in rows if r["verdict"] != "ok"]
    return 1 if bad else 0


def cmd_verify(args) -> int:
    """Check an instance file, and optionally a result file against it."""
    inst = load_instance(args.instance, validate=False)
    problems = []
    v = validate_metric(inst)
    if v is not None:
        problems.append(f"instance: {v}")
    if args.result:
        rec = json.loads(Path(args.result).read_text())
        if v is None:
            radii = compute_radii(inst)
            sol = Solution(tuple(rec["open"]), tuple(rec["assign"]), parse_fraction(rec["cost"]))
            alg = rec.get("algorithm", "locate")
            if alg == "mp":
                checks = [verify_mp_sparseness(inst, radii, sol.open), _check_assignment(inst, sol)]
            elif alg == "opt":
                checks = [_check_assignment(inst, sol)]
                if inst.n_f <= OPT_MAX_FACILITIES and brute_force_opt(inst).cost != sol.cost:
                    problems.append("result: cost is not optimal")
            else:
                checks = [verify_solution(inst, radii, sol)]
                if "ruling_set" in rec:
                    checks.append(verify_ruling(build_overlay(inst, radii), rec["ruling_set"]["members"]))
            problems += [f"result: {c}" for c in checks if c is not None]
    for p in problems:
        print(p, file=sys.stderr)
    if not problems:
        print("ok", file=sys.stderr)
    return 1 if problems else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bipfacloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random L1 instance")
    g.add_argument("n_f", type=int)
    g.add_argument("n_c", type=int)
    g.add_argument("seed", type=int, nargs="?")
    g.add_argument("--seed", dest="seed_opt", type=int, default=None)
    g.add_argument("--f-max", type=int, default=None, help="opening costs drawn from [1, f_max]")
    g.add_argument("--geometry", choices=["uniform", "clustered"], default="uniform")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="solve an instance file")
    r.add_argument("instance")
    r.add_argument("--algorithm", choices=["locate", "mp", "opt"], default="locate")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run locate over a grid of sizes and seeds")
    b.add_argument("--sizes", default="64,256,1024")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="check an instance and optionally a result record")
    v.add_argument("instance")
    v.add_argument("result", nargs="?")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "gen":
        if args.seed is None:
            args.seed = args.seed_opt if args.seed_opt is not None else 0
    try:
        return args.func(args)
    except (InvalidInstance, OracleRefused, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
