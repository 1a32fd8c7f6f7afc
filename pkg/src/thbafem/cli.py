"""Command line interface: ``thbafem {run,uniform,check-mesh,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .afem import _jsonable, complexity_lambda, contraction_diagnostic, rate_estimate, \
    read_records, run_afem, run_uniform
from .mesh import HierPartition, is_admissible, structural_violations, LevelCell
from .problems import PRESETS, make_problem
from .splines import MAX_LEVEL


def _theta(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("theta must lie in (0, 1]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_problem_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", choices=PRESETS, default="smooth")
    p.add_argument("--degree", type=int, choices=(2, 3, 4), default=3)
    p.add_argument("--base-cells", type=_positive_int, default=4)
    p.add_argument("--theta", type=_theta, default=0.5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=_positive_int, default=20)
    p.add_argument("--max-level", type=int, choices=range(0, MAX_LEVEL + 1), default=MAX_LEVEL,
                   metavar=f"{{0..{MAX_LEVEL}}}")
    p.add_argument("--output", default="afem_out")
    p.add_argument("--seed", type=_seed, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thbafem",
                                 description="Adaptive THB-spline FEM for the clamped biharmonic problem")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="adaptive loop")
    _add_problem_flags(run)
    run.add_argument("--dump-indicators", action="store_true")

    uni = sub.add_parser("uniform", help="uniform refinement baseline")
    _add_problem_flags(uni)
    uni.add_argument("--levels", type=_positive_int, default=5)

    chk = sub.add_parser("check-mesh", help="validate a mesh JSON document")
    chk.add_argument("mesh")

    rep = sub.add_parser("report", help="recompute rates from iterations.csv")
    rep.add_argument("csv")
    rep.add_argument("--output", default=None, help="write the report as JSON here")
    return ap


def _spec(args):
    return make_problem(args.problem, degree=args.degree, base_cells=args.base_cells,
                        theta=args.theta, tol=args.tol, max_iter=args.max_iter,
                        max_level=args.max_level, seed=args.seed)


def _print_summary(run, out):
    s = run.summary
    print(f"status: {run.status}")
    print(f"iterations: {s['iterations']}  cells: {s['final_cells']}  dof: {s['final_dof']}")
    print(f"eta: {s['final_eta']:.6e}")
    if "final_energy_error" in s:
        print(f"energy error: {s['final_energy_error']:.6e}")
    print(f"outputs: {out}")


def _check_mesh(path: str) -> int:
    try:
        doc = json.loads(Path(path).read_text())
        cells = [LevelCell(*map(int, c)) for c in doc["cells"]]
        base = int(doc["base_cells"])
        degree = int(doc["degree"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: cannot read mesh: {exc}", file=sys.stderr)
        return 1
    problems = structural_violations(cells, base)
    if len(set(cells)) != len(cells):
        problems.insert(0, "duplicate cells")
    if problems:
        print("admissible: false")
        for p in problems:
            print(f"  violation: {p}")
        return 1
    P = HierPartition(degree, base, frozenset(cells))
    ok, viol = is_admissible(P)
    print(f"admissible: {'true' if ok else 'false'}")
    for v in viol:
        print(f"  violation: {v}")
    return 0 if ok else 1


def _report(args) -> int:
    recs = read_records(args.csv)
    rep = {"records": len(recs), "Lambda": complexity_lambda(recs), "rates": {}}
    for name in ("energy", "eta", "total"):
        try:
            rf = rate_estimate(recs, name)
            rep["rates"][name] = {"s": rf.s, "residual": rf.residual}
        except ValueError as exc:
            rep["rates"][name] = None
            logging.getLogger(__name__).info("rate %s skipped: %s", name, exc)
    cd = contraction_diagnostic(recs)
    rep["contraction"] = None if cd is None else {
        "best_C": cd.best_C, "max_ratio": cd.best_max_ratio, "fitted_alpha": cd.fitted_alpha}
    text = json.dumps(_jsonable(rep), indent=2)
    print(text)
    if args.output:
        Path(args.output).write_text(text)
    return 0


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check-mesh":
            return _check_mesh(args.mesh)
        if args.command == "report":
            return _report(args)
        spec = _spec(args)
        if args.command == "run":
            run = run_afem(spec, args.output, dump_indicators=args.dump_indicators)
        else:
            run = run_uniform(spec, args.levels, args.output)
        _print_summary(run, args.output)
        return 0
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
