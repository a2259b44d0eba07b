"""Command-line driver.

Exit codes: 0 success, 1 usage or input error, 2 a solve failed to converge,
3 a weak-duality assertion tripped (always a bug, never an input problem).
Artifacts (JSON certificate, CSV iterate traces, gap-versus-iteration plot
data) are byte-deterministic for fixed inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import problem_io
from .ambiguity import contains
from .arbitrage import check_na
from .errors import (NotConverged, RumaxError, SchemaError, ValidationError,
                     WeakDualityViolation)
from .lattice import build_lattice
from .problem_io import (InstanceShape, dumps_canonical, generate_instance,
                         measure_doc, parse_problem, strategy_doc,
                         write_instance)
from .solver import (biconjugate_check, duality_gap, entropic_value,
                     solve_dual, solve_primal)
from .transport import MetricParams, wasserstein_p
from .utility import Conjugate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_ASSERTION = 3


def _writer(out_dir: str, quiet: bool):
    os.makedirs(out_dir, exist_ok=True)

    def write(name: str, text: str):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        if not quiet:
            print(f"wrote {path}")
    return write


def _trace_csv(traces: dict[str, list]) -> str:
    lines = ["phase,iteration,lower,upper,gap"]
    for phase, rows in traces.items():
        for row in rows:
            lines.append(f"{phase},{row['iteration']},{row['lower']!r},"
                         f"{row['upper']!r},{row['gap']!r}")
    return "\n".join(lines) + "\n"


def _plot_csv(traces: dict[str, list]) -> str:
    lines = ["phase,iteration,gap"]
    for phase, rows in traces.items():
        for row in rows:
            lines.append(f"{phase},{row['iteration']},{row['gap']!r}")
    return "\n".join(lines) + "\n"


def _primal_doc(res) -> dict:
    return {"value": res.value,
            "upper_bound": res.upper_bound,
            "status": res.status,
            "iterations": res.iterations,
            "box_radius": res.box_radius,
            "strategy": strategy_doc(res.strategy),
            "worst_measure": measure_doc(res.worst_measure)}


def _dual_doc(res) -> dict:
    cert = res.certificate
    return {"value": cert.value,
            "lower_bound": res.lower_bound,
            "q_zero_value": res.q_zero_value,
            "status": res.status,
            "iterations": res.iterations,
            "q": cert.q,
            "martingale": measure_doc(cert.Q),
            "worst_measure": measure_doc(cert.P)}


def _apply_overrides(prob, args):
    if args.tol is not None:
        prob.primal_tol = args.tol
        prob.dual_tol = args.tol
    if args.max_iters is not None:
        prob.max_iters = args.max_iters
    return prob


def _run_solve(args) -> int:
    prob = _apply_overrides(parse_problem(args.problem), args)
    res = solve_primal(prob)
    write = _writer(args.out, args.quiet)
    write("certificate.json", dumps_canonical(
        {"subcommand": "solve", "problem": args.problem,
         "primal": _primal_doc(res)}))
    write("trace.csv", _trace_csv({"primal": res.trace}))
    write("gap_vs_iteration.csv", _plot_csv({"primal": res.trace}))
    if not args.quiet:
        print(f"value {res.value!r} status {res.status}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _run_dual(args) -> int:
    prob = _apply_overrides(parse_problem(args.problem), args)
    res = solve_dual(prob)
    write = _writer(args.out, args.quiet)
    write("certificate.json", dumps_canonical(
        {"subcommand": "dual", "problem": args.problem,
         "dual": _dual_doc(res)}))
    write("trace.csv", _trace_csv({"dual": res.trace}))
    write("gap_vs_iteration.csv", _plot_csv({"dual": res.trace}))
    if not args.quiet:
        print(f"value {res.value!r} status {res.status}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _gap_one(path: str, args, out_dir: str) -> int:
    prob = _apply_overrides(parse_problem(path), args)
    report = duality_gap(prob)
    write = _writer(out_dir, args.quiet)
    write("certificate.json", dumps_canonical(
        {"subcommand": "gap", "problem": path,
         "primal": _primal_doc(report.primal),
         "dual": _dual_doc(report.dual),
         "gap": {"abs": report.abs_gap, "rel": report.rel_gap,
                 "weak_duality_ok": report.weak_duality_ok}}))
    traces = {"primal": report.primal.trace, "dual": report.dual.trace}
    write("trace.csv", _trace_csv(traces))
    write("gap_vs_iteration.csv", _plot_csv(traces))
    if not args.quiet:
        print(f"{path}: U={report.primal_value!r} D={report.dual_value!r} "
              f"rel_gap={report.rel_gap:.3e}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _run_gap(args) -> int:
    paths = args.problem
    if len(paths) == 1:
        return _gap_one(paths[0], args, args.out)
    workers = max(1, int(os.environ.get("RUMAX_THREADS", "1")))
    codes = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = []
        for i, path in enumerate(paths):
            sub = os.path.join(args.out, f"instance_{i:04d}")
            futures.append(pool.submit(_gap_one, path, args, sub))
        for fut in futures:
            codes.append(fut.result())
    return max(codes)


def _run_entropic(args) -> int:
    prob = _apply_overrides(parse_problem(args.problem), args)
    res = entropic_value(prob)
    write = _writer(args.out, args.quiet)
    write("certificate.json", dumps_canonical(
        {"subcommand": "entropic", "problem": args.problem,
         "entropic": {"dual_value": res.dual_value,
                      "primal_value": res.primal_value,
                      "relative_entropy": res.relative_entropy,
                      "martingale": measure_doc(res.martingale),
                      "worst_measure": measure_doc(res.worst_measure)},
         "primal": _primal_doc(res.primal_result),
         "dual": _dual_doc(res.dual_result)}))
    traces = {"primal": res.primal_result.trace, "dual": res.dual_result.trace}
    write("trace.csv", _trace_csv(traces))
    write("gap_vs_iteration.csv", _plot_csv(traces))
    if not args.quiet:
        print(f"certainty equivalent {res.dual_value!r} "
              f"(primal route {res.primal_value!r})")
    ok = res.primal_result.converged and res.dual_result.converged
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _run_na_check(args) -> int:
    prob = parse_problem(args.problem)
    report = check_na(prob.ambiguity)
    write = _writer(args.out, args.quiet)
    write("na_report.json", dumps_canonical(
        {"subcommand": "na-check", "problem": args.problem,
         "holds": report.holds,
         "entries": [{"target": e.target, "status": e.status,
                      "epsilon": e.epsilon, "note": e.note}
                     for e in report.entries]}))
    lines = ["target,status,epsilon,note"]
    for e in report.entries:
        eps = "" if e.epsilon is None else repr(e.epsilon)
        lines.append(f"{e.target},{e.status},{eps},\"{e.note}\"")
    write("na_report.csv", "\n".join(lines) + "\n")
    if not args.quiet:
        for e in report.entries:
            print(f"{e.target}: {e.status}"
                  + (f" (eps={e.epsilon})" if e.epsilon is not None else ""))
    return EXIT_OK


def _run_wasserstein(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        doc = json.load(fh)
    lattice = build_lattice(doc)
    metric = doc.get("metric", {})
    mp = MetricParams(float(metric.get("rho", 0.0)),
                      float(metric.get("kappa", 1.0)),
                      float(metric.get("p", 2.0)))
    from .problem_io import _parse_measure
    mu_a = _parse_measure(doc["measure_a"], lattice, "/measure_a")
    mu_b = _parse_measure(doc["measure_b"], lattice, "/measure_b")
    res = wasserstein_p(mp, mu_a, mu_b)
    write = _writer(args.out, args.quiet)
    lines = ["leaf_a,leaf_b,weight"]
    for (i, j), w in sorted(res.plan.weights.items()):
        lines.append(f"{i},{j},{w!r}")
    write("plan.csv", "\n".join(lines) + "\n")
    write("wasserstein.json", dumps_canonical(
        {"subcommand": "wasserstein", "value": res.value,
         "power_value": res.power_value, "dual_value": res.dual_value}))
    if not args.quiet:
        print(f"distance {res.value!r}")
    return EXIT_OK


def _run_conjugate(args) -> int:
    prob = parse_problem(args.problem)
    conj = Conjugate(prob.utility)
    ys = np.concatenate([[0.0], np.logspace(-3, 3, args.points)])
    lines = ["leaf,y,v"]
    for leaf in prob.lattice.leaf_ids:
        for y in ys:
            lines.append(f"{leaf},{y!r},{conj.value(leaf, float(y))!r}")
    write = _writer(args.out, args.quiet)
    write("conjugate.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def _run_biconj(args) -> int:
    prob = _apply_overrides(parse_problem(args.problem), args)
    report = biconjugate_check(prob, seed=args.seed)
    write = _writer(args.out, args.quiet)
    write("biconjugate.json", dumps_canonical(
        {"subcommand": "biconj", "problem": args.problem,
         "monotone_ok": report.monotone_ok,
         "convex_ok": report.convex_ok,
         "fenchel_ok": report.fenchel_ok,
         "max_fenchel_violation": report.max_fenchel_violation,
         "certificate_gap": report.certificate_gap,
         "tightest": report.tightest_label}))
    if not args.quiet:
        print(f"biconjugation audit passed={report.passed}")
    return EXIT_OK if report.passed else EXIT_NOT_CONVERGED


def _run_gen(args) -> int:
    shape = InstanceShape(args.horizon, args.branching,
                          args.ambiguity, args.utility)
    doc = generate_instance(args.seed, shape)
    write_instance(args.file, doc)
    if not args.quiet:
        print(f"wrote {args.file}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rumax",
        description="Robust expected utility maximization on scenario lattices")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("problem", help="problem JSON file")
        p.add_argument("--out", default="rumax_out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=None,
                       help="override both solver tolerances")
        p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("solve", help="primal solve"))
    common(sub.add_parser("dual", help="dual solve with certificate"))
    p_gap = sub.add_parser("gap", help="both solves plus gap certification")
    p_gap.add_argument("problem", nargs="+", help="problem JSON file(s)")
    p_gap.add_argument("--out", default="rumax_out")
    p_gap.add_argument("--seed", type=int, default=0)
    p_gap.add_argument("--tol", type=float, default=None)
    p_gap.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    p_gap.add_argument("--quiet", action="store_true")
    common(sub.add_parser("entropic", help="certainty-equivalent solve"))
    common(sub.add_parser("na-check", help="no-arbitrage report"))
    p_w = sub.add_parser("wasserstein", help="coupling distance between two measures")
    p_w.add_argument("file", help="JSON with lattice, metric, measure_a, measure_b")
    p_w.add_argument("--out", default="rumax_out")
    p_w.add_argument("--quiet", action="store_true")
    p_c = sub.add_parser("conjugate", help="tabulate the utility conjugate")
    p_c.add_argument("problem")
    p_c.add_argument("--points", type=int, default=25)
    p_c.add_argument("--out", default="rumax_out")
    p_c.add_argument("--quiet", action="store_true")
    common(sub.add_parser("biconj", help="biconjugation audit"))
    p_g = sub.add_parser("gen", help="generate a seeded instance")
    p_g.add_argument("file", help="output problem path")
    p_g.add_argument("--seed", type=int, default=0)
    p_g.add_argument("--horizon", type=int, default=2)
    p_g.add_argument("--branching", type=int, default=2)
    p_g.add_argument("--ambiguity", default="finite_hull",
                     choices=["finite_hull", "moment_set", "wasserstein_ball",
                              "wasserstein_penalty"])
    p_g.add_argument("--utility", default="exponential",
                     choices=["exponential", "tabulated"])
    p_g.add_argument("--quiet", action="store_true")
    return parser


_DISPATCH = {
    "solve": _run_solve,
    "dual": _run_dual,
    "gap": _run_gap,
    "entropic": _run_entropic,
    "na-check": _run_na_check,
    "wasserstein": _run_wasserstein,
    "conjugate": _run_conjugate,
    "biconj": _run_biconj,
    "gen": _run_gen,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except WeakDualityViolation as exc:
        print(f"assertion breach: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (SchemaError, ValidationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError, RumaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
