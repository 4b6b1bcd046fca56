"""Command-line front end: run experiments, estimate f*, run checks.

Flags mirror ExperimentPlan; a JSON config file can supply any of them,
with explicit command-line flags taking precedence.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import diagnostics
from .engine import step_size_default
from .harness import (
    DEFAULT_FRACTIONS,
    DEFAULT_GRID,
    METHOD_NAMES,
    ExperimentPlan,
    estimate_fstar,
    run_experiments,
    subproblem,
    load_plan_dataset,
)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _ints(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v != "")


def _methods(text):
    if isinstance(text, (list, tuple)):
        return tuple(text)
    return tuple(m.strip() for m in str(text).split(",") if m.strip())


def _grid(text):
    if isinstance(text, (list, tuple)):
        lo, hi = text
        return int(lo), int(hi)
    lo, _, hi = str(text).partition("..")
    if not _:
        raise argparse.ArgumentTypeError(f"grid must look like A..B, got {text!r}")
    return int(lo), int(hi)


def _add_plan_flags(parser, need_out):
    parser.add_argument("--data", help="dataset file (LIBSVM text, .gz ok)")
    parser.add_argument("--loss", choices=("hinge", "logistic", "squared"))
    parser.add_argument("--l2", type=float, help="L2 strength mu (default: by dataset name)")
    parser.add_argument("--methods", help="comma list from: " + ",".join(METHOD_NAMES))
    parser.add_argument("--fractions", help="comma list of subsample fractions in (0,1]")
    parser.add_argument("--epochs", type=int)
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--grid", help="step-size grid exponents, A..B for 2^A..2^B")
    group.add_argument("--gamma", type=float, help="one explicit step size")
    group.add_argument(
        "--gamma-theoretical", action="store_true", default=None,
        help="use each method's analysis-backed step size",
    )
    parser.add_argument("--seeds", help="comma list of integer seeds")
    parser.add_argument("--init", choices=("zero", "subgradient"))
    parser.add_argument("--label-map", help='JSON object mapping raw labels, e.g. {"1":1,"2":-1}')
    parser.add_argument("--subsample-seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--t0", type=float, help="pegasos schedule offset")
    parser.add_argument("--fstar-epochs", type=int)
    parser.add_argument("--config", help="JSON file supplying any of these flags")
    if need_out:
        parser.add_argument("--out", help="CSV output path")


def _build_plan(args, need_out):
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)

    def pick(flag, fallback=None):
        value = getattr(args, flag, None)
        if value is None:
            value = cfg.get(flag, fallback)
        return value

    missing = [k for k in (("data", "loss") + (("out",) if need_out else ()))
               if pick(k) is None]
    if missing:
        raise SystemExit(f"missing required option(s): {', '.join('--' + m for m in missing)}")

    grid = pick("grid")
    gamma = pick("gamma")
    theoretical = pick("gamma_theoretical")
    if sum(x is not None and x is not False for x in (grid, gamma, theoretical)) > 1:
        raise SystemExit("choose one of --grid, --gamma, --gamma-theoretical")
    if gamma is not None:
        source, grid_range = "explicit", DEFAULT_GRID
    elif theoretical:
        source, grid_range = "theoretical", DEFAULT_GRID
    else:
        source, grid_range = "grid", _grid(grid) if grid is not None else DEFAULT_GRID

    label_map = pick("label_map")
    if isinstance(label_map, str) and label_map != "raw":
        label_map = json.loads(label_map)

    return ExperimentPlan(
        data=pick("data"),
        loss=pick("loss"),
        out=pick("out", "results.csv"),
        mu=pick("l2"),
        methods=_methods(pick("methods", ",".join(METHOD_NAMES))),
        fractions=_floats(pick("fractions", ",".join(str(f) for f in DEFAULT_FRACTIONS))),
        epochs=int(pick("epochs", 20)),
        gamma_source=source,
        grid_range=grid_range,
        gamma=gamma,
        seeds=_ints(pick("seeds", "0")),
        init=pick("init", "zero"),
        label_map=label_map,
        subsample_seed=int(pick("subsample_seed", 0)),
        workers=int(pick("workers", 1)),
        t0=float(pick("t0", 1.0)),
        fstar_epochs=int(pick("fstar_epochs", 500)),
    )


def _cmd_run(args):
    plan = _build_plan(args, need_out=True)
    summary = run_experiments(plan)
    print(f"csv={summary['csv']}")
    print(f"meta={summary['meta']}")
    print(f"rows={summary['rows']}")
    for (method, fraction), gamma in sorted(summary["selected"].items()):
        print(f"gamma[{method}@{fraction}]={gamma}")
    for fraction, value in sorted(summary["fstar"].items()):
        print(f"fstar[{fraction}]={value}")
    if summary["diverged"]:
        print(f"diverged_runs={len(summary['diverged'])}")
    return 0


def _cmd_fstar(args):
    plan = _build_plan(args, need_out=False)
    ds = load_plan_dataset(plan)
    for fraction in plan.fractions:
        spec = subproblem(plan, ds, fraction)
        value = estimate_fstar(plan, fraction=fraction, spec=spec)
        print(f"fstar[{fraction}]={value}")
    return 0


def _cmd_check(args):
    reports = []
    for loss in ("squared", "logistic", "hinge"):
        reports.append(diagnostics.check_prox_oracle(loss, draws=args.draws, seed=args.seed))
    for loss in ("squared", "logistic", "hinge"):
        reports.append(diagnostics.check_operators(loss, trials=args.draws, seed=args.seed))
    for pair in diagnostics.conjugate_pairs():
        for gamma in (0.5, 1.0, 3.0):
            reports.append(diagnostics.check_moreau(pair, gamma, samples=100, seed=args.seed))
    spec, ref = diagnostics.synthetic_quadratic(10, 4, 100.0, seed=args.seed)
    gamma = step_size_default(spec.dataset.n, spec.L, spec.mu)
    reports.append(diagnostics.check_descent(spec, ref, gamma, trials=args.trials, seed=args.seed))
    reports.append(diagnostics.check_chained_rate(spec, ref, seeds=20, seed=args.seed))
    ok = True
    for report in reports:
        print(report)
        print()
        ok = ok and report.passed
    print(f"all_passed={int(ok)}")
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pointsaga",
        description="Finite-sum solver benchmarks: run experiments, estimate "
        "optimal values, and check the theory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark plan and write CSV traces")
    _add_plan_flags(p_run, need_out=True)
    p_run.set_defaults(fn=_cmd_run)

    p_fstar = sub.add_parser("fstar", help="estimate the optimal value per fraction")
    _add_plan_flags(p_fstar, need_out=False)
    p_fstar.set_defaults(fn=_cmd_fstar)

    p_check = sub.add_parser("check", help="run the theory-check suite")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--trials", type=int, default=2000, help="Monte-Carlo step trials")
    p_check.add_argument("--draws", type=int, default=2000, help="random sweep size")
    p_check.set_defaults(fn=_cmd_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
