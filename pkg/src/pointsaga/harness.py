"""Benchmark harness: subsampled datasets, step-size grids, CSV traces.

Protocol per plan: subsample once per fraction (fixed by a dedicated
seed, so every method and seed sees the same subproblem), pick each
method's step size on the first seed by grid search over powers of two,
run the full method x fraction x seed cross-product, estimate the optimal
value per fraction from a long refinement run plus everything observed,
and emit one CSV row per epoch with a JSON metadata sidecar.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .baselines import run_pegasos, run_saga
from .data import derive_constants, load_libsvm, subsample
from .engine import StepSizePlan, run, step_size_default
from .losses import NumericalError

METHOD_NAMES = ("pointsaga", "saga", "pegasos")
CSV_COLUMNS = (
    "method",
    "dataset",
    "fraction",
    "seed",
    "gamma",
    "epoch",
    "wall_seconds",
    "objective",
    "suboptimality",
    "iterate_kind",
)
# Regularization defaults by dataset name, matched case-insensitively.
DEFAULT_MU = {
    "covtype": 2e-6,
    "australian": 1e-4,
    "mushrooms": 1e-4,
    "rcv1": 5e-5,
}
DEFAULT_FRACTIONS = (0.05, 0.1, 1.0)
DEFAULT_GRID = (-14, 4)


def dataset_name(path):
    """Base name of a dataset file, minus compression and format suffixes."""
    name = Path(path).name
    for suffix in (".gz", ".txt", ".libsvm", ".svm"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


@dataclass
class ExperimentPlan:
    """Everything one benchmark invocation needs.

    gamma_source is one of "grid" (powers of two over grid_range),
    "theoretical" (each method's analysis-backed default), or "explicit"
    (the single value in gamma).  mu=None looks the dataset name up in
    DEFAULT_MU.
    """

    data: str
    loss: str
    out: str
    mu: float = None
    methods: tuple = METHOD_NAMES
    fractions: tuple = DEFAULT_FRACTIONS
    epochs: int = 20
    gamma_source: str = "grid"
    grid_range: tuple = DEFAULT_GRID
    gamma: float = None
    seeds: tuple = (0,)
    init: str = "zero"
    label_map: object = None
    subsample_seed: int = 0
    workers: int = 1
    t0: float = 1.0
    fstar_epochs: int = 500

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.fractions = tuple(float(f) for f in self.fractions)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.grid_range = tuple(int(e) for e in self.grid_range)
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise ValueError(f"unknown method {m!r}; expected subset of {METHOD_NAMES}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if not all(0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.gamma_source not in ("grid", "theoretical", "explicit"):
            raise ValueError(f"unknown gamma_source {self.gamma_source!r}")
        if self.gamma_source == "explicit" and not (self.gamma and self.gamma > 0):
            raise ValueError("explicit gamma_source needs a positive gamma")
        if self.grid_range[0] > self.grid_range[1]:
            raise ValueError("grid exponent range must satisfy a <= b")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.loss == "hinge" and "saga" in self.methods:
            raise ValueError("saga needs a differentiable loss; drop it or change the loss")

    def resolved_mu(self):
        if self.mu is not None:
            return float(self.mu)
        name = dataset_name(self.data).lower()
        for key, value in DEFAULT_MU.items():
            if key in name:
                return value
        raise ValueError(
            f"no mu given and dataset {name!r} has no default; pass mu explicitly"
        )


def load_plan_dataset(plan):
    label_map = plan.label_map
    if isinstance(label_map, dict):
        label_map = {float(k): float(v) for k, v in label_map.items()}
    return load_libsvm(plan.data, label_map=label_map)


def subproblem(plan, ds, fraction):
    """ProblemSpec for one fraction; identical for every method and seed."""
    sub = subsample(ds, fraction, plan.subsample_seed)
    return derive_constants(sub, plan.loss, plan.resolved_mu())


def _run_entropy(seed, method, fraction):
    return [int(seed), method, repr(float(fraction))]


def _execute(spec, plan, method, gamma, seed, fraction, epochs, average=False):
    entropy = _run_entropy(seed, method, fraction)
    if method == "pointsaga":
        return run(
            spec,
            epochs,
            StepSizePlan(gamma, source=plan.gamma_source),
            seed=entropy,
            init=plan.init,
            average=average,
        )
    if method == "saga":
        return run_saga(spec, epochs, gamma, seed=entropy, init=plan.init)
    return run_pegasos(spec, epochs, seed=entropy, t0=plan.t0)


def _theoretical_gamma(spec, method):
    if method == "pointsaga":
        return step_size_default(spec.dataset.n, spec.L, spec.mu)
    if method == "saga":
        # 1/(3L): the standard analysis-backed choice for this baseline.
        if not math.isfinite(spec.L):
            raise ValueError("theoretical saga step needs finite L")
        return 1.0 / (3.0 * spec.L)
    raise ValueError("pegasos has no step size; its schedule is fixed by t0")


@dataclass
class GridCell:
    method: str
    fraction: float
    gamma: float
    final_objective: float
    diverged: bool


@dataclass
class GridOutcome:
    """Chosen step size per (method, fraction), with the full sweep."""

    selected: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)


def grid_search(plan, ds=None, fractions=None, methods=None, epochs=None):
    """Sweep gamma = 2^a .. 2^b per method and fraction on the first seed.

    Selects the step size whose final-epoch objective is lowest, breaking
    ties toward the larger gamma and skipping diverged runs; a method
    whose every cell diverged gets None recorded instead of a selection.
    Pegasos has no step size and is never swept.
    """
    if ds is None:
        ds = load_plan_dataset(plan)
    fractions = plan.fractions if fractions is None else fractions
    methods = plan.methods if methods is None else methods
    epochs = plan.epochs if epochs is None else epochs
    seed = plan.seeds[0]
    lo, hi = plan.grid_range
    gammas = [2.0 ** e for e in range(lo, hi + 1)]
    out = GridOutcome()

    def sweep_cell(spec, method, fraction, gamma):
        trace = _execute(spec, plan, method, gamma, seed, fraction, epochs)
        final = trace.records[-1].objective
        bad = trace.diverged or not math.isfinite(final)
        return GridCell(method, fraction, gamma, final, bad)

    for fraction in fractions:
        spec = subproblem(plan, ds, fraction)
        for method in methods:
            if method == "pegasos":
                continue
            with ThreadPoolExecutor(max_workers=max(1, plan.workers)) as pool:
                cells = list(
                    pool.map(lambda g: sweep_cell(spec, method, fraction, g), gammas)
                )
            out.cells.extend(cells)
            best = None
            for cell in cells:
                if cell.diverged:
                    continue
                # <= keeps the larger gamma on ties (gammas ascend)
                if best is None or cell.final_objective <= best.final_objective:
                    best = cell
            out.selected[(method, fraction)] = None if best is None else best.gamma
    return out


def _select_gamma(plan, spec, method, fraction, grid_outcome):
    if method == "pegasos":
        return plan.t0
    if plan.gamma_source == "explicit":
        return plan.gamma
    if plan.gamma_source == "theoretical":
        return _theoretical_gamma(spec, method)
    chosen = grid_outcome.selected.get((method, fraction))
    if chosen is None:
        raise NumericalError(
            f"every grid step size diverged for {method} at fraction {fraction}"
        )
    return chosen


def estimate_fstar(plan, fraction=None, spec=None, gamma=None, observed=()):
    """Estimated optimal value for one fraction's subproblem.

    Minimum of a long refinement run of the proximal solver at the chosen
    step size and every finite objective already observed for that
    subproblem.  Never above any value it was shown.
    """
    if fraction is None:
        if len(plan.fractions) != 1:
            raise ValueError("fraction must be named when the plan has several")
        fraction = plan.fractions[0]
    if spec is None:
        spec = subproblem(plan, load_plan_dataset(plan), fraction)
    if not spec.mu > 0:
        raise ValueError("optimal-value estimation needs mu > 0")
    if gamma is None:
        if plan.gamma_source == "theoretical":
            gamma = _theoretical_gamma(spec, "pointsaga")
        elif plan.gamma_source == "explicit":
            gamma = plan.gamma
        else:
            outcome = grid_search(
                plan, fractions=(fraction,), methods=("pointsaga",)
            )
            gamma = outcome.selected[("pointsaga", fraction)]
            if gamma is None:
                raise NumericalError("no convergent step size found for refinement")
    trace = run(
        spec,
        plan.fstar_epochs,
        StepSizePlan(gamma, source="refinement"),
        seed=_run_entropy(plan.seeds[0], "fstar", fraction),
        init=plan.init,
    )
    values = [r.objective for r in trace.records if math.isfinite(r.objective)]
    values.extend(v for v in observed if math.isfinite(v))
    return float(min(values))


def _trace_rows(name, method, fraction, seed, gamma, trace):
    """CSV rows (without suboptimality) for epochs 1..E of one trace."""
    rows = []
    for rec in trace.records:
        if rec.epoch == 0:
            continue
        rows.append(
            {
                "method": method,
                "dataset": name,
                "fraction": fraction,
                "seed": seed,
                "gamma": gamma,
                "epoch": rec.epoch,
                "wall_seconds": rec.wall_seconds,
                "objective": rec.objective,
                "iterate_kind": "last",
            }
        )
        if rec.objective_avg is not None:
            rows.append(
                {
                    "method": method,
                    "dataset": name,
                    "fraction": fraction,
                    "seed": seed,
                    "gamma": gamma,
                    "epoch": rec.epoch,
                    "wall_seconds": rec.wall_seconds,
                    "objective": rec.objective_avg,
                    "iterate_kind": "averaged",
                }
            )
    return rows


def run_experiments(plan):
    """Execute a plan end to end; returns a summary dict.

    Writes the CSV to plan.out and a metadata sidecar to plan.out +
    ".meta.json".  Row order is sorted on (method, fraction, seed, gamma,
    epoch, iterate_kind) so identical invocations give identical bytes
    apart from wall_seconds.
    """
    started = time.perf_counter()
    ds = load_plan_dataset(plan)
    name = dataset_name(plan.data)
    mu = plan.resolved_mu()
    grid_outcome = GridOutcome()
    if plan.gamma_source == "grid":
        grid_outcome = grid_search(plan, ds=ds)

    specs = {f: subproblem(plan, ds, f) for f in plan.fractions}
    jobs = []
    for fraction in plan.fractions:
        spec = specs[fraction]
        for method in plan.methods:
            gamma = _select_gamma(plan, spec, method, fraction, grid_outcome)
            average = method == "pointsaga" and plan.loss == "hinge"
            for seed in plan.seeds:
                jobs.append((spec, method, gamma, seed, fraction, average))

    def run_job(job):
        spec, method, gamma, seed, fraction, average = job
        trace = _execute(spec, plan, method, gamma, seed, fraction, plan.epochs, average)
        return job, trace

    with ThreadPoolExecutor(max_workers=max(1, plan.workers)) as pool:
        results = list(pool.map(run_job, jobs))

    observed = {f: [] for f in plan.fractions}
    diverged = []
    rows = []
    for (spec, method, gamma, seed, fraction, _), trace in results:
        rows.extend(_trace_rows(name, method, fraction, seed, gamma, trace))
        for rec in trace.records:
            if math.isfinite(rec.objective):
                observed[fraction].append(rec.objective)
            if rec.objective_avg is not None and math.isfinite(rec.objective_avg):
                observed[fraction].append(rec.objective_avg)
        if trace.diverged:
            diverged.append({"method": method, "fraction": fraction, "seed": seed,
                             "gamma": gamma})

    fstar = {}
    for fraction in plan.fractions:
        spec = specs[fraction]
        if plan.gamma_source == "grid" and ("pointsaga", fraction) not in grid_outcome.selected:
            refine_gamma = None  # not swept above; estimate_fstar sweeps it
        else:
            refine_gamma = _select_gamma(plan, spec, "pointsaga", fraction, grid_outcome)
        fstar[fraction] = estimate_fstar(
            plan,
            fraction=fraction,
            spec=spec,
            gamma=refine_gamma,
            observed=observed[fraction],
        )

    for row in rows:
        row["suboptimality"] = row["objective"] - fstar[row["fraction"]]
    rows.sort(
        key=lambda r: (r["method"], r["fraction"], r["seed"], r["gamma"], r["epoch"],
                       r["iterate_kind"])
    )

    out_path = Path(plan.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})

    meta = {
        "version": __version__,
        "dataset": name,
        "data_path": str(plan.data),
        "loss": plan.loss,
        "mu": mu,
        "methods": list(plan.methods),
        "fractions": list(plan.fractions),
        "epochs": plan.epochs,
        "seeds": list(plan.seeds),
        "init": plan.init,
        "label_map": None if plan.label_map is None else plan.label_map,
        "gamma_source": plan.gamma_source,
        "grid_range": list(plan.grid_range),
        "selected_gamma": {
            f"{m}@{f}": g for (m, f), g in grid_outcome.selected.items()
        },
        "explicit_gamma": plan.gamma,
        "t0": plan.t0,
        "subsample_seed": plan.subsample_seed,
        "rng": "pcg64-raw-mask-rejection",
        "fstar": {repr(f): v for f, v in fstar.items()},
        "fstar_epochs": plan.fstar_epochs,
        "diverged": diverged,
        "row_count": len(rows),
        "harness_seconds": time.perf_counter() - started,
    }
    with open(str(out_path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return {
        "csv": str(out_path),
        "meta": str(out_path) + ".meta.json",
        "rows": len(rows),
        "fstar": fstar,
        "selected": dict(grid_outcome.selected),
        "diverged": diverged,
    }


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value
