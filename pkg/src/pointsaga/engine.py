"""Accelerated incremental proximal solver for regularized finite sums.

The solver keeps one stored gradient per example.  A step samples an
example j, forms the shifted point ``z = x + gamma*(g_j - gbar)``, takes
the proximal map of term j at z, and refreshes g_j with the subgradient
the proximal map certifies, so the table mean tracks the full gradient
without ever recomputing it.

Two table conventions are supported:

* ``table_mode="vector"`` (reference): each stored gradient is the full
  vector ``(z - x_new)/gamma``, which for folded L2 terms carries a dense
  ``mu*x_new`` component.  All theory diagnostics run against this mode.
* ``table_mode="scalar"``: only the loss's scalar coefficient is stored
  per example and the regularizer component of every table entry is read
  off the current iterate (the standard practice for linear models).  The
  update touches only the sampled row's support plus a uniform shrink, so
  it admits an exact lazy sparse implementation.

Backends: ``dense`` materializes the iterate every step; ``lazy`` (scalar
mode only) defers untouched coordinates with per-coordinate lag counters,
applying the accumulated shrink-and-drift in closed form on touch.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .losses import LOSS_IDS, _prox_scalar, objective, prox_term, term_subgradient

DIVERGENCE_THRESHOLD = 1e12


def _entropy(seed):
    """Normalize seed material to a SeedSequence.

    Accepts an int, an existing SeedSequence, or a list whose elements are
    non-negative ints or strings (strings are folded in as little-endian
    bytes), so derived streams can be labeled by purpose.
    """
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        return np.random.SeedSequence(int(seed))
    if isinstance(seed, (list, tuple)):
        words = []
        for part in seed:
            if isinstance(part, str):
                words.append(int.from_bytes(part.encode(), "little"))
            elif isinstance(part, (int, np.integer)):
                if part < 0:
                    raise ValueError("seed parts must be non-negative")
                words.append(int(part))
            else:
                raise TypeError(f"bad seed part {part!r}")
        return np.random.SeedSequence(words)
    raise TypeError(f"bad seed {seed!r}")


class IndexSampler:
    """Portable bounded-integer stream for example sampling.

    Draws raw 64-bit words from PCG64 (``BitGenerator.random_raw``, which
    is stream-stable for a fixed seed) and maps them to ``[0, bound)`` by
    masking to the next power of two and rejecting out-of-range words.
    The resulting stream depends only on the seed material and this
    documented bounding method, never on numpy Generator internals.
    """

    def __init__(self, seed):
        self._bitgen = np.random.PCG64(_entropy(seed))

    def indices(self, count, bound):
        """count i.i.d. uniform draws from [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        out = np.empty(count, dtype=np.int64)
        if bound == 1:
            out[:] = 0
            return out
        mask = np.uint64((1 << int(bound - 1).bit_length()) - 1)
        filled = 0
        while filled < count:
            need = count - filled
            raw = self._bitgen.random_raw(max(2 * need, 8))
            cand = (raw & mask).astype(np.int64)
            good = cand[cand < bound]
            take = min(good.size, need)
            out[filled:filled + take] = good[:take]
            filled += take
        return out

    def index(self, bound):
        return int(self.indices(1, bound)[0])

    def permutation(self, n):
        """Deterministic permutation: stable argsort of n raw 64-bit keys."""
        keys = self._bitgen.random_raw(n)
        return np.argsort(keys, kind="stable")


def step_size_default(n, L, mu):
    """Step size from the solver's convergence analysis.

    Requires 0 < mu < L with L finite (so not available for the hinge);
    callers outside that regime must supply their own gamma.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not (mu > 0):
        raise ValueError("theoretical step size needs mu > 0; supply gamma explicitly")
    if not math.isfinite(L):
        raise ValueError("theoretical step size needs finite L; supply gamma explicitly")
    if L <= mu:
        raise ValueError("theoretical step size needs L > mu; supply gamma explicitly")
    return math.sqrt((n - 1) ** 2 + 4 * n * L / mu) / (2 * L * n) - (1 - 1 / n) / (2 * L)


def kappa(mu, gamma):
    """Per-step contraction factor mu*gamma/(1 + mu*gamma)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return mu * gamma / (1.0 + mu * gamma)


@dataclass
class StepSizePlan:
    """A chosen step size and where it came from."""

    gamma: float
    source: str = "user"

    def __post_init__(self):
        if not (self.gamma > 0) or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")

    @classmethod
    def theoretical(cls, spec):
        return cls(step_size_default(spec.dataset.n, spec.L, spec.mu), source="theoretical")

    @classmethod
    def fixed(cls, gamma):
        return cls(float(gamma), source="user")

    @classmethod
    def nonsmooth(cls, radius, subgrad_bound, n):
        """gamma = radius / (subgrad_bound * sqrt(n)) for non-smooth runs."""
        if radius <= 0 or subgrad_bound <= 0:
            raise ValueError("radius and subgrad_bound must be positive")
        return cls(radius / (subgrad_bound * math.sqrt(n)), source="nonsmooth")


class GradientTable:
    """Per-example stored gradients with an incrementally maintained mean."""

    def __init__(self, entries, mean=None):
        self.entries = entries
        self.mean = entries.mean(axis=0) if mean is None else mean

    def update(self, j, new):
        delta = new - self.entries[j]
        self.entries[j] = new
        self.mean += delta / self.entries.shape[0]

    def recomputed_mean(self):
        return self.entries.mean(axis=0)

    def copy(self):
        return GradientTable(self.entries.copy(), self.mean.copy())


@dataclass
class SolverState:
    """Mutable solver state; ``step`` advances it in place.

    Vector mode uses ``table``; scalar mode uses ``nu`` (per-example loss
    coefficients) and ``loss_mean`` (mean of nu_i * row_i).  The lazy
    backend additionally carries per-coordinate ``lags`` and latches the
    run's gamma and per-step shrink factor at the first step.
    """

    x: np.ndarray
    sampler: IndexSampler
    backend: str = "dense"
    table_mode: str = "vector"
    step_count: int = 0
    table: GradientTable = None
    nu: np.ndarray = None
    loss_mean: np.ndarray = None
    lags: np.ndarray = None
    gamma: float = None
    shrink: float = None

    def copy(self):
        return SolverState(
            x=self.x.copy(),
            sampler=self.sampler,
            backend=self.backend,
            table_mode=self.table_mode,
            step_count=self.step_count,
            table=self.table.copy() if self.table is not None else None,
            nu=self.nu.copy() if self.nu is not None else None,
            loss_mean=self.loss_mean.copy() if self.loss_mean is not None else None,
            lags=self.lags.copy() if self.lags is not None else None,
            gamma=self.gamma,
            shrink=self.shrink,
        )


def init_state(spec, x0=None, init="zero", seed=0, backend="dense", table_mode="vector"):
    """Build a SolverState.

    init="zero" starts the table at zero (the recommended default);
    init="subgradient" evaluates one subgradient per term at x0.
    """
    if backend not in ("dense", "lazy"):
        raise ValueError(f"unknown backend {backend!r}")
    if table_mode not in ("vector", "scalar"):
        raise ValueError(f"unknown table_mode {table_mode!r}")
    if backend == "lazy" and table_mode != "scalar":
        raise ValueError("the lazy backend stores scalar coefficients only; use table_mode='scalar'")
    ds = spec.dataset
    x = np.zeros(ds.d) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (ds.d,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({ds.d},)")
    state = SolverState(x=x, sampler=IndexSampler(seed), backend=backend, table_mode=table_mode)
    if table_mode == "vector":
        entries = np.zeros((ds.n, ds.d))
        if init == "subgradient":
            for i in range(ds.n):
                entries[i] = term_subgradient(spec, i, x)
        elif init != "zero":
            raise ValueError(f"unknown init {init!r}")
        state.table = GradientTable(entries)
    else:
        if init == "subgradient":
            state.nu = np.asarray(
                losses.loss_subgradient(spec.loss, ds.margins(x), ds.labels), dtype=np.float64
            )
        elif init == "zero":
            state.nu = np.zeros(ds.n)
        else:
            raise ValueError(f"unknown init {init!r}")
        state.loss_mean = np.asarray(ds.csr().T @ state.nu).ravel() / max(ds.n, 1)
    if backend == "lazy":
        state.lags = np.zeros(ds.d, dtype=np.int64)
    return state


def _latch_gamma(state, spec, gamma):
    if state.gamma is None:
        state.gamma = gamma
        state.shrink = 1.0 / (1.0 + spec.mu * gamma)
    elif gamma != state.gamma:
        if state.backend == "lazy":
            raise ValueError("a lazy run must keep gamma constant")
        state.gamma = gamma
        state.shrink = 1.0 / (1.0 + spec.mu * gamma)


def _catch_up(state, where):
    """Apply the deferred shrink-and-drift to coordinates `where` in place.

    Between touches of a coordinate its recursion is x_d <- rho*(x_d -
    gamma*wbar_d) with wbar_d frozen, so m deferred steps collapse to
    x_d <- rho^m x_d - rho*gamma*wbar_d*(1-rho^m)/(1-rho)  (rho < 1)
    or x_d - m*gamma*wbar_d when mu = 0.
    """
    m = state.step_count - state.lags[where]
    live = m > 0
    if not np.any(live):
        return
    m = m[live].astype(np.float64)
    idx = where[live]
    rho, gamma = state.shrink, state.gamma
    if rho < 1.0:
        powm = rho ** m
        geo = (1.0 - powm) / (1.0 - rho)
    else:
        powm = 1.0
        geo = m
    state.x[idx] = powm * state.x[idx] - rho * gamma * geo * state.loss_mean[idx]
    state.lags[idx] = state.step_count


def materialize(state):
    """Flush all deferred lazy updates; no-op for dense backends."""
    if state.backend == "lazy" and state.step_count:
        _catch_up(state, np.arange(state.x.size))
    return state.x


def _step_vector(state, spec, gamma, j):
    table = state.table
    z = state.x + gamma * (table.entries[j] - table.mean)
    x_new = prox_term(spec, j, z, gamma)
    table.update(j, (z - x_new) / gamma)
    state.x = x_new


def _scalar_core(state, spec, gamma, j, support_z, row):
    """Shared scalar-mode math: returns (new support values, new loss scalar)."""
    rho = state.shrink
    y = float(spec.dataset.labels[j])
    a = rho * float(row.values @ support_z)
    gamma_eff = rho * gamma
    res = _prox_scalar(spec.loss, a, y, gamma_eff * row.sq_norm)
    new_support = rho * support_z + ((res.c - a) / row.sq_norm) * row.values
    nu_new = (a - res.c) / (gamma_eff * row.sq_norm)
    return new_support, nu_new


def _step_scalar_dense(state, spec, gamma, j):
    row = spec.dataset.rows[j]
    z = state.x - gamma * state.loss_mean
    if row.indices.size:
        z[row.indices] += (gamma * state.nu[j]) * row.values
    if row.sq_norm == 0.0:
        state.x = state.shrink * z
        state.nu[j] = 0.0
        return
    new_support, nu_new = _scalar_core(state, spec, gamma, j, z[row.indices], row)
    x_new = state.shrink * z
    x_new[row.indices] = new_support
    state.x = x_new
    state.loss_mean[row.indices] += ((nu_new - state.nu[j]) / spec.dataset.n) * row.values
    state.nu[j] = nu_new


def _step_lazy(state, spec, gamma, j):
    row = spec.dataset.rows[j]
    if row.indices.size == 0:
        state.nu[j] = 0.0
        return
    _catch_up(state, row.indices)
    support_z = state.x[row.indices] + gamma * (
        state.nu[j] * row.values - state.loss_mean[row.indices]
    )
    new_support, nu_new = _scalar_core(state, spec, gamma, j, support_z, row)
    state.x[row.indices] = new_support
    state.lags[row.indices] = state.step_count + 1
    state.loss_mean[row.indices] += ((nu_new - state.nu[j]) / spec.dataset.n) * row.values
    state.nu[j] = nu_new


def step(state, spec, gamma, j):
    """Advance the solver by one step on example j; returns the state."""
    _latch_gamma(state, spec, gamma)
    if state.table_mode == "vector":
        _step_vector(state, spec, gamma, j)
    elif state.backend == "lazy":
        _step_lazy(state, spec, gamma, j)
        state.step_count += 1
        return state
    else:
        _step_scalar_dense(state, spec, gamma, j)
    state.step_count += 1
    return state


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    wall_seconds: float
    objective_avg: float = None


@dataclass
class Trace:
    """Per-epoch history of one run."""

    gamma: float
    source: str
    records: list = field(default_factory=list)
    final_x: np.ndarray = None
    final_x_avg: np.ndarray = None
    diverged: bool = False
    steps: int = 0
    checkpoints: dict = field(default_factory=dict)

    def objectives(self):
        return [r.objective for r in self.records]


def _use_kernel(fast, backend, table_mode):
    if backend != "dense" or table_mode != "vector":
        return False
    return True if fast is None else bool(fast)


def run(
    spec,
    epochs,
    plan=None,
    *,
    seed=0,
    init="zero",
    x0=None,
    backend="dense",
    table_mode="vector",
    observer=None,
    average=False,
    checkpoints=(),
    target_objective=None,
    fast=None,
    divergence_threshold=DIVERGENCE_THRESHOLD,
):
    """Run for up to `epochs` passes (n i.i.d. steps each) and trace progress.

    Records the objective at every epoch boundary (epoch 0 included).  With
    ``average=True`` the running mean of the post-step iterates is tracked
    and reported alongside.  ``checkpoints`` are global step indices at
    which copies of the iterate (and the averaged iterate) are captured.
    Runs stop early when the objective becomes non-finite or exceeds the
    divergence threshold (trace flagged), or once it reaches
    ``target_objective``.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if plan is None:
        plan = StepSizePlan.theoretical(spec)
    gamma = plan.gamma
    ds = spec.dataset
    n = ds.n
    state = init_state(spec, x0=x0, init=init, seed=seed, backend=backend, table_mode=table_mode)
    _latch_gamma(state, spec, gamma)
    use_kernel = _use_kernel(fast, backend, table_mode)
    avg_sum = np.zeros(ds.d)
    pending_marks = sorted(int(c) for c in checkpoints)
    trace = Trace(gamma=gamma, source=plan.source)
    started = time.perf_counter()

    def current_x():
        return materialize(state) if backend == "lazy" else state.x

    def record(epoch):
        obj = objective(spec, current_x())
        obj_avg = None
        if average and state.step_count:
            obj_avg = objective(spec, avg_sum / state.step_count)
        elif average:
            obj_avg = obj
        rec = EpochRecord(epoch, obj, time.perf_counter() - started, obj_avg)
        trace.records.append(rec)
        if observer is not None:
            shown = (avg_sum / max(state.step_count, 1)) if average and state.step_count else current_x()
            observer(epoch, shown, obj, rec.wall_seconds)
        return obj

    def mark():
        x_now = current_x().copy()
        avg_now = (avg_sum / state.step_count).copy() if state.step_count else x_now.copy()
        trace.checkpoints[state.step_count] = (x_now, avg_now if average else None)

    record(0)
    if use_kernel:
        from . import _kernels

        arrays = _kernels.problem_arrays(spec)
    for epoch in range(1, epochs + 1):
        idxs = state.sampler.indices(n, n)
        if use_kernel:
            done = 0
            while done < n:
                while pending_marks and pending_marks[0] <= state.step_count:
                    pending_marks.pop(0)
                chunk_len = n - done
                if pending_marks:
                    chunk_len = min(chunk_len, pending_marks[0] - state.step_count)
                chunk = idxs[done:done + chunk_len]
                steps_ok = _kernels.point_saga_chunk(
                    *arrays,
                    gamma,
                    state.x,
                    state.table.entries,
                    state.table.mean,
                    chunk,
                    avg_sum,
                    average,
                )
                state.step_count += int(steps_ok)
                done += int(steps_ok)
                if steps_ok < chunk.size:
                    trace.diverged = True
                    break
                if pending_marks and pending_marks[0] == state.step_count:
                    pending_marks.pop(0)
                    mark()
            if trace.diverged:
                record(epoch)
                break
        else:
            for j in idxs:
                step(state, spec, gamma, int(j))
                if average or pending_marks:
                    if average:
                        avg_sum += current_x() if backend == "lazy" else state.x
                    if pending_marks and pending_marks[0] == state.step_count:
                        pending_marks.pop(0)
                        mark()
        obj = record(epoch)
        if not math.isfinite(obj) or obj > divergence_threshold:
            trace.diverged = True
            break
        if target_objective is not None and obj <= target_objective:
            break
    trace.steps = state.step_count
    trace.final_x = current_x().copy()
    if average:
        trace.final_x_avg = (avg_sum / state.step_count).copy() if state.step_count else trace.final_x.copy()
    return trace


def run_nonsmooth(spec, epochs, radius, subgrad_bound, seed=0, **kwargs):
    """Run with the non-smooth step size and averaged-iterate tracking.

    gamma = radius/(subgrad_bound*sqrt(n)), where radius bounds the initial
    distance to the solution and subgrad_bound the initial gradient-table
    error.  Both the final and the averaged iterate are reported.
    """
    plan = StepSizePlan.nonsmooth(radius, subgrad_bound, spec.dataset.n)
    return run(spec, epochs, plan, seed=seed, average=True, **kwargs)
