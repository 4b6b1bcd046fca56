"""Baseline incremental methods sharing the solver's trace format.

Two baselines: the incremental gradient method with a stored-gradient
table (same table, explicit gradient steps instead of proximal ones), and
the decaying-step projected-free subgradient method with the schedule
eta_t = 1/(mu*(t + t0)).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels, losses
from .engine import (
    DIVERGENCE_THRESHOLD,
    EpochRecord,
    GradientTable,
    IndexSampler,
    Trace,
)
from .losses import term_subgradient


@dataclass
class SagaState:
    x: np.ndarray
    table: GradientTable
    sampler: IndexSampler
    step_count: int = 0

    def copy(self):
        return SagaState(self.x.copy(), self.table.copy(), self.sampler, self.step_count)


def _check_smooth(spec):
    if spec.loss == "hinge":
        raise ValueError(
            "the gradient-table baseline needs differentiable terms; "
            "the hinge loss is not supported"
        )


def init_saga(spec, x0=None, init="zero", seed=0):
    """State for the gradient-table baseline (smooth losses only)."""
    _check_smooth(spec)
    ds = spec.dataset
    x = np.zeros(ds.d) if x0 is None else np.array(x0, dtype=np.float64)
    entries = np.zeros((ds.n, ds.d))
    if init == "subgradient":
        for i in range(ds.n):
            entries[i] = term_subgradient(spec, i, x)
    elif init != "zero":
        raise ValueError(f"unknown init {init!r}")
    return SagaState(x=x, table=GradientTable(entries), sampler=IndexSampler(seed))


def saga_step(state, spec, gamma, j):
    """x <- x - gamma*(grad_j(x) - stored_j + stored_mean); refresh stored_j."""
    table = state.table
    g_new = term_subgradient(spec, j, state.x)
    state.x = state.x - gamma * (g_new - table.entries[j] + table.mean)
    table.update(j, g_new)
    state.step_count += 1
    return state


@dataclass
class PegasosState:
    x: np.ndarray
    sampler: IndexSampler
    t: float = 0.0
    t0: float = 1.0
    step_count: int = 0


def init_pegasos(spec, x0=None, seed=0, t0=1.0):
    if not spec.mu > 0:
        raise ValueError("the decaying-step baseline needs mu > 0 (its schedule is 1/(mu*(t+t0)))")
    ds = spec.dataset
    x = np.zeros(ds.d) if x0 is None else np.array(x0, dtype=np.float64)
    return PegasosState(x=x, sampler=IndexSampler(seed), t0=float(t0))


def pegasos_step(state, spec, j):
    """One decaying-step subgradient step on term j (loss plus L2)."""
    state.t += 1.0
    eta = 1.0 / (spec.mu * (state.t + state.t0))
    row = spec.dataset.rows[j]
    coeff = float(
        losses.loss_subgradient(spec.loss, row.dot(state.x), float(spec.dataset.labels[j]))
    )
    state.x = (1.0 - eta * spec.mu) * state.x
    row.add_into(state.x, -eta * coeff)
    state.step_count += 1
    return state


def _run_loop(spec, epochs, kernel_call, python_step, state_x, observer, divergence_threshold, gamma, source):
    """Shared epoch loop: run, record objective per epoch, flag divergence."""
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    trace = Trace(gamma=gamma, source=source)
    started = time.perf_counter()

    def record(epoch):
        obj = losses.objective(spec, state_x())
        rec = EpochRecord(epoch, obj, time.perf_counter() - started)
        trace.records.append(rec)
        if observer is not None:
            observer(epoch, state_x(), obj, rec.wall_seconds)
        return obj

    record(0)
    for epoch in range(1, epochs + 1):
        full = kernel_call() if kernel_call is not None else python_step()
        obj = record(epoch)
        if not full or not math.isfinite(obj) or obj > divergence_threshold:
            trace.diverged = True
            break
    trace.final_x = state_x().copy()
    return trace


def run_saga(
    spec,
    epochs,
    gamma,
    *,
    seed=0,
    init="zero",
    x0=None,
    observer=None,
    fast=None,
    divergence_threshold=DIVERGENCE_THRESHOLD,
):
    """Epoch loop for the gradient-table baseline."""
    _check_smooth(spec)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    state = init_saga(spec, x0=x0, init=init, seed=seed)
    n = spec.dataset.n
    use_kernel = True if fast is None else bool(fast)
    arrays = _kernels.problem_arrays(spec) if use_kernel else None

    def kernel_call():
        idxs = state.sampler.indices(n, n)
        done = _kernels.saga_chunk(
            *arrays, gamma, state.x, state.table.entries, state.table.mean, idxs
        )
        state.step_count += int(done)
        return done == n

    def python_step():
        for j in state.sampler.indices(n, n):
            saga_step(state, spec, gamma, int(j))
        return True

    trace = _run_loop(
        spec,
        epochs,
        kernel_call if use_kernel else None,
        python_step,
        lambda: state.x,
        observer,
        divergence_threshold,
        gamma,
        "user",
    )
    trace.steps = state.step_count
    return trace


def run_pegasos(
    spec,
    epochs,
    *,
    seed=0,
    t0=1.0,
    x0=None,
    observer=None,
    fast=None,
    divergence_threshold=DIVERGENCE_THRESHOLD,
):
    """Epoch loop for the decaying-step baseline (no gamma; schedule only)."""
    state = init_pegasos(spec, x0=x0, seed=seed, t0=t0)
    n = spec.dataset.n
    use_kernel = True if fast is None else bool(fast)
    arrays = None
    if use_kernel:
        indptr, cols, vals, labels, _, loss_id, mu = _kernels.problem_arrays(spec)
        arrays = (indptr, cols, vals, labels, loss_id, mu)

    def kernel_call():
        idxs = state.sampler.indices(n, n)
        done, t_out = _kernels.pegasos_chunk(*arrays, state.t0, state.x, state.t, idxs)
        state.t = float(t_out)
        state.step_count += int(done)
        return done == n

    def python_step():
        for j in state.sampler.indices(n, n):
            pegasos_step(state, spec, int(j))
        return True

    trace = _run_loop(
        spec,
        epochs,
        kernel_call if use_kernel else None,
        python_step,
        lambda: state.x,
        observer,
        divergence_threshold,
        state.t0,
        "schedule",
    )
    trace.steps = state.step_count
    return trace
