"""Tight-loop epoch kernels for the dense-vector solver and the baselines.

These mirror the numpy reference recursions op for op (same formulas, same
update order) and exist purely for speed; a test pins their traces against
the reference path.  On numerical blow-up a kernel returns the number of
steps it completed instead of raising, and the caller flags divergence.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .losses import LOSS_IDS

_HUGE = 1e300


def problem_arrays(spec):
    """CSR arrays plus per-term constants, cached on the ProblemSpec."""
    cached = getattr(spec, "_kernel_arrays", None)
    if cached is None:
        A = spec.dataset.csr()
        cached = (
            A.indptr.astype(np.int64),
            A.indices.astype(np.int64),
            A.data.astype(np.float64),
            spec.dataset.labels,
            spec.dataset.row_sq_norms(),
            LOSS_IDS[spec.loss],
            spec.mu,
        )
        spec._kernel_arrays = cached
    return cached


@njit(cache=True, inline="always")
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _slope(loss_id, a, y):
    # subgradient of the scalar loss at prediction a (hinge kink -> 0)
    if loss_id == 0:
        return a - y
    if loss_id == 1:
        return -y * _sigmoid(-y * a)
    if y * a < 1.0:
        return -y
    return 0.0


@njit(cache=True)
def _prox_c(loss_id, a, y, gp):
    if loss_id == 0:
        return (a + gp * y) / (1.0 + gp)
    if loss_id == 2:
        s = (1.0 - y * a) / gp
        if s >= 1.0:
            nu = -1.0
        elif s <= 0.0:
            nu = 0.0
        else:
            nu = -s
        return a - gp * y * nu
    # logistic: safeguarded Newton on phi(c) = gp*s(c) + c - a, phi' >= 1
    if a != a:
        return np.nan
    lo = a - gp
    hi = a + gp
    c = 0.0
    if c < lo or c > hi:
        c = 0.5 * (lo + hi)
    val = gp * (-y * _sigmoid(-y * c)) + c - a
    it = 0
    while abs(val) > 1e-10:
        if it >= 40:
            return np.nan
        if val > 0.0:
            hi = c
        else:
            lo = c
        s = -y * _sigmoid(-y * c)
        deriv = 1.0 - gp * y * s - gp * s * s
        cand = c - val / deriv
        accepted = False
        if lo < cand < hi:
            cand_val = gp * (-y * _sigmoid(-y * cand)) + cand - a
            if abs(cand_val) <= 0.5 * abs(val):
                c = cand
                val = cand_val
                accepted = True
        if not accepted:
            c = 0.5 * (lo + hi)
            val = gp * (-y * _sigmoid(-y * c)) + c - a
        it += 1
    return c


@njit(cache=True, nogil=True)
def point_saga_chunk(indptr, cols, vals, labels, sqn, loss_id, mu, gamma, x, G, gmean, idxs, avg_sum, do_avg):
    """Run len(idxs) solver steps in place; returns steps completed."""
    n = G.shape[0]
    d = x.shape[0]
    rho = 1.0 / (1.0 + mu * gamma)
    z = np.empty(d)
    for t in range(idxs.shape[0]):
        j = idxs[t]
        for k in range(d):
            z[k] = x[k] + gamma * (G[j, k] - gmean[k])
        a = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            a += vals[p] * z[cols[p]]
        a *= rho
        if a != a or abs(a) > _HUGE:
            return t
        for k in range(d):
            x[k] = rho * z[k]
        if sqn[j] > 0.0:
            c = _prox_c(loss_id, a, labels[j], rho * gamma * sqn[j])
            if c != c:
                return t
            coeff = (c - a) / sqn[j]
            for p in range(indptr[j], indptr[j + 1]):
                x[cols[p]] += coeff * vals[p]
        for k in range(d):
            gnew = (z[k] - x[k]) / gamma
            gmean[k] += (gnew - G[j, k]) / n
            G[j, k] = gnew
        if do_avg:
            for k in range(d):
                avg_sum[k] += x[k]
    return idxs.shape[0]


@njit(cache=True, nogil=True)
def saga_chunk(indptr, cols, vals, labels, sqn, loss_id, mu, gamma, x, G, gmean, idxs):
    """Run len(idxs) SAGA steps in place; returns steps completed."""
    n = G.shape[0]
    d = x.shape[0]
    for t in range(idxs.shape[0]):
        j = idxs[t]
        a = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            a += vals[p] * x[cols[p]]
        if a != a or abs(a) > _HUGE:
            return t
        coeff = _slope(loss_id, a, labels[j])
        # regularizer part of the fresh gradient, coordinatewise independent
        for k in range(d):
            gnew = mu * x[k]
            x[k] -= gamma * (gnew - G[j, k] + gmean[k])
            gmean[k] += (gnew - G[j, k]) / n
            G[j, k] = gnew
        # loss part lives on the sampled row's support only
        for p in range(indptr[j], indptr[j + 1]):
            k2 = cols[p]
            add = coeff * vals[p]
            x[k2] -= gamma * add
            gmean[k2] += add / n
            G[j, k2] += add
    return idxs.shape[0]


@njit(cache=True, nogil=True)
def pegasos_chunk(indptr, cols, vals, labels, loss_id, mu, t0, x, t_start, idxs):
    """Run len(idxs) decaying-step subgradient steps; returns (done, t)."""
    d = x.shape[0]
    t = t_start
    for i in range(idxs.shape[0]):
        j = idxs[i]
        t += 1.0
        eta = 1.0 / (mu * (t + t0))
        a = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            a += vals[p] * x[cols[p]]
        if a != a or abs(a) > _HUGE:
            return i, t
        coeff = _slope(loss_id, a, labels[j])
        scale = 1.0 - eta * mu
        for k in range(d):
            x[k] *= scale
        for p in range(indptr[j], indptr[j + 1]):
            x[cols[p]] -= eta * coeff * vals[p]
    return idxs.shape[0], t
