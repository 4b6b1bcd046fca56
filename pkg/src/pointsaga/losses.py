"""Scalar losses and proximal operators for L2-regularized linear terms.

Each term of the finite sum is ``loss(<x, row>; label) + (mu/2)||x||^2``.
Because the loss depends on x only through one inner product, the proximal
map of a term reduces to a scalar problem along the row direction:

    minimize_c  gamma_p * loss(c; y) + (c - a)^2 / 2

with ``a`` the inner product of the input point with the row and
``gamma_p = gamma * ||row||^2``.  The L2 part is folded in exactly by
shrinking the input point and the step size by ``rho = 1/(1 + mu*gamma)``
before the scalar solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

LOSS_IDS = {"squared": 0, "logistic": 1, "hinge": 2}


class NumericalError(RuntimeError):
    """A scalar solve failed to converge; carries the last bracket."""

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


def loss_value(kind, a, y):
    """Scalar loss at prediction a with target y (vectorizes over arrays)."""
    if kind == "squared":
        diff = np.asarray(a, dtype=np.float64) - y
        return 0.5 * diff * diff
    t = np.asarray(a, dtype=np.float64) * y
    if kind == "logistic":
        # log(1 + exp(-t)) evaluated stably on both tails
        return np.logaddexp(0.0, -t)
    if kind == "hinge":
        return np.maximum(0.0, 1.0 - t)
    raise ValueError(f"unknown loss {kind!r}")


def loss_subgradient(kind, a, y):
    """A subgradient of the scalar loss in its prediction argument.

    At the hinge kink (y*a == 1) the flat-side value 0 is returned.
    """
    if kind == "squared":
        return np.asarray(a, dtype=np.float64) - y
    t = np.asarray(a, dtype=np.float64) * y
    if kind == "logistic":
        return -y * expit(-t)
    if kind == "hinge":
        return np.where(t < 1.0, -np.asarray(y, dtype=np.float64), 0.0)
    raise ValueError(f"unknown loss {kind!r}")


@dataclass
class ProxResult:
    """Outcome of a scalar proximal solve.

    c is the minimizer; nu is the loss's scalar (sub)gradient coefficient at
    the solution (for the hinge, the case-table coefficient such that the
    full-space step moves by -gamma*y*nu*row); iterations counts Newton
    updates, bisections counts safeguard activations.
    """

    c: float
    nu: float
    iterations: int = 0
    bisections: int = 0


def prox_hinge(a, y, gamma_p):
    """Closed-form scalar prox of the hinge loss.

    With s = (1 - y*a)/gamma_p the coefficient is -1 where the loss is
    fully active (s >= 1), 0 where inactive (s <= 0), and -s in between
    (solution pinned to the kink).
    """
    if gamma_p <= 0:
        raise ValueError("gamma_p must be positive")
    s = (1.0 - y * a) / gamma_p
    if s >= 1.0:
        nu = -1.0
    elif s <= 0.0:
        nu = 0.0
    else:
        nu = -s
    return ProxResult(c=a - gamma_p * y * nu, nu=nu)


def prox_squared(a, y, gamma_p):
    """Closed-form scalar prox of the squared loss."""
    if gamma_p <= 0:
        raise ValueError("gamma_p must be positive")
    c = (a + gamma_p * y) / (1.0 + gamma_p)
    return ProxResult(c=c, nu=c - y)


def _logistic_slope(c, y):
    # derivative of log(1 + exp(-y*c)) in c; lies in (-1, 0) for y=+1
    return -y * expit(-y * c)


def prox_logistic(a, y, gamma_p, tol=1e-10, max_iter=40):
    """Scalar prox of the logistic loss by safeguarded Newton.

    Solves phi(c) = gamma_p * s(c) + c - a = 0 where s(c) is the logistic
    slope.  The curvature used is the derived phi'(c) = 1 - gamma_p*y*s -
    gamma_p*s^2 = 1 + gamma_p*s'(c) >= 1, so the equation has exactly one
    root and it lies in [a - gamma_p, a + gamma_p].  Newton starts at 0 and
    every candidate must stay inside the current sign bracket and halve
    |phi|, else the iteration falls back to bisection for that step.

    Raises NumericalError if |phi| has not reached tol after max_iter
    updates.
    """
    if gamma_p <= 0:
        raise ValueError("gamma_p must be positive")
    if y not in (-1.0, 1.0):
        raise ValueError("logistic labels must be +/-1")

    def phi(c):
        return gamma_p * _logistic_slope(c, y) + c - a

    lo, hi = a - gamma_p, a + gamma_p
    c = 0.0
    if not lo <= c <= hi:
        c = 0.5 * (lo + hi)
    val = phi(c)
    iterations = 0
    bisections = 0
    while abs(val) > tol:
        if iterations >= max_iter:
            raise NumericalError(
                f"logistic prox did not reach |phi|<={tol} in {max_iter} iterations",
                bracket=(lo, hi),
            )
        if val > 0.0:
            hi = c
        else:
            lo = c
        s = _logistic_slope(c, y)
        slope = 1.0 - gamma_p * y * s - gamma_p * s * s
        cand = c - val / slope
        if lo < cand < hi:
            cand_val = phi(cand)
            if abs(cand_val) <= 0.5 * abs(val):
                c, val = cand, cand_val
                iterations += 1
                continue
        c = 0.5 * (lo + hi)
        val = phi(c)
        iterations += 1
        bisections += 1
    return ProxResult(c=c, nu=_logistic_slope(c, y), iterations=iterations, bisections=bisections)


def _prox_scalar(kind, a, y, gamma_p, tol=1e-10, max_iter=40):
    if kind == "squared":
        return prox_squared(a, y, gamma_p)
    if kind == "logistic":
        return prox_logistic(a, y, gamma_p, tol=tol, max_iter=max_iter)
    if kind == "hinge":
        return prox_hinge(a, y, gamma_p)
    raise ValueError(f"unknown loss {kind!r}")


def prox_term(spec, j, z, gamma, tol=1e-10, max_iter=40):
    """Proximal map of term j (loss plus folded L2) at point z, step gamma.

    Computes rho = 1/(1 + mu*gamma), solves the scalar prox of the bare
    loss at the shrunk point with step rho*gamma, and expands back to full
    space; only coordinates in the row's support differ from rho*z.  A row
    with zero norm contributes no loss, so the result is the pure shrink
    rho*z (identity when mu = 0).
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    rho = 1.0 / (1.0 + spec.mu * gamma)
    row = spec.dataset.rows[j]
    out = rho * z
    if row.sq_norm == 0.0:
        return out
    a = rho * row.dot(z)
    res = _prox_scalar(
        spec.loss,
        a,
        float(spec.dataset.labels[j]),
        rho * gamma * row.sq_norm,
        tol=tol,
        max_iter=max_iter,
    )
    row.add_into(out, (res.c - a) / row.sq_norm)
    return out


def term_value(spec, j, x):
    """Value of term j at x: loss on the row margin plus (mu/2)||x||^2."""
    row = spec.dataset.rows[j]
    val = loss_value(spec.loss, row.dot(x), float(spec.dataset.labels[j]))
    return float(val) + 0.5 * spec.mu * float(x @ x)


def term_subgradient(spec, j, x):
    """A dense subgradient of term j at x."""
    row = spec.dataset.rows[j]
    coeff = float(loss_subgradient(spec.loss, row.dot(x), float(spec.dataset.labels[j])))
    g = spec.mu * x
    row.add_into(g, coeff)
    return g


def objective(spec, x):
    """Full objective: mean term loss plus the L2 penalty."""
    ds = spec.dataset
    if ds.n == 0:
        return 0.5 * spec.mu * float(x @ x)
    losses = loss_value(spec.loss, ds.margins(x), ds.labels)
    return float(np.mean(losses)) + 0.5 * spec.mu * float(x @ x)
