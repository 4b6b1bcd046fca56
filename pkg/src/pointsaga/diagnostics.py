"""Executable checks of the solver's convergence theory.

Contains the independent 1-D prox oracle (golden-section in extended
precision), reference-solution computation with per-term subgradients
summing to zero, the potential function combining table error and iterate
distance, Monte-Carlo single-step descent checks, the chained distance
bound, operator-inequality sweeps, and conjugate-pair identities for the
proximal decomposition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import losses
from .data import LOSS_CURVATURE, Dataset, SparseVec, derive_constants
from .engine import (
    GradientTable,
    IndexSampler,
    SolverState,
    kappa,
    materialize,
    run,
    step,
    step_size_default,
)
from .losses import (
    NumericalError,
    objective,
    prox_term,
    term_subgradient,
)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class Report:
    """Outcome of one check: a pass flag plus named measurements."""

    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def lines(self):
        """Machine-readable key=value lines, one per entry."""
        out = [f"check={self.name}", f"passed={int(self.passed)}"]
        for key, val in self.details.items():
            out.append(f"{key}={val!r}" if isinstance(val, str) else f"{key}={val}")
        return out

    def __str__(self):
        return "\n".join(self.lines())


# ---------------------------------------------------------------------------
# Brute-force 1-D prox oracle.


def _loss_1d(loss, c, y, gp):
    """gp * loss(c; y) + (1/2)(c - a)^2 is minimized; this is the loss part.

    Works elementwise on extended-precision arrays; the logistic softplus
    is written in the shifted stable form because not every ufunc has an
    extended-precision loop.
    """
    if loss == "squared":
        return gp * 0.5 * (c - y) ** 2
    t = y * c
    if loss == "hinge":
        return gp * np.maximum(0.0, 1.0 - t)
    if loss == "logistic":
        return gp * (np.maximum(-t, 0.0) + np.log1p(np.exp(-np.abs(t))))
    raise ValueError(f"unknown loss {loss!r}")


def _golden_batch(loss, a, y, gp, tol):
    """Vectorized golden-section minimization of the 1-D prox objective.

    All inputs are broadcast to a common shape and promoted to extended
    precision; the iteration count is fixed from the widest bracket so the
    whole batch can march in lockstep.
    """
    ld = np.longdouble
    a = np.asarray(a, dtype=ld)
    y = np.asarray(y, dtype=ld)
    gp = np.asarray(gp, dtype=ld)
    a, y, gp = np.broadcast_arrays(a, y, gp)
    lo = np.minimum(a, y) - gp - 1.0
    hi = np.maximum(a, y) + gp + 1.0
    width = float((hi - lo).max())
    if not math.isfinite(width) or width <= 0:
        raise NumericalError(f"bad bracket width {width}")
    iters = max(1, math.ceil(math.log(tol / width) / math.log(_INVPHI)) + 2)

    def obj(c):
        return _loss_1d(loss, c, y, gp) + 0.5 * (c - a) ** 2

    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1 = obj(x1)
    f2 = obj(x2)
    for _ in range(iters):
        left = f1 < f2
        lo = np.where(left, lo, x1)
        hi = np.where(left, x2, hi)
        x1 = hi - _INVPHI * (hi - lo)
        x2 = lo + _INVPHI * (hi - lo)
        f1 = obj(x1)
        f2 = obj(x2)
    return np.asarray(0.5 * (lo + hi), dtype=ld)


def brute_force_prox_1d(loss, a, y, gamma_p, tol=1e-12, bracket=None):
    """Golden-section solve of min_c gamma_p*loss(c; y) + (1/2)(c-a)^2.

    Exists as an independent cross-check for the closed forms and the
    Newton routine; runs in extended precision so its own noise floor
    stays below the comparison tolerances.  An explicit (lo, hi) bracket
    overrides the default subgradient-based one.
    """
    if not (math.isfinite(a) and math.isfinite(y) and math.isfinite(gamma_p)):
        raise NumericalError(f"non-finite prox inputs a={a} y={y} gamma_p={gamma_p}")
    if gamma_p <= 0:
        raise ValueError("gamma_p must be positive")
    if bracket is None:
        c = _golden_batch(loss, a, y, gamma_p, tol)
        return float(c)
    lo, hi = (np.longdouble(bracket[0]), np.longdouble(bracket[1]))
    if not hi > lo:
        raise NumericalError(f"empty bracket {bracket}")
    ld = np.longdouble
    av, yv, gpv = ld(a), ld(y), ld(gamma_p)

    def obj(c):
        return _loss_1d(loss, c, yv, gpv) + 0.5 * (c - av) ** 2

    while hi - lo > tol:
        x1 = hi - _INVPHI * (hi - lo)
        x2 = lo + _INVPHI * (hi - lo)
        if obj(x1) < obj(x2):
            hi = x2
        else:
            lo = x1
    return float(0.5 * (lo + hi))


def check_prox_oracle(loss, draws=10_000, seed=0, tol=1e-8):
    """Closed-form / Newton prox against the golden-section oracle.

    Draws (a, y, gamma') with gamma' log-uniform over [1e-6, 1e3] and
    compares the 1-D solutions; the oracle runs in extended precision so
    the comparison tolerance is meaningful.
    """
    rng = np.random.default_rng(seed)
    a = rng.uniform(-5.0, 5.0, size=draws)
    if loss == "squared":
        y = 2.0 * rng.standard_normal(draws)
    else:
        y = np.where(rng.random(draws) < 0.5, 1.0, -1.0)
    gp = 10.0 ** rng.uniform(-6.0, 3.0, size=draws)
    oracle = _golden_batch(loss, a, y, gp, 1e-12)
    worst = 0.0
    for i in range(draws):
        res = losses._prox_scalar(loss, float(a[i]), float(y[i]), float(gp[i]))
        worst = max(worst, abs(res.c - float(oracle[i])))
    return Report(
        f"prox_oracle_{loss}",
        worst <= tol,
        {"draws": draws, "worst_abs_error": worst, "tol": tol},
    )


# ---------------------------------------------------------------------------
# Reference solutions.


@dataclass
class ReferenceSolution:
    """Minimizer plus one valid subgradient per term, summing to zero."""

    x_star: np.ndarray
    g_star: np.ndarray
    fstar: float

    def displaced(self, gamma):
        """Per-term points x* + gamma*g_i*; the prox of term i maps the
        i-th row back to x*."""
        return self.x_star[None, :] + gamma * self.g_star

    def verify(self, spec, gamma, sample=None):
        """Residuals of the defining properties, as a dict.

        sample limits the per-term checks to that many indices (evenly
        spaced) on large problems; None checks every term.
        """
        n = spec.dataset.n
        idx = np.arange(n) if sample is None else np.linspace(0, n - 1, sample).astype(int)
        out = {"sum_residual": float(np.linalg.norm(self.g_star.sum(axis=0)))}
        grad_res = 0.0
        prox_res = 0.0
        shifted = self.displaced(gamma)
        for i in idx:
            i = int(i)
            if spec.loss != "hinge":
                grad_res = max(
                    grad_res,
                    float(np.linalg.norm(self.g_star[i] - term_subgradient(spec, i, self.x_star))),
                )
            prox_res = max(
                prox_res,
                float(np.linalg.norm(prox_term(spec, i, shifted[i], gamma) - self.x_star)),
            )
        if spec.loss != "hinge":
            out["grad_residual"] = grad_res
        out["prox_residual"] = prox_res
        return out


def _dense(spec):
    return spec.dataset.csr().toarray()


def _ref_squared(spec):
    A = _dense(spec)
    y = spec.dataset.labels
    n = spec.dataset.n
    x = np.linalg.solve(A.T @ A / n + spec.mu * np.eye(spec.dataset.d), A.T @ y / n)
    g = (A @ x - y)[:, None] * A + spec.mu * x[None, :]
    return ReferenceSolution(x, g, objective(spec, x))


def _ref_logistic(spec, tol, max_iter=200):
    A = _dense(spec)
    y = spec.dataset.labels
    n, d = A.shape
    mu = spec.mu
    x = np.zeros(d)

    def value(x):
        return float(np.mean(np.logaddexp(0.0, -y * (A @ x)))) + 0.5 * mu * float(x @ x)

    for _ in range(max_iter):
        t = y * (A @ x)
        slope = -y * expit(-t)
        grad = A.T @ slope / n + mu * x
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            g = slope[:, None] * A + mu * x[None, :]
            return ReferenceSolution(x, g, value(x))
        w = expit(t) * expit(-t)
        H = (A * w[:, None]).T @ A / n + mu * np.eye(d)
        p = np.linalg.solve(H, grad)
        alpha = 1.0
        if gnorm > 1e-6:
            # backtrack only while objective changes are visible above
            # float noise; near the optimum the full step is safe
            f0, slope0 = value(x), float(grad @ p)
            while value(x - alpha * p) > f0 - 1e-4 * alpha * slope0 and alpha > 1e-12:
                alpha *= 0.5
        x = x - alpha * p
    raise NumericalError(f"reference solve stalled at gradient norm {gnorm:.3e} > {tol:.1e}")


def _ref_hinge(spec, tol, face_tol=1e-4):
    """Smoothed continuation to locate the active margins, then an exact
    finish on that face.

    The smoothed run pins down which margins sit at the kink; the finish
    solves the stationarity system jointly for the minimizer and the kink
    coefficients (least-squares selects the minimum-norm coefficients when
    the kink set leaves slack).  Every coefficient must land in [-1, 0]
    and every margin on the correct side, else the face was wrong and we
    raise rather than return a bad certificate.
    """
    A = _dense(spec)
    y = spec.dataset.labels
    n, d = A.shape
    mu = spec.mu
    Ay = y[:, None] * A

    def smooth_solve(x, delta):
        # Huberized hinge: quadratic on (1-delta, 1), linear below.
        for _ in range(200):
            m = Ay @ x
            mid = (m > 1.0 - delta) & (m < 1.0)
            lin = m <= 1.0 - delta
            grad = (-Ay[lin].sum(axis=0) - ((1.0 - m[mid]) / delta) @ Ay[mid]) / n + mu * x
            if np.linalg.norm(grad) <= max(1e-12, delta * 1e-3):
                return x
            H = Ay[mid].T @ Ay[mid] / (delta * n) + mu * np.eye(d)
            p = np.linalg.solve(H, grad)

            def fval(x):
                m = Ay @ x
                h = np.where(
                    m >= 1.0,
                    0.0,
                    np.where(m <= 1.0 - delta, 1.0 - m - delta / 2.0, (1.0 - m) ** 2 / (2 * delta)),
                )
                return float(h.mean()) + 0.5 * mu * float(x @ x)

            alpha, f0, s0 = 1.0, fval(x), float(grad @ p)
            while fval(x - alpha * p) > f0 - 1e-4 * alpha * s0 and alpha > 1e-12:
                alpha *= 0.5
            x = x - alpha * p
        return x

    x = np.zeros(d)
    delta = 1e-1
    while delta >= 1e-9:
        x = smooth_solve(x, delta)
        delta *= 1e-1

    m = Ay @ x
    active = np.abs(m - 1.0) <= face_tol
    violated = m < 1.0 - face_tol
    na = int(active.sum())
    # Stationarity: mu*x + (1/n)(sum_active k_i y_i X_i - sum_violated y_i X_i) = 0,
    # margins of active terms pinned to 1; unknowns are x and the k_i.
    M = np.zeros((d + na, d + na))
    rhs = np.zeros(d + na)
    M[:d, :d] = mu * np.eye(d)
    M[:d, d:] = Ay[active].T / n
    M[d:, :d] = Ay[active]
    rhs[:d] = Ay[violated].sum(axis=0) / n
    rhs[d:] = 1.0
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    x_star, k_active = sol[:d], sol[d:]

    stat = mu * x_star + (Ay[active].T @ k_active - Ay[violated].sum(axis=0)) / n
    m_star = Ay @ x_star
    feasible = (
        float(np.linalg.norm(stat)) <= max(tol, 1e-9)
        and np.all(k_active >= -1.0 - 1e-9)
        and np.all(k_active <= 1e-9)
        and np.all(m_star[violated] <= 1.0 + 1e-9)
        and np.all(m_star[~violated & ~active] >= 1.0 - 1e-9)
    )
    if not feasible:
        raise NumericalError(
            "kink-face certificate infeasible; the problem's active margins "
            "could not be identified to tolerance"
        )
    k = np.where(violated, -1.0, 0.0)
    k[active] = np.clip(k_active, -1.0, 0.0)
    g = k[:, None] * Ay + mu * x_star[None, :]
    return ReferenceSolution(x_star, g, objective(spec, x_star))


def solve_reference(spec, tol=1e-10):
    """Minimizer, optimal value, and zero-sum per-term subgradients.

    Closed form for the squared loss, damped second-order iteration for
    the logistic, smoothed continuation plus an exact kink-face finish
    for the hinge.  Raises NumericalError when the residual target cannot
    be certified.
    """
    if not spec.mu > 0:
        raise ValueError("reference solutions need mu > 0")
    if spec.loss == "squared":
        return _ref_squared(spec)
    if spec.loss == "logistic":
        return _ref_logistic(spec, tol)
    return _ref_hinge(spec, tol)


# ---------------------------------------------------------------------------
# Potential function and descent checks.


@dataclass
class LyapunovSample:
    """Table error plus iterate distance, weighted by c = 1/(mu*L)."""

    T: float
    c: float
    table_term: float
    distance_term: float


def _table_entries(state, spec):
    """Dense per-term stored gradients, whichever convention the state uses."""
    if state.table_mode == "vector":
        return state.table.entries
    materialize(state)
    G = spec.dataset.csr().multiply(state.nu[:, None]).toarray()
    return G + spec.mu * state.x[None, :]


def lyapunov(state, ref, mu, L, spec=None):
    """Potential value for a solver state against a reference solution.

    spec is only needed to rebuild dense table entries for scalar-mode
    states.
    """
    c = 1.0 / (mu * L)
    if state.table_mode == "vector":
        G = state.table.entries
    else:
        if spec is None:
            raise ValueError("scalar-mode states need spec to rebuild table entries")
        G = _table_entries(state, spec)
    n = G.shape[0]
    diff = G - ref.g_star
    table_term = c / n * float((diff * diff).sum())
    dx = state.x - ref.x_star
    distance_term = float(dx @ dx)
    return LyapunovSample(table_term + distance_term, c, table_term, distance_term)


def perturbed_state(spec, ref, seed=0, x_scale=1.0, g_scale=1.0):
    """A dense vector-mode state displaced from the fixed point.

    Iterate and table entries get independent Gaussian offsets so both
    potential components start strictly positive (scales of zero give the
    exact fixed point).
    """
    rng = np.random.default_rng(seed)
    n, d = spec.dataset.n, spec.dataset.d
    x = ref.x_star + x_scale * rng.standard_normal(d)
    entries = ref.g_star + g_scale * rng.standard_normal((n, d))
    return SolverState(
        x=x,
        sampler=IndexSampler([seed, "state"]),
        table=GradientTable(np.array(entries)),
    )


def check_descent(spec, ref, gamma, trials=2000, seed=0):
    """Monte-Carlo check of expected one-step potential descent.

    From one fixed perturbed state, estimates the mean ratio T_after/T
    over independently sampled single steps and compares it against the
    contraction factor (1 - kappa) with three standard errors of slack.
    A state already at the fixed point is reported as trivially stable.
    """
    mu, L = spec.mu, spec.L
    base = perturbed_state(spec, ref, seed=seed)
    t0 = lyapunov(base, ref, mu, L).T
    k = kappa(mu, gamma)
    if t0 == 0.0:
        st = base.copy()
        for j in range(min(5, spec.dataset.n)):
            step(st, spec, gamma, j)
        t_end = lyapunov(st, ref, mu, L).T
        return Report(
            "descent",
            t_end <= 1e-20,
            {"trivial_fixed_point": 1, "T0": 0.0, "T_end": t_end},
        )
    roots = np.random.SeedSequence([seed, 0xD5C]).spawn(trials)
    n = spec.dataset.n
    ratios = np.empty(trials)
    for t in range(trials):
        j = int(np.random.Generator(np.random.PCG64(roots[t])).integers(n))
        st = base.copy()
        step(st, spec, gamma, j)
        ratios[t] = lyapunov(st, ref, mu, L).T / t0
    mean = float(ratios.mean())
    stderr = float(ratios.std(ddof=1) / math.sqrt(trials))
    bound = 1.0 - k
    return Report(
        "descent",
        mean <= bound + 3.0 * stderr,
        {
            "trials": trials,
            "mean_ratio": mean,
            "stderr": stderr,
            "bound": bound,
            "kappa": k,
            "T0": t0,
        },
    )


def check_chained_rate(spec, ref, steps=(100, 500, 1000), seeds=20, seed=0, x0=None):
    """Expected squared distance against the compounded contraction bound.

    Runs independently seeded trajectories from one starting point with
    per-term subgradient table initialization and compares the measured
    mean squared distance at each checkpoint step against
    (1-kappa)^k * ((mu+L)/mu) * ||x0 - x*||^2, allowing three standard
    errors.
    """
    mu, L = spec.mu, spec.L
    n = spec.dataset.n
    gamma = step_size_default(n, L, mu)
    k = kappa(mu, gamma)
    if x0 is None:
        u = np.random.default_rng(seed).standard_normal(spec.dataset.d)
        x0 = ref.x_star + u / np.linalg.norm(u)
    r0 = float(np.linalg.norm(x0 - ref.x_star) ** 2)
    steps = tuple(sorted(int(s) for s in steps))
    epochs = math.ceil(steps[-1] / n)
    dists = np.empty((len(steps), seeds))
    for s in range(seeds):
        trace = run(
            spec,
            epochs,
            seed=[seed, "chain", s],
            init="subgradient",
            x0=x0,
            checkpoints=steps,
            fast=False,
        )
        for i, kstep in enumerate(steps):
            xk = trace.checkpoints[kstep][0]
            dists[i, s] = float(np.linalg.norm(xk - ref.x_star) ** 2)
    details = {"kappa": k, "gamma": gamma, "seeds": seeds, "r0": r0}
    passed = True
    for i, kstep in enumerate(steps):
        mean = float(dists[i].mean())
        stderr = float(dists[i].std(ddof=1) / math.sqrt(seeds))
        bound = (1.0 - k) ** kstep * ((mu + L) / mu) * r0
        ok = mean <= bound + 3.0 * stderr
        passed = passed and ok
        details[f"mean_{kstep}"] = mean
        details[f"stderr_{kstep}"] = stderr
        details[f"bound_{kstep}"] = bound
    return Report("chained_rate", passed, details)


# ---------------------------------------------------------------------------
# Operator inequalities on random folded terms.


def random_folded_term(rng, loss, d=8):
    """One-term problem with random data, mu, and step for operator checks.

    Scales are kept within a few decades of unity; the inequalities are
    scale-invariant mathematics, and moderate scales keep the numerical
    noise of the prox solves far below the margins being certified.
    """
    vals = rng.standard_normal(d) * 10.0 ** rng.uniform(-0.5, 0.5)
    if loss == "squared":
        y = float(rng.standard_normal())
    else:
        y = 1.0 if rng.random() < 0.5 else -1.0
    ds = Dataset(
        rows=[SparseVec(np.arange(d, dtype=np.int64), vals)],
        labels=np.array([y]),
        d=d,
    )
    mu = 10.0 ** rng.uniform(-3.0, 0.0)
    gamma = 10.0 ** rng.uniform(-2.0, 0.5)
    return derive_constants(ds, loss, mu), gamma


def check_operators(loss, trials=10_000, seed=0, d=8):
    """Sweep of the prox-displacement inequalities on random folded terms.

    Checks, per random (term, point-pair):
      * <x - y, p(x) - p(y)>  >=  (1 + mu*gamma) * ||p(x) - p(y)||^2
      * <g(x) - g(y), x - y>  >=  (gamma + 1/L) * ||g(x) - g(y)||^2
        with g(x) = (x - p(x))/gamma, smooth losses only, per-term L
      * g(x) is the term's gradient at p(x), smooth losses only
    Reports the worst signed margins; negative beyond 1e-9 fails.  The
    inner 1-D solves run at a tolerance well below the margins being
    measured, since the identities belong to the exact map.
    """
    rng = np.random.default_rng(seed)
    smooth = loss != "hinge"
    worst_firm = math.inf
    worst_gbound = math.inf
    worst_opt = 0.0
    for _ in range(trials):
        spec, gamma = random_folded_term(rng, loss, d=d)
        xa = rng.standard_normal(d) * 10.0 ** rng.uniform(-1.0, 1.0)
        xb = rng.standard_normal(d) * 10.0 ** rng.uniform(-1.0, 1.0)
        # 1-D residual tol just above that problem's floating-point floor,
        # which scales with the effective step gamma' = gamma*||X||^2.
        gp = gamma * spec.dataset.rows[0].sq_norm
        tol = max(1e-13, 1e-12 * (1.0 + 2.0 * gp))
        pa = prox_term(spec, 0, xa, gamma, tol=tol, max_iter=100)
        pb = prox_term(spec, 0, xb, gamma, tol=tol, max_iter=100)
        dp = pa - pb
        dx = xa - xb
        worst_firm = min(
            worst_firm,
            float(dx @ dp) - (1.0 + spec.mu * gamma) * float(dp @ dp),
        )
        if smooth:
            ga = (xa - pa) / gamma
            gb = (xb - pb) / gamma
            dg = ga - gb
            term_L = LOSS_CURVATURE[loss] * spec.dataset.rows[0].sq_norm + spec.mu
            worst_gbound = min(
                worst_gbound,
                float(dg @ dx) - (gamma + 1.0 / term_L) * float(dg @ dg),
            )
            worst_opt = max(
                worst_opt,
                float(np.linalg.norm(ga - term_subgradient(spec, 0, pa))),
            )
    details = {"trials": trials, "worst_firm_margin": worst_firm}
    passed = worst_firm >= -1e-9
    if smooth:
        details["worst_gbound_margin"] = worst_gbound
        details["worst_grad_residual"] = worst_opt
        passed = passed and worst_gbound >= -1e-9 and worst_opt <= 1e-8
    return Report(f"operators_{loss}", passed, details)


# ---------------------------------------------------------------------------
# Conjugate-pair identities.


@dataclass
class ConjugatePair:
    """A scalar convex function with a known conjugate, via both proxes."""

    name: str
    prox: callable
    conj_prox: callable


def _hinge_prox_1d(x, gamma):
    return losses.prox_hinge(float(x), 1.0, float(gamma)).c


def conjugate_pairs():
    """Test functions with closed-form conjugates.

    half-square is self-conjugate; the scaled squares dualize the scale;
    the hinge-like function's conjugate is linear on a box; abs dualizes
    to a box indicator (prox = projection).
    """
    pairs = [
        ConjugatePair("zero", lambda x, g: x, lambda u, s: 0.0 * u),
        ConjugatePair(
            "half-square", lambda x, g: x / (1.0 + g), lambda u, s: u / (1.0 + s)
        ),
    ]
    for alpha in (0.5, 3.0):
        pairs.append(
            ConjugatePair(
                f"square-{alpha}",
                lambda x, g, a=alpha: x / (1.0 + g * a),
                lambda u, s, a=alpha: u / (1.0 + s / a),
            )
        )
    pairs.append(
        ConjugatePair(
            "hinge-like",
            lambda x, g: np.vectorize(_hinge_prox_1d)(x, g),
            lambda u, s: np.clip(u - s, -1.0, 0.0),
        )
    )
    pairs.append(
        ConjugatePair(
            "abs",
            lambda x, g: np.sign(x) * np.maximum(np.abs(x) - g, 0.0),
            lambda u, s: np.clip(u, -1.0, 1.0),
        )
    )
    return pairs


def check_moreau(pair, gamma, samples=100, seed=0):
    """Decomposition and displacement identities for one conjugate pair.

    Verifies p(x) = x - gamma * q(x/gamma) and q(x/gamma) = (x - p(x))/gamma
    where p is the prox of the function at step gamma and q the prox of its
    conjugate at step 1/gamma, over random scalar inputs.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(samples) * 10.0 ** rng.uniform(-2.0, 2.0, size=samples)
    p = np.asarray(pair.prox(x, gamma), dtype=np.float64)
    q = np.asarray(pair.conj_prox(x / gamma, 1.0 / gamma), dtype=np.float64)
    r_decomp = float(np.max(np.abs(p - (x - gamma * q))))
    r_disp = float(np.max(np.abs(q - (x - p) / gamma)))
    return Report(
        f"moreau_{pair.name}",
        r_decomp <= 1e-10 and r_disp <= 1e-10,
        {"gamma": gamma, "samples": samples, "decomposition_residual": r_decomp,
         "displacement_residual": r_disp},
    )


# ---------------------------------------------------------------------------
# Synthetic problems with known references.


def synthetic_quadratic(n, d, cond, seed=0):
    """Interpolation least-squares problem with a chosen condition ratio.

    All labels are zero, so the minimizer is the origin, every per-term
    gradient vanishes there, and the optimal value is exactly zero; mu is
    set from the data so that L/mu equals cond.
    """
    if cond <= 1.0:
        raise ValueError("cond must exceed 1")
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((n, d))
    R /= np.sqrt((R * R).sum(axis=1).max())
    rows = [SparseVec(np.arange(d, dtype=np.int64), R[i].copy()) for i in range(n)]
    ds = Dataset(rows=rows, labels=np.zeros(n), d=d)
    max_sq = max(r.sq_norm for r in rows)
    mu = max_sq / (cond - 1.0)
    spec = derive_constants(ds, "squared", mu)
    ref = ReferenceSolution(np.zeros(d), np.zeros((n, d)), 0.0)
    return spec, ref


def synthetic_hinge(n, d, mu, seed=0):
    """Linearly structured classification problem for the hinge loss.

    Rows are unit-norm Gaussian directions, labels come from a random
    hyperplane, so the minimizer has a clean set of active margins for
    generic seeds.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    R = rng.standard_normal((n, d))
    R /= np.linalg.norm(R, axis=1, keepdims=True)
    margins = R @ w
    labels = np.where(margins >= 0, 1.0, -1.0)
    rows = [SparseVec(np.arange(d, dtype=np.int64), R[i].copy()) for i in range(n)]
    ds = Dataset(rows=rows, labels=labels, d=d)
    return derive_constants(ds, "hinge", mu)
