"""Incremental proximal solver for L2-regularized finite sums.

The core method keeps one stored (sub)gradient per term and advances by a
proximal step on a single sampled term:

    z      = x + gamma * (stored_j - stored_mean)
    x_next = prox of term j at z with step gamma
    stored_j <- (z - x_next) / gamma

With the default step size it converges linearly on strongly convex
problems at a rate that adapts to the ratio of the term count to the
condition number. Baselines (a gradient-table method and a decaying-step
subgradient method) and a benchmark harness are included.
"""
from .data import (
    Dataset,
    ParseError,
    ProblemSpec,
    SparseVec,
    derive_constants,
    load_libsvm,
    parse_libsvm,
    scale_features,
    subsample,
    to_libsvm,
)
from .losses import (
    NumericalError,
    ProxResult,
    loss_subgradient,
    loss_value,
    objective,
    prox_hinge,
    prox_logistic,
    prox_squared,
    prox_term,
    term_subgradient,
    term_value,
)
from .engine import (
    DIVERGENCE_THRESHOLD,
    EpochRecord,
    GradientTable,
    IndexSampler,
    SolverState,
    StepSizePlan,
    Trace,
    init_state,
    kappa,
    materialize,
    run,
    run_nonsmooth,
    step,
    step_size_default,
)
from .baselines import (
    PegasosState,
    SagaState,
    init_pegasos,
    init_saga,
    pegasos_step,
    run_pegasos,
    run_saga,
    saga_step,
)

__version__ = "0.1.0"

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "Dataset",
    "EpochRecord",
    "GradientTable",
    "IndexSampler",
    "NumericalError",
    "ParseError",
    "PegasosState",
    "ProblemSpec",
    "ProxResult",
    "SagaState",
    "SolverState",
    "SparseVec",
    "StepSizePlan",
    "Trace",
    "derive_constants",
    "init_pegasos",
    "init_saga",
    "init_state",
    "kappa",
    "materialize",
    "load_libsvm",
    "loss_subgradient",
    "loss_value",
    "objective",
    "parse_libsvm",
    "pegasos_step",
    "prox_hinge",
    "prox_logistic",
    "prox_squared",
    "prox_term",
    "run",
    "run_nonsmooth",
    "run_pegasos",
    "run_saga",
    "saga_step",
    "scale_features",
    "step",
    "step_size_default",
    "subsample",
    "term_subgradient",
    "term_value",
    "to_libsvm",
]
