"""Datasets for L2-regularized linear models.

LIBSVM text parsing, deterministic subsampling, and derivation of the
smoothness/strong-convexity constants the solvers need.  Rows are kept in
compressed sparse form; a CSR view is built lazily for batched objective
evaluation.
"""
from __future__ import annotations

import gzip
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LOSSES = ("hinge", "logistic", "squared")
CLASSIFICATION_LOSSES = ("hinge", "logistic")

# Upper bound on the second derivative of the scalar loss; the smoothness
# constant of a term is curvature * ||row||^2 + mu.
LOSS_CURVATURE = {"squared": 1.0, "logistic": 0.25, "hinge": math.inf}

# Sentinel for parse_libsvm: keep labels exactly as written in the file.
RAW_LABELS = "raw"


class ParseError(ValueError):
    """Malformed LIBSVM input; message names the 1-based line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class SparseVec:
    """One row in sparse form: strictly increasing indices, float values.

    Explicit zeros are permitted; they do not affect dot products or the
    cached squared norm.  Treated as immutable after construction.
    """

    indices: np.ndarray
    values: np.ndarray
    sq_norm: float = field(init=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.ndim != 1 or self.indices.shape != self.values.shape:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if self.indices.size:
            if self.indices[0] < 0 or np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be non-negative and strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        self.sq_norm = float(self.values @ self.values)

    @property
    def nnz(self):
        return int(self.indices.size)

    def dot(self, x):
        """Inner product with a dense vector x."""
        if self.indices.size == 0:
            return 0.0
        return float(self.values @ x[self.indices])

    def add_into(self, x, coeff):
        """x += coeff * self, in place."""
        if self.indices.size:
            x[self.indices] += coeff * self.values


@dataclass
class Dataset:
    """A design matrix in row-sparse form plus labels."""

    rows: list
    labels: np.ndarray
    d: int
    _csr: sp.csr_matrix = field(default=None, repr=False, compare=False)
    _sq_norms: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if len(self.rows) != self.labels.size:
            raise ValueError("labels and rows disagree in length")
        for i, row in enumerate(self.rows):
            if row.indices.size and row.indices[-1] >= self.d:
                raise ValueError(f"row {i} has index {row.indices[-1]} >= d={self.d}")

    @property
    def n(self):
        return len(self.rows)

    def row_sq_norms(self):
        if self._sq_norms is None:
            self._sq_norms = np.array([r.sq_norm for r in self.rows])
        return self._sq_norms

    def csr(self):
        """CSR view of the design matrix (built once, cached)."""
        if self._csr is None:
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            for i, row in enumerate(self.rows):
                indptr[i + 1] = indptr[i] + row.nnz
            indices = np.concatenate([r.indices for r in self.rows]) if self.n else np.zeros(0, np.int64)
            data = np.concatenate([r.values for r in self.rows]) if self.n else np.zeros(0)
            self._csr = sp.csr_matrix((data, indices, indptr), shape=(self.n, self.d))
        return self._csr

    def margins(self, x):
        """A @ x as a dense vector."""
        return np.asarray(self.csr() @ x).ravel()


def _parse_label(token, label_map, line_no):
    try:
        raw = float(token)
    except ValueError:
        raise ParseError(line_no, f"label {token!r} is not numeric") from None
    if label_map == RAW_LABELS:
        return raw
    if isinstance(label_map, dict):
        for key, mapped in label_map.items():
            if float(key) == raw:
                return float(mapped)
        raise ParseError(line_no, f"label {token!r} not covered by the label map")
    if raw not in (-1.0, 1.0):
        raise ParseError(
            line_no,
            f"label {token!r} is not +/-1; pass a label map (or RAW_LABELS) to accept it",
        )
    return raw


def parse_libsvm(text, label_map=None, d=None):
    """Parse LIBSVM-format text into a Dataset.

    Parameters
    ----------
    text : str or iterable of lines
        ``label idx:value idx:value ...`` records, indices 1-based and
        strictly increasing per row.  Blank lines and lines starting with
        ``#`` are skipped.
    label_map : None, dict, or RAW_LABELS
        None accepts only +/-1 labels (coercing nothing silently); a dict
        maps raw numeric labels to targets; RAW_LABELS passes labels through
        untouched (regression files).
    d : int, optional
        Explicit dimension override; must cover every index seen.

    Raises
    ------
    ParseError
        On any malformed token, naming the offending line number.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    rows, labels = [], []
    d_seen = 0
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        labels.append(_parse_label(tokens[0], label_map, line_no))
        idx, val = [], []
        prev = 0
        for token in tokens[1:]:
            head, sep, tail = token.partition(":")
            if not sep:
                raise ParseError(line_no, f"feature token {token!r} has no ':'")
            try:
                j = int(head)
            except ValueError:
                raise ParseError(line_no, f"feature index {head!r} is not an integer") from None
            try:
                v = float(tail)
            except ValueError:
                raise ParseError(line_no, f"feature value {tail!r} is not numeric") from None
            if j < 1:
                raise ParseError(line_no, f"feature index {j} is not 1-based positive")
            if j <= prev:
                raise ParseError(line_no, f"feature index {j} does not increase (after {prev})")
            prev = j
            idx.append(j - 1)
            val.append(v)
        d_seen = max(d_seen, prev)
        rows.append(SparseVec(np.array(idx, dtype=np.int64), np.array(val)))
    if d is not None:
        if d < d_seen:
            raise ParseError(0, f"dimension override d={d} below max index {d_seen}")
        dim = d
    else:
        dim = d_seen
    return Dataset(rows=rows, labels=np.array(labels), d=dim)


def load_libsvm(path, label_map=None, d=None):
    """Read a LIBSVM file; gzip-compressed input is accepted by extension."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        return parse_libsvm(fh, label_map=label_map, d=d)


def to_libsvm(ds):
    """Serialize a Dataset back to LIBSVM text (1-based indices)."""
    out = []
    for row, label in zip(ds.rows, ds.labels):
        parts = [repr(float(label))]
        parts += [f"{int(j) + 1}:{float(v)!r}" for j, v in zip(row.indices, row.values)]
        out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


def subsample(ds, fraction, seed):
    """Keep ceil(fraction * n) distinct rows, chosen uniformly.

    Deterministic for a fixed seed; fraction 1.0 returns the dataset
    unchanged.  The kept rows stay in their original order and d is
    preserved.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return ds
    k = math.ceil(fraction * ds.n)
    # permutation-based draw without replacement from the portable stream
    from .engine import IndexSampler

    sampler = IndexSampler([seed, "subsample"])
    chosen = np.sort(sampler.permutation(ds.n)[:k])
    return Dataset(
        rows=[ds.rows[i] for i in chosen],
        labels=ds.labels[chosen],
        d=ds.d,
    )


def scale_features(ds):
    """Return a copy with each feature scaled to [-1, 1] by its max |value|.

    Provided for callers that want pre-scaling; nothing in the pipeline
    applies it implicitly.
    """
    peak = np.zeros(ds.d)
    for row in ds.rows:
        if row.indices.size:
            np.maximum.at(peak, row.indices, np.abs(row.values))
    peak[peak == 0.0] = 1.0
    rows = [
        SparseVec(row.indices, row.values / peak[row.indices]) if row.indices.size else row
        for row in ds.rows
    ]
    return Dataset(rows=rows, labels=ds.labels.copy(), d=ds.d)


@dataclass
class ProblemSpec:
    """A dataset bound to a loss and regularization strength.

    L is the uniform per-term smoothness bound: curvature * max ||row||^2 +
    mu, infinite for the hinge.  mu must be positive for the default solver
    path; mu = 0 is allowed for the bare proximal operators.
    """

    dataset: Dataset
    loss: str
    mu: float
    L: float

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if math.isfinite(self.L) and self.L < self.mu:
            raise ValueError("L must be at least mu")


def derive_constants(ds, loss, mu):
    """Build a ProblemSpec with L derived from the data.

    For classification losses the labels must be exactly +/-1.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    if loss in CLASSIFICATION_LOSSES and ds.n:
        bad = ~np.isin(ds.labels, (-1.0, 1.0))
        if np.any(bad):
            raise ValueError(
                f"{loss} needs +/-1 labels; found {ds.labels[bad][0]!r} "
                f"(row {int(np.flatnonzero(bad)[0])})"
            )
    max_sq = float(ds.row_sq_norms().max()) if ds.n else 0.0
    L = LOSS_CURVATURE[loss] * max_sq + mu
    return ProblemSpec(dataset=ds, loss=loss, mu=mu, L=L)
