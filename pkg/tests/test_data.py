"""Parsing, serialization, subsampling, and derived problem constants."""

import gzip
import math

import numpy as np
import pytest

from pointsaga import (
    Dataset,
    ParseError,
    SparseVec,
    derive_constants,
    load_libsvm,
    parse_libsvm,
    scale_features,
    subsample,
    to_libsvm,
)
from pointsaga.data import LOSS_CURVATURE


def random_dataset(rng, n, d, density=0.5):
    rows = []
    for _ in range(n):
        nnz = rng.binomial(d, density)
        idx = np.sort(rng.choice(d, size=nnz, replace=False))
        rows.append(SparseVec(idx, rng.standard_normal(nnz)))
    labels = rng.choice([-1.0, 1.0], size=n)
    return Dataset(rows=rows, labels=labels, d=d)


def test_parse_basic_line():
    ds = parse_libsvm("+1 1:0.5 3:-2")
    assert ds.n == 1 and ds.d == 3
    assert ds.labels[0] == 1.0
    row = ds.rows[0]
    assert row.indices.tolist() == [0, 2]
    assert row.values.tolist() == [0.5, -2.0]


def test_parse_empty_row():
    ds = parse_libsvm("-1")
    assert ds.n == 1
    assert ds.labels[0] == -1.0
    assert ds.rows[0].indices.size == 0


def test_parse_comments_and_blank_lines():
    text = "# header\n+1 1:1\n\n-1 2:2\n"
    ds = parse_libsvm(text)
    assert ds.n == 2 and ds.d == 2


def test_parse_malformed_value():
    with pytest.raises(ParseError) as err:
        parse_libsvm("1 3:abc")
    assert "line 1" in str(err.value)


def test_parse_nonincreasing_indices():
    with pytest.raises(ParseError) as err:
        parse_libsvm("+1 2:1 2:3")
    assert "line 1" in str(err.value)
    with pytest.raises(ParseError):
        parse_libsvm("+1 3:1 2:3")


def test_parse_bad_label_and_bad_index():
    with pytest.raises(ParseError):
        parse_libsvm("one 1:2")
    with pytest.raises(ParseError):
        parse_libsvm("+1 0:2")  # indices are 1-based in the file
    with pytest.raises(ParseError) as err:
        parse_libsvm("+1 1:1\n-1 x")
    assert "line 2" in str(err.value)


def test_parse_label_map():
    ds = parse_libsvm("1 1:1\n2 1:-1\n", label_map={1.0: 1.0, 2.0: -1.0})
    assert ds.labels.tolist() == [1.0, -1.0]


def test_parse_d_override():
    ds = parse_libsvm("+1 1:1", d=10)
    assert ds.d == 10
    with pytest.raises(ValueError):
        parse_libsvm("+1 5:1", d=2)  # cannot shrink below observed width


def test_sparsevec_norm_cache():
    v = SparseVec(np.array([0, 3]), np.array([3.0, 4.0]))
    assert v.sq_norm == pytest.approx(25.0, rel=1e-12)
    with pytest.raises(ValueError):
        SparseVec(np.array([0]), np.array([np.inf]))
    with pytest.raises(ValueError):
        SparseVec(np.array([1, 0]), np.array([1.0, 2.0]))


def test_explicit_zero_is_inert():
    a = parse_libsvm("+1 1:1 2:0 3:2").rows[0]
    b = parse_libsvm("+1 1:1 3:2").rows[0]
    x = np.arange(3.0)
    assert a.dot(x) == b.dot(x)
    assert a.sq_norm == b.sq_norm


def test_roundtrip_random():
    rng = np.random.default_rng(0)
    for trial in range(20):
        ds = random_dataset(rng, n=rng.integers(1, 30), d=rng.integers(1, 15))
        back = parse_libsvm(to_libsvm(ds), d=ds.d)
        assert back.n == ds.n and back.d == ds.d
        assert np.array_equal(back.labels, ds.labels)
        for r0, r1 in zip(ds.rows, back.rows):
            assert np.array_equal(r0.indices, r1.indices)
            assert np.array_equal(r0.values, r1.values)


def test_load_gzip(tmp_path):
    text = "+1 1:0.25 2:-4\n-1 2:1\n"
    plain = tmp_path / "toy.libsvm"
    plain.write_text(text)
    packed = tmp_path / "toy.libsvm.gz"
    packed.write_bytes(gzip.compress(text.encode()))
    a = load_libsvm(plain)
    b = load_libsvm(packed)
    assert to_libsvm(a) == to_libsvm(b)


def test_subsample_full_fraction_identity():
    rng = np.random.default_rng(1)
    ds = random_dataset(rng, 12, 6)
    assert subsample(ds, 1.0, seed=99) is ds


def test_subsample_sizes():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = int(rng.integers(5, 200))
        ds = random_dataset(rng, n, 4, density=0.8)
        for f in (0.05, 0.10, 1.0):
            sub = subsample(ds, f, seed=3)
            assert sub.n == math.ceil(f * n)
            assert sub.d == ds.d


def test_subsample_distinct_and_deterministic():
    rng = np.random.default_rng(3)
    ds = random_dataset(rng, 100, 5)
    a = subsample(ds, 0.1, seed=7)
    b = subsample(ds, 0.1, seed=7)
    assert a.n == 10
    assert to_libsvm(a) == to_libsvm(b)
    # rows come from the source without replacement
    source = {(tuple(r.indices.tolist()), tuple(r.values.tolist())) for r in ds.rows}
    picked = [(tuple(r.indices.tolist()), tuple(r.values.tolist())) for r in a.rows]
    assert all(p in source for p in picked)
    c = subsample(ds, 0.1, seed=8)
    assert to_libsvm(a) != to_libsvm(c)


def test_subsample_bad_fraction():
    rng = np.random.default_rng(4)
    ds = random_dataset(rng, 10, 3)
    for f in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            subsample(ds, f, seed=0)


def test_scale_features_unit_peak():
    ds = parse_libsvm("+1 1:2 2:-8\n-1 1:-4\n")
    scaled = scale_features(ds)
    peak = np.zeros(ds.d)
    for row in scaled.rows:
        np.maximum.at(peak, row.indices, np.abs(row.values))
    assert np.all(peak <= 1.0 + 1e-15)
    assert peak[0] == pytest.approx(1.0)
    # labels untouched
    assert np.array_equal(scaled.labels, ds.labels)


def test_derive_constants_squared():
    ds = parse_libsvm("1.0 1:2\n-3.5 1:1\n", label_map="raw")
    spec = derive_constants(ds, "squared", 0.5)
    assert spec.L == pytest.approx(4.5)


def test_derive_constants_logistic():
    ds = parse_libsvm("+1 1:2\n-1 1:1\n")
    spec = derive_constants(ds, "logistic", 0.0)
    assert spec.L == pytest.approx(1.0)


def test_derive_constants_hinge_infinite():
    ds = parse_libsvm("+1 1:2\n")
    spec = derive_constants(ds, "hinge", 0.1)
    assert math.isinf(spec.L)


def test_derive_constants_rejects_bad_labels():
    ds = parse_libsvm("2 1:1\n", label_map="raw")
    with pytest.raises(ValueError):
        derive_constants(ds, "hinge", 0.1)
    with pytest.raises(ValueError):
        derive_constants(ds, "logistic", 0.1)
    derive_constants(ds, "squared", 0.1)  # regression targets are free


def test_derived_L_upper_bounds_gradient_lipschitz():
    """Measured gradient Lipschitz ratios stay below the derived L."""
    from pointsaga import term_subgradient

    rng = np.random.default_rng(5)
    ds = random_dataset(rng, 8, 5, density=0.9)
    for loss in ("logistic", "squared"):
        spec = derive_constants(ds, loss, mu=0.3)
        worst = 0.0
        for _ in range(10_000 // 8):
            j = int(rng.integers(ds.n))
            x = rng.standard_normal(ds.d)
            y = rng.standard_normal(ds.d)
            num = np.linalg.norm(term_subgradient(spec, j, x) - term_subgradient(spec, j, y))
            den = np.linalg.norm(x - y)
            if den > 0:
                worst = max(worst, num / den)
        assert worst <= spec.L * (1 + 1e-9)


def test_curvature_constants():
    assert LOSS_CURVATURE["logistic"] == 0.25
    assert LOSS_CURVATURE["squared"] == 1.0
    assert math.isinf(LOSS_CURVATURE["hinge"])
