import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modechoice.features.table import FeatureTable
from modechoice.resample import (ResampleConfig, masked_sq_distances, nearest_same_class, random_oversample,
                                 resample, smote_oversample, smote_samples, target_counts)


def _table(rows, labels):
    rows = np.asarray(rows, dtype=float)
    return FeatureTable([f"f{j}" for j in range(rows.shape[1])], rows, np.asarray(labels),
                        [f"s{i}" for i in range(len(rows))], ["plan"] * rows.shape[1])


def _imbalanced(seed=0, n_major=200, n_minor=10, d=3):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, (n_major, d)), rng.normal(2, 1, (n_minor, d))])
    return _table(X, [1] * n_major + [5] * n_minor)


def test_identical_points_interpolate_to_themselves():
    rows, *_ = smote_samples(np.array([[1.0, 2.0], [1.0, 2.0]]), 20, 1, np.random.default_rng(0))
    assert np.array_equal(rows, np.tile([1.0, 2.0], (20, 1)))


def test_two_points_stay_on_segment():
    rows, _, _, lam = smote_samples(np.array([[0.0, 0.0], [2.0, 2.0]]), 50, 1, np.random.default_rng(1))
    assert np.all((rows >= 0) & (rows <= 2))
    assert np.array_equal(rows[:, 0], rows[:, 1])
    assert np.all((lam >= 0) & (lam < 1))


def test_zero_lambda_returns_seed():
    X = np.random.default_rng(2).normal(size=(8, 3))
    rows, seeds, _, _ = smote_samples(X, 30, 3, np.random.default_rng(0), fixed_lambda=0.0)
    assert np.array_equal(rows, X[seeds])


def test_balanced_table_unchanged():
    t = _table(np.eye(4), [1, 1, 2, 2])
    for strategy in ("random", "smote"):
        assert resample(t, ResampleConfig(strategy=strategy, target_ratio=1.0)) is t


def test_singleton_class_duplicated_with_warning(caplog):
    t = _table(np.vstack([np.zeros((10, 2)), [[7.0, 8.0]]]), [1] * 10 + [3])
    with caplog.at_level(logging.WARNING):
        out = smote_oversample(t, ResampleConfig(target_ratio=0.4))
    assert "single row" in caplog.text
    minority = out.rows[out.labels == 3]
    assert len(minority) == 4 and np.all(minority == [7.0, 8.0])


def test_small_class_uses_available_neighbours():
    X = np.array([[0.0], [1.0], [3.0]])
    assert nearest_same_class(X, 5).shape == (3, 2)
    t = _table(np.vstack([np.zeros((20, 1)), X]), [1] * 20 + [2] * 3)
    out = smote_oversample(t, ResampleConfig(k_neighbors=5, target_ratio=0.5))
    new = out.rows[t.n_rows:]
    assert len(new) == 7 and np.all((new >= 0) & (new <= 3))


def test_target_counts():
    assert target_counts([1] * 10 + [2] * 2 + [3], 0.3) == {1: 0, 2: 1, 3: 2}
    assert target_counts([1] * 10 + [2], 0.3, classes=[2]) == {2: 2}
    with pytest.raises(ValueError):
        target_counts([1, 1], 0.5, classes=[4])


@pytest.mark.parametrize("strategy", ["random", "smote"])
@pytest.mark.parametrize("ratio", [0.05, 0.3, 1.0])
def test_counts_reach_target_and_originals_kept(strategy, ratio):
    t = _imbalanced()
    out = resample(t, ResampleConfig(strategy=strategy, target_ratio=ratio, seed=4))
    goal = math.ceil(ratio * 200)
    counts = {c: int(np.sum(out.labels == c)) for c in (1, 5)}
    assert counts[1] == 200 and counts[5] == max(10, goal)
    assert np.array_equal(out.rows[:t.n_rows], t.rows)
    assert np.array_equal(out.labels[:t.n_rows], t.labels)
    assert out.session_ids[:t.n_rows] == t.session_ids
    assert out.column_names == t.column_names


def test_synthetic_rows_grouped_by_class():
    rng = np.random.default_rng(0)
    t = _table(rng.normal(size=(130, 2)), [1] * 100 + [2] * 10 + [4] * 20)
    out = smote_oversample(t, ResampleConfig(target_ratio=0.5))
    tail = out.labels[t.n_rows:]
    assert list(tail) == sorted(tail)
    assert all(i.startswith("smote") for i in out.session_ids[t.n_rows:])


def test_none_returns_same_object():
    t = _imbalanced()
    assert resample(t, ResampleConfig(strategy="none")) is t


def test_random_duplicates_existing_rows():
    t = _imbalanced()
    out = random_oversample(t, ResampleConfig(strategy="random", target_ratio=0.5))
    minority = {tuple(r) for r in t.rows[t.labels == 5]}
    assert all(tuple(r) in minority for r in out.rows[t.n_rows:])


def test_missing_values_copy_seed():
    X = np.array([[0.0, np.nan, 1.0], [4.0, 5.0, np.nan], [2.0, 2.0, 2.0]])
    rows, seeds, picks, lam = smote_samples(X, 200, 2, np.random.default_rng(3))
    a, b = X[seeds], X[picks]
    hole = np.isnan(a) | np.isnan(b)
    assert np.array_equal(rows[hole], a[hole], equal_nan=True)
    expected = a + lam[:, None] * (b - a)
    assert np.allclose(rows[~hole], expected[~hole])


def test_deterministic_under_seed():
    t = _imbalanced()
    a = smote_oversample(t, ResampleConfig(seed=9))
    b = smote_oversample(t, ResampleConfig(seed=9))
    c = smote_oversample(t, ResampleConfig(seed=10))
    assert np.array_equal(a.rows, b.rows) and a.session_ids == b.session_ids
    assert not np.array_equal(a.rows, c.rows)


def test_config_validation():
    for bad in ({"strategy": "adasyn"}, {"k_neighbors": 0}, {"target_ratio": 0.0}, {"target_ratio": 1.5}):
        with pytest.raises(ValueError):
            ResampleConfig(**bad)


def _brute_masked(X, Y):
    out = np.empty((len(X), len(Y)))
    for i, x in enumerate(X):
        for j, y in enumerate(Y):
            ok = ~np.isnan(x) & ~np.isnan(y)
            out[i, j] = float(np.sum((x[ok] - y[ok]) ** 2))
    return out


finite_or_nan = st.one_of(st.floats(-100, 100), st.just(np.nan))


@settings(max_examples=60, deadline=None)
@given(arrays(float, (5, 4), elements=finite_or_nan), arrays(float, (6, 4), elements=finite_or_nan))
def test_masked_distances_match_bruteforce(X, Y):
    assert np.allclose(masked_sq_distances(X, Y), _brute_masked(X, Y), rtol=1e-9, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30), st.integers(1, 6))
def test_neighbours_match_bruteforce(seed, n, k):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    got = nearest_same_class(X, k)
    d = _brute_masked(X, X)
    np.fill_diagonal(d, np.inf)
    for i in range(n):
        kth = np.sort(d[i])[got.shape[1] - 1]
        assert np.all(d[i, got[i]] <= kth + 1e-9)
        assert i not in got[i]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_synthetic_points_convex(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3))
    rows, seeds, picks, lam = smote_samples(X, 40, 4, rng)
    nn = nearest_same_class(X, 4)
    assert all(p in nn[s] for s, p in zip(seeds, picks))
    lo, hi = np.minimum(X[seeds], X[picks]), np.maximum(X[seeds], X[picks])
    assert np.all(rows >= lo - 1e-12) and np.all(rows <= hi + 1e-12)
