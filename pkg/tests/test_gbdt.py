import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modechoice import gbdt
from modechoice.errors import SchemaError
from modechoice.features.table import FeatureTable
from modechoice.gbdt.binning import MISSING_BIN, apply_bins, bin_features, compute_bin_edges, n_bins
from modechoice.gbdt.tree import _build_histograms, grow_tree
from oracles import best_split_bruteforce


def _table(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or [f"f{j}" for j in range(X.shape[1])]
    return FeatureTable(names, X, np.asarray(y), [f"s{i}" for i in range(len(X))], ["plan"] * X.shape[1])


def _blobs(seed=0, n=900, d=5, missing=0.1):
    rng = np.random.default_rng(seed)
    y = rng.integers(1, 4, n)
    X = rng.normal(size=(n, d))
    X[:, 0] += 1.5 * y
    X[:, 1] -= y
    X[rng.random((n, d)) < missing] = np.nan
    return _table(X, y)


FAST = dict(max_rounds=15, min_child_samples=10, num_leaves=8)


# --------------------------------------------------------------------------- binning


def test_bin_edges_few_distinct_values():
    edges = compute_bin_edges([3.0, 1.0, 2.0, 2.0, np.nan])
    assert edges.tolist() == [1.5, 2.5]
    assert compute_bin_edges([4.0, 4.0]).size == 0
    assert compute_bin_edges([np.nan]).size == 0


def test_bin_edges_quantiles():
    v = np.arange(1000, dtype=float)
    edges = compute_bin_edges(v, max_bins=4)
    assert edges.tolist() == [249.5, 499.5, 749.5]
    counts = np.bincount(np.searchsorted(edges, v))
    assert counts.tolist() == [250] * 4


def test_bin_edges_never_split_equal_values():
    v = np.repeat(np.arange(10.0), [500, 1, 1, 1, 1, 1, 1, 1, 1, 500])
    edges = compute_bin_edges(v, max_bins=3)
    b = np.searchsorted(edges, v)
    for x in np.unique(v):
        assert len(np.unique(b[v == x])) == 1
    assert np.all(np.diff(edges) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300), st.integers(2, 255))
def test_bin_threshold_equivalence(values, max_bins):
    v = np.array(values)
    edges = compute_bin_edges(v, max_bins)
    b = apply_bins(v[:, None], [edges])[:, 0]
    assert len(edges) < max_bins and b.max() <= len(edges)
    for t in range(len(edges)):
        assert np.array_equal(b <= t, v <= edges[t])


def test_missing_goes_to_reserved_bin():
    edges, binned = bin_features(np.array([[1.0], [np.nan], [2.0]]))
    assert binned[:, 0].tolist() == [0, MISSING_BIN, 1]
    with pytest.raises(ValueError):
        apply_bins(np.zeros((2, 3)), edges)


# --------------------------------------------------------------------------- trees


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3), st.integers(1, 8))
def test_root_split_matches_bruteforce(seed, d, min_child):
    rng = np.random.default_rng(seed)
    n = 40
    X = rng.integers(0, 6, (n, d)).astype(float)
    X[rng.random((n, d)) < 0.2] = np.nan
    edges, binned = bin_features(X)
    g, h = rng.normal(size=n), rng.uniform(0.1, 1.0, n)
    nb = np.array([n_bins(e) for e in edges])
    tree = grow_tree(g, h, np.ascontiguousarray(binned.T), np.arange(n), np.arange(d), nb, edges,
                     num_leaves=2, min_child_samples=min_child, l2_lambda=1.0)
    gain, f, b, dl = best_split_bruteforce(binned.tolist(), g.tolist(), h.tolist(), 1.0, min_child)
    if f < 0:
        assert tree.n_nodes == 1
        return
    assert tree.n_nodes == 3
    assert tree.gain[0] == pytest.approx(gain, rel=1e-9, abs=1e-12)
    col = binned[:, f]
    expect_left = np.where(col == MISSING_BIN, dl, col <= b)
    got_left = tree.apply_binned(binned) == tree.left[0]
    assert np.array_equal(got_left, expect_left)


def test_histogram_subtraction_matches_direct():
    rng = np.random.default_rng(5)
    binned = rng.integers(0, 20, (3, 500)).astype(np.uint8)
    g, h = rng.normal(size=500), rng.uniform(size=500)
    rows = np.arange(500)
    left = rows[binned[0] < 7]
    right = rows[binned[0] >= 7]
    feats = np.arange(3)
    parent = _build_histograms(binned, rows, g, h, feats)
    lh = _build_histograms(binned, left, g, h, feats)
    rh = _build_histograms(binned, right, g, h, feats)
    assert np.allclose(parent - lh, rh, atol=1e-9)
    assert parent[:, :, 2].sum() == 1500


def test_tree_structure_invariants():
    t = _blobs(1, n=3000)
    ens = gbdt.train(t, cfg=gbdt.GbdtConfig(max_rounds=5, seed=2))
    binned = apply_bins(t.rows, ens.bin_edges)
    for round_trees in ens.trees:
        for tree in round_trees:
            assert tree.n_leaves <= 40 and tree.max_depth <= 8
            assert tree.n_leaves == (tree.n_nodes + 1) // 2
            leaves = tree.left < 0
            assert np.all(tree.count[leaves] >= 60)
            internal = np.flatnonzero(~leaves)
            assert np.all(tree.count[tree.left[internal]] + tree.count[tree.right[internal]] == tree.count[internal])
            assert np.all(tree.gain[internal] > 0)
            assert np.array_equal(tree.predict_binned(binned), tree.predict_raw(t.rows))


def test_missing_values_follow_default_direction():
    rng = np.random.default_rng(0)
    n = 400
    x = rng.normal(size=n)
    y = np.where(x > 0, 2, 1)
    x[::4] = np.nan
    y[::4] = 2
    ens = gbdt.train(_table(x[:, None], y), cfg=gbdt.GbdtConfig(max_rounds=20, min_child_samples=10, subsample=1.0,
                                                                    feature_fraction=1.0))
    p = gbdt.predict_label(ens, _table([[np.nan], [-1.0], [1.0]], [0, 0, 0]))
    assert p.tolist() == [2, 1, 2]


# --------------------------------------------------------------------------- boosting


def test_softmax_gradients():
    logits = np.array([[0.0, np.log(3.0)]])
    g, h = gbdt.softmax_gradients(logits, np.array([1]))
    assert g == pytest.approx(np.array([[0.25, -0.25]]))
    assert h == pytest.approx(np.array([[0.1875, 0.1875]]))


def test_zero_rounds_is_class_prior():
    t = _blobs()
    ens = gbdt.train(t, cfg=gbdt.GbdtConfig(max_rounds=0))
    p = gbdt.predict_proba(ens, t)
    prior = np.bincount(t.labels, minlength=12) / t.n_rows
    assert np.allclose(p, np.maximum(prior, 1e-12) / np.maximum(prior, 1e-12).sum(), atol=1e-12)


def test_single_class_returns_prior(caplog):
    t = _table(np.random.default_rng(0).normal(size=(50, 2)), [3] * 50)
    ens = gbdt.train(t, cfg=gbdt.GbdtConfig(max_rounds=10))
    assert ens.n_rounds == 0 and "single class" in caplog.text
    assert np.all(gbdt.predict_label(ens, t) == 3)


def test_probabilities_sum_to_one():
    t = _blobs()
    p = gbdt.predict_proba(gbdt.train(t, cfg=gbdt.GbdtConfig(**FAST)), t)
    assert p.shape == (t.n_rows, 12)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12) and np.all(p >= 0)


@pytest.mark.parametrize("fraction", [1.0, 0.8])
def test_training_reduces_loss_and_fits(fraction):
    t = _blobs(missing=0.0)
    ens = gbdt.train(t, cfg=gbdt.GbdtConfig(subsample=fraction, feature_fraction=fraction, **FAST))
    losses = [e["train_loss"] for e in ens.training_log]
    assert np.all(np.diff(losses) <= 1e-12)
    majority = np.bincount(t.labels).max() / t.n_rows
    assert np.mean(gbdt.predict_label(ens, t) == t.labels) > majority + 0.3


def test_deterministic_under_seed():
    t = _blobs()
    a = gbdt.dumps(gbdt.train(t, cfg=gbdt.GbdtConfig(seed=3, **FAST)))
    b = gbdt.dumps(gbdt.train(t, cfg=gbdt.GbdtConfig(seed=3, **FAST)))
    c = gbdt.dumps(gbdt.train(t, cfg=gbdt.GbdtConfig(seed=4, **FAST)))
    assert a == b and a != c


def test_model_round_trip_exact(tmp_path):
    t = _blobs()
    ens = gbdt.train(t, _blobs(7), gbdt.GbdtConfig(**FAST))
    gbdt.save_model(ens, tmp_path / "m.txt")
    back = gbdt.load_model(tmp_path / "m.txt")
    assert np.array_equal(gbdt.predict_logits(ens, t), gbdt.predict_logits(back, t))
    assert gbdt.dumps(back) == gbdt.dumps(ens)
    assert gbdt.model_digest(back) == gbdt.model_digest(ens)
    assert back.config == ens.config and back.best_round == ens.best_round


def test_monotone_transform_invariance():
    t = _blobs(missing=0.05)
    warped = _table(np.exp(t.rows / 3.0) * 10 + 5, t.labels)
    cfg = gbdt.GbdtConfig(seed=1, **FAST)
    a = gbdt.predict_logits(gbdt.train(t, cfg=cfg), t)
    b = gbdt.predict_logits(gbdt.train(warped, cfg=cfg), warped)
    assert np.allclose(a, b, atol=1e-12)


def test_early_stopping_cuts_to_best_round():
    cfg = gbdt.GbdtConfig(max_rounds=200, early_stopping_patience=5, **{k: v for k, v in FAST.items() if k != "max_rounds"})
    ens = gbdt.train(_blobs(0), _blobs(1), cfg)
    log = ens.training_log
    assert len(log) < 200 and ens.n_rounds == ens.best_round
    f1 = [e["valid_weighted_f1"] for e in log]
    assert f1[ens.best_round - 1] == max(f1)
    assert len(log) - ens.best_round == 5


def test_schema_mismatch_names_column():
    t = _blobs()
    ens = gbdt.train(t, cfg=gbdt.GbdtConfig(max_rounds=1))
    renamed = _table(t.rows, t.labels, ["f0", "f1", "f2", "f3", "other"])
    with pytest.raises(SchemaError, match="'f4'"):
        gbdt.predict_proba(ens, renamed)
    with pytest.raises(SchemaError):
        gbdt.train(t, renamed)


def test_feature_importance_orders_by_gain():
    t = _blobs(missing=0.0)
    rows = gbdt.feature_importance(gbdt.train(t, cfg=gbdt.GbdtConfig(**FAST)))
    gains = [r[2] for r in rows]
    assert gains == sorted(gains, reverse=True)
    assert {rows[0][0], rows[1][0]} == {"f0", "f1"}


def test_config_validation():
    for bad in ({"num_leaves": 1}, {"learning_rate": 0}, {"subsample": 1.5}, {"max_bins": 256}, {"max_rounds": -1}):
        with pytest.raises(ValueError):
            gbdt.GbdtConfig(**bad)
