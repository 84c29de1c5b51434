import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from saferoute.errors import DegenerateLabelsError, InsufficientDataError, InsufficientMinorityError, SchemaError
from saferoute.learn import (Column, Dataset, GbdtModel, GbdtParams, cross_validate, feature_importance,
                             predict, smote, train)
from saferoute.learn.gbdt import logloss

from oracles import exact_best_split, true_neighbours


def make(X, y, kinds=None):
    X = np.asarray(X, float)
    kinds = kinds or ["continuous"] * X.shape[1]
    return Dataset(X, y, tuple(Column(f"f{i}", k) for i, k in enumerate(kinds)))


def imbalanced(n=1000, rate=0.162, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    score = X[:, 0] + 0.5 * X[:, 1] + noise * rng.normal(size=n)
    y = (score > np.quantile(score, 1 - rate)).astype(int)
    return make(X, y)


# ------------------------------------------------------------------ SMOTE

def test_smote_balanced_input_unchanged():
    d = make(np.arange(20).reshape(10, 2), [0, 1] * 5)
    assert smote(d) is d


def test_smote_reaches_parity():
    rng = np.random.default_rng(1)
    d = make(rng.normal(size=(110, 3)), [1] * 10 + [0] * 100)
    out = smote(d)
    assert out.class_counts() == (100, 100)
    assert out.synthetic.sum() == 90
    assert np.array_equal(out.X[:110], d.X)


def test_smote_identical_minority_points():
    X = np.vstack([np.tile([1.0, 2.0], (6, 1)), np.random.default_rng(0).normal(size=(30, 2))])
    out = smote(make(X, [1] * 6 + [0] * 30))
    assert np.all(out.X[out.synthetic] == [1.0, 2.0])


def test_smote_needs_k_plus_one_minority_rows():
    with pytest.raises(InsufficientMinorityError):
        smote(make(np.random.default_rng(0).normal(size=(30, 2)), [1] * 5 + [0] * 25), k=5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(6, 40))
def test_smote_rows_on_segment_to_true_neighbour(seed, n_min):
    rng = np.random.default_rng(seed)
    X = np.c_[rng.normal(size=(150, 3)) * [1, 10, 0.1], rng.integers(0, 2, 150)]
    y = np.r_[np.ones(n_min, int), np.zeros(150 - n_min, int)]
    d = make(X, y, ["continuous"] * 3 + ["binary"])
    out = smote(d, seed=seed)
    nbrs = true_neighbours(d)
    for r in np.flatnonzero(out.synthetic):
        p, q = out.parent[r], out.neighbor[r]
        assert q in nbrs[p]
        xp, xq, xs = d.X[p, :3], d.X[q, :3], out.X[r, :3]
        seg = xq - xp
        u = float(seg @ (xs - xp) / (seg @ seg)) if seg @ seg > 0 else 0.0
        assert -1e-12 <= u <= 1 + 1e-12
        assert np.max(np.abs(xp + u * seg - xs)) < 1e-9
        assert out.X[r, 3] == d.X[p, 3]


# ------------------------------------------------------------------ GBDT

def test_single_threshold_separable():
    x = np.arange(100.0)
    m = train(make(x[:, None], (x >= 37).astype(int)), GbdtParams(trees=50, min_leaf_rows=5))
    prob, flag = predict(m, x[:, None])
    assert np.array_equal(flag, x >= 37)
    assert m.trees[0].feature[0] == 0 and 36 < m.trees[0].threshold[0] < 37
    assert sum(t.n_leaves - 1 for t in m.trees[:1]) == 1


def test_one_tree_separates():
    x = np.arange(100.0)
    m = train(make(x[:, None], (x >= 50).astype(int)), GbdtParams(trees=1, learning_rate=1.0, min_leaf_rows=5))
    assert len(m.trees) == 1 and np.mean(predict(m, x[:, None])[1] == (x >= 50)) == 1.0


def test_xor_is_learnable():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(400, 2)).astype(float)
    y = (X[:, 0] != X[:, 1]).astype(int)
    m = train(make(X, y, ["binary", "binary"]), GbdtParams(trees=30, max_leaves=4, min_leaf_rows=5))
    assert np.mean(predict(m, X)[1] == y) == 1.0
    for a in (0, 1):
        for b in (0, 1):
            assert predict(m, np.array([[a, b]]))[1][0] == (a != b)


def test_coin_flip_labels_stay_near_prior():
    rng = np.random.default_rng(7)
    X = rng.integers(0, 2, size=(5000, 2)).astype(float)
    y = (rng.random(5000) < 0.3).astype(int)
    prob, _ = predict(train(make(X, y, ["binary", "binary"])), X)
    assert np.all(np.abs(prob - y.mean()) < 0.1)


def test_zero_tree_model_is_the_prior():
    m = train(make(np.arange(40.0)[:, None], [0, 1] * 20), GbdtParams(trees=0))
    assert predict(m, np.array([[3.0]]))[0][0] == 0.5


def test_single_tree_hand_evaluation():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 2))
    m = train(make(X, (X[:, 0] + rng.normal(0, .5, 200) > 0).astype(int)), GbdtParams(trees=1, min_leaf_rows=10))
    tree = m.trees[0]
    for row in X[:20]:
        node = 0
        while tree.feature[node] >= 0:
            node = tree.left[node] if row[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        expected = expit(m.base_score + m.learning_rate * tree.value[node])
        assert predict(m, row[None, :])[0][0] == pytest.approx(expected, abs=1e-15)


def node_rows(tree, X):
    """Row mask reaching every node of a tree."""
    masks = {0: np.ones(len(X), bool)}
    stack = [0]
    while stack:
        n = stack.pop()
        if tree.feature[n] < 0:
            continue
        go = X[:, tree.feature[n]] <= tree.threshold[n]
        masks[tree.left[n]] = masks[n] & go
        masks[tree.right[n]] = masks[n] & ~go
        stack += [tree.left[n], tree.right[n]]
    return masks


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(30, 200), st.integers(1, 5))
def test_histogram_splits_equal_exact_splits(seed, n, n_feat):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(n, n_feat)), 3)
    y = (X[:, 0] + rng.normal(0, 1, n) > 0).astype(int)
    if y.min() == y.max():
        return
    params = GbdtParams(trees=1, max_leaves=6, min_leaf_rows=5, bins=255)
    m = train(make(X, y), params)
    if not m.trees:
        return
    tree = m.trees[0]
    p0 = y.mean()
    g = np.full(n, p0) - y
    h = np.full(n, p0 * (1 - p0))
    for node, mask in node_rows(tree, X).items():
        if tree.feature[node] < 0:
            continue
        best = exact_best_split(X[mask], g[mask], h[mask], params.min_leaf_rows, params.min_child_hessian)
        gain, f, thr = best
        assert tree.feature[node] == f
        if node == 0:
            assert tree.threshold[node] == thr
        # below the root, bin edges sit between global values; the row partition must agree
        rows = X[mask, f]
        assert np.array_equal(rows <= tree.threshold[node], rows <= thr)
        assert tree.gain[node] == pytest.approx(max(gain, 0.0), rel=1e-9, abs=1e-12)


def test_logloss_non_increasing_per_tree():
    d = imbalanced(800, seed=2)
    m = train(d)
    hist = np.array(m.history)
    assert len(hist) == len(m.trees) + 1
    assert np.all(np.diff(hist) <= 1e-12)
    assert hist[-1] == pytest.approx(logloss(d.y, m.predict_raw(d.X)), abs=1e-12)


def test_training_is_deterministic_and_round_trips(tmp_path):
    d = imbalanced(600, seed=4)
    a, b = train(d), train(d)
    assert a.dumps() == b.dumps()
    path = tmp_path / "m.json"
    a.save(path)
    back = GbdtModel.load(path)
    assert back.dumps() == a.dumps()
    assert a.predict_raw(d.X).tobytes() == back.predict_raw(d.X).tobytes()


def test_load_rejects_foreign_documents(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"format": "other"}))
    with pytest.raises(SchemaError):
        GbdtModel.load(p)


def test_predict_schema_checks():
    d = imbalanced(200)
    m = train(d, GbdtParams(trees=3))
    with pytest.raises(SchemaError):
        predict(m, np.zeros((1, 3)))
    with pytest.raises(SchemaError):
        predict(m, {"f0": 1.0})
    other = Dataset(d.X, d.y, tuple(Column(f"g{i}") for i in range(4)))
    with pytest.raises(SchemaError):
        predict(m, other)
    p1, f1 = predict(m, {"f0": 1.0, "f1": 0.0, "f2": 0.0, "f3": 0.0})
    p2, _ = predict(m, np.array([[1.0, 0.0, 0.0, 0.0]] * 2))
    assert p2[0] == p2[1] == p1 and isinstance(f1, bool)


def test_train_input_checks():
    with pytest.raises(DegenerateLabelsError):
        train(make(np.arange(50.0)[:, None], np.zeros(50, int)))
    with pytest.raises(InsufficientDataError):
        train(make(np.arange(10.0)[:, None], [0, 1] * 5))
    with pytest.raises(ValueError):
        GbdtParams(learning_rate=0)
    with pytest.raises(ValueError):
        make(np.array([[np.nan]]), [0])


def test_importance_single_split_and_unused():
    x = np.arange(100.0)
    X = np.c_[x, np.zeros(100)]
    m = train(make(X, (x >= 50).astype(int)), GbdtParams(trees=1, max_leaves=2, min_leaf_rows=5))
    imp = feature_importance(m)
    assert imp[0].name == "f0" and imp[0].share == 1.0 and imp[0].splits == 1
    assert imp[1].gain == 0.0 and imp[1].splits == 0


# ------------------------------------------------------------------ CV

def test_cv_separable_is_perfect():
    rng = np.random.default_rng(0)
    y = (rng.random(300) < 0.2).astype(int)
    d = make(rng.normal(size=(300, 2)) + 10.0 * y[:, None], y)
    for rb in (False, True):
        rep = cross_validate(d, GbdtParams(trees=20), folds=5, rebalance=rb)
        assert rep.mean("accuracy") == 1.0


def test_cv_fold_sizes():
    rep = cross_validate(imbalanced(1000), GbdtParams(trees=5), folds=10)
    assert [f.valid_size for f in rep.folds] == [100] * 10
    assert sorted(np.concatenate([f.valid_rows for f in rep.folds]).tolist()) == list(range(1000))
    for m in rep.means.values():
        assert 0 <= m <= 1


def test_cv_needs_enough_rows():
    with pytest.raises(InsufficientDataError):
        cross_validate(make(np.arange(5.0)[:, None], [0, 1, 0, 1, 0]), folds=10)


def test_cv_smote_never_sees_validation_rows():
    rep = cross_validate(imbalanced(500, seed=5), GbdtParams(trees=5), folds=5, rebalance=True)
    for f in rep.folds:
        assert np.all(f.valid_rows >= 0)
        assert not set(f.smote_inputs) & set(f.valid_rows)
        assert f.train_size > len(f.smote_inputs)


def test_cv_rebalancing_raises_recall():
    d = imbalanced(1000, seed=0)
    plain = cross_validate(d, folds=10, rebalance=False)
    balanced = cross_validate(d, folds=10, rebalance=True)
    assert balanced.mean("recall") >= plain.mean("recall")
