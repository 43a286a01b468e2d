import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from posbias.gbdt import GbdtConfig, RelevanceModel, fit, logloss, predict


def xor_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    return X, y


def test_constant_labels():
    X = np.random.default_rng(0).normal(size=(30, 3))
    m = fit(X, np.ones(30))
    assert np.all(predict(m, X) >= 1 - 1e-6)
    assert predict(m, X).max() <= 1 - 1e-6


def test_xor_depth_two():
    X, y = xor_data()
    m = fit(X, y, GbdtConfig(n_trees=50, max_depth=2))
    acc = np.mean((predict(m, X) > 0.5) == (y == 1))
    assert acc >= 0.95


def test_single_sample():
    x = np.array([[0.3, -1.0]])
    assert predict(fit(x, np.array([1.0])), x)[0] > 0.5


def test_zero_trees_base_zero():
    m = RelevanceModel(0.0, 2)
    assert np.allclose(predict(m, np.zeros((3, 2))), 0.5)


def test_monotone_fixture():
    x = np.linspace(0, 1, 200)[:, None]
    y = x[:, 0] ** 2
    p = predict(fit(x, y, GbdtConfig(n_trees=60, max_depth=3)), x)
    assert np.all(np.diff(p) >= -1e-12)
    assert p[-1] > p[0]


def test_loss_nonincreasing_per_round():
    X, y = xor_data(seed=1)
    m = fit(X, y, GbdtConfig(n_trees=80, max_depth=3, learning_rate=1.0))
    assert len(m.train_loss) == len(m.trees) + 1
    assert np.all(np.diff(m.train_loss) <= 0)
    F = m.raw_score(X)
    assert logloss(F, y, np.ones_like(y)) == pytest.approx(m.train_loss[-1], rel=1e-12)


def test_fit_deterministic_and_json_roundtrip():
    X, y = xor_data(seed=2)
    a = fit(X, y, GbdtConfig(n_trees=20))
    b = fit(X, y, GbdtConfig(n_trees=20))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    back = RelevanceModel.from_dict(json.loads(json.dumps(a.to_dict())))
    assert np.array_equal(predict(back, X), predict(a, X))
    assert np.array_equal(predict(a, X), predict(a, X))


def test_duplicate_features_tie_to_lowest_index():
    X, y = xor_data(seed=3)
    m = fit(np.hstack([X[:, :1], X[:, :1]]), (X[:, 0] > 0).astype(float), GbdtConfig(n_trees=3, max_depth=1))
    assert all(t.feature[0] == 0 for t in m.trees)


def test_sample_weights_equal_repeated_rows():
    X, y = xor_data(n=100, seed=4)
    w = np.random.default_rng(0).integers(1, 4, size=100)
    cfg = GbdtConfig(n_trees=10, min_samples_leaf=1)
    weighted = fit(X, y, cfg, sample_weight=w.astype(float))
    repeated = fit(np.repeat(X, w, axis=0), np.repeat(y, w), cfg)
    assert np.allclose(predict(weighted, X), predict(repeated, X), atol=1e-9)


def test_examination_recovers_relevance():
    rng = np.random.default_rng(5)
    n = 20000
    X = rng.integers(0, 2, size=(n, 1)).astype(float)
    mu = np.where(X[:, 0] > 0, 0.8, 0.2)
    theta = rng.choice([1.0, 0.5, 0.25], size=n)
    clicks = (rng.random(n) < mu * theta).astype(float)
    m = fit(X, clicks, GbdtConfig(n_trees=100, max_depth=1), examination=theta)
    p = predict(m, np.array([[0.0], [1.0]]))
    assert p == pytest.approx([0.2, 0.8], abs=0.03)
    assert np.all(np.diff(m.train_loss) <= 0)


def test_errors():
    X, y = xor_data(n=20)
    with pytest.raises(ValueError):
        fit(X, y * 2)
    with pytest.raises(ValueError):
        fit(X, y, GbdtConfig(n_trees=0))
    with pytest.raises(ValueError):
        fit(X, y, GbdtConfig(learning_rate=1.5))
    with pytest.raises(ValueError):
        predict(fit(X, y, GbdtConfig(n_trees=2)), np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 40), st.integers(1, 3)), elements=st.floats(-1e3, 1e3)),
       st.integers(0, 2**32 - 1))
def test_predictions_clamped(X, seed):
    y = np.random.default_rng(seed).integers(0, 2, size=X.shape[0]).astype(float)
    m = fit(X, y, GbdtConfig(n_trees=5, learning_rate=1.0, min_samples_leaf=1))
    p = predict(m, X)
    assert np.all((p >= 1e-6) & (p <= 1 - 1e-6))
    assert np.all(np.diff(m.train_loss) <= 0)
