import numpy as np
import pytest

from posbias.simulator import SimConfig, make_ground_truth
from posbias.vae import VaeConfig, fit_vae, init_params, loss_and_grads


@pytest.fixture(scope="module")
def features():
    return make_ground_truth(SimConfig()).item_features


@pytest.fixture(scope="module")
def default_fit(features):
    return fit_vae(features, 8, VaeConfig())


def test_loss_decreases(default_fit):
    h = default_fit.loss_history
    assert len(h) == VaeConfig().epochs + 1
    assert h[-1] < h[0]


def test_kl_nonnegative(default_fit):
    assert min(default_fit.kl_history) >= 0.0


def test_seed_determinism(features):
    cfg = VaeConfig(epochs=50, seed=3)
    a, b = fit_vae(features, 4, cfg), fit_vae(features, 4, cfg)
    assert np.array_equal(a.embedding.values, b.embedding.values)
    c = fit_vae(features, 4, VaeConfig(epochs=50, seed=4))
    assert not np.array_equal(a.embedding.values, c.embedding.values)


def test_embedding_shape_and_tag(default_fit, features):
    E = default_fit.embedding
    assert E.values.shape == (features.shape[0], 8) and E.method_tag == "vae"
    assert np.all(np.isfinite(E.values))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 6))
    params = init_params(6, 3, 7, rng)
    eps = rng.normal(size=(5, 3))
    _, _, _, grads = loss_and_grads(params, X, eps)
    h = 1e-6
    for name, p in params.items():
        flat = p.reshape(-1)
        for j in range(0, flat.size, max(1, flat.size // 5)):
            old = flat[j]
            flat[j] = old + h
            up = loss_and_grads(params, X, eps)[0]
            flat[j] = old - h
            down = loss_and_grads(params, X, eps)[0]
            flat[j] = old
            num = (up - down) / (2 * h)
            assert grads[name].reshape(-1)[j] == pytest.approx(num, rel=1e-4, abs=1e-7), name


def test_input_checks(features):
    with pytest.raises(ValueError):
        fit_vae(features, features.shape[1] + 1)
    bad = features.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        fit_vae(bad, 2)


def test_divergence_is_reported(features):
    with pytest.raises(FloatingPointError, match="non-finite"):
        fit_vae(features * 1e200, 2, VaeConfig(epochs=5, standardize_inputs=False))
