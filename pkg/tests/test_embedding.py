import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from posbias.embedding import (
    AssignmentMatrix, EmbeddingMatrix, build_assignment, identity_assignment, lsi_embed, lsi_fit,
    read_assignment_csv, to_assignment, write_assignment_csv,
)


def test_rank_one_recovery():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=6), rng.normal(size=10)
    X = np.outer(a, b)
    fit = lsi_fit(X, 1)
    assert np.allclose(fit.reconstruct(), X, atol=1e-6)


def test_duplicate_rows_share_embedding():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(8, 12))
    X[5] = X[2]
    E = lsi_embed(X, 4).values
    assert np.allclose(E[5], E[2], atol=1e-12)


def eckart_young_gap(X, m):
    """Reconstruction error minus the norm of discarded singular values.

    The oracle spectrum comes from the eigenvalues of the Gram matrix, a
    different decomposition from the one used by lsi_fit.
    """
    Xc = X - X.mean(axis=0)
    ev = np.sort(np.clip(np.linalg.eigvalsh(Xc @ Xc.T), 0, None))[::-1]
    discarded = np.sqrt(ev[m:].sum())
    err = np.linalg.norm(Xc - (lsi_fit(X, m).reconstruct() - X.mean(axis=0)))
    return err - discarded


@pytest.mark.parametrize("seed", range(5))
def test_eckart_young_15x156(seed):
    X = np.random.default_rng(seed).normal(size=(15, 156))
    assert abs(eckart_young_gap(X, 8)) < 1e-6


def test_singular_values_nonincreasing_and_errors():
    X = np.random.default_rng(2).normal(size=(10, 7))
    s = lsi_fit(X, 3).singular_values
    assert np.all(np.diff(s) <= 0)
    with pytest.raises(ValueError, match="must lie in"):
        lsi_fit(X, 8)
    with pytest.raises(ValueError, match="achievable rank is 1"):
        lsi_fit(np.outer(np.arange(1.0, 5.0), np.arange(1.0, 7.0)), 2, center=False)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        lsi_fit(bad, 2)


def test_lsi_similar_items_close():
    rng = np.random.default_rng(3)
    proto = rng.normal(size=(2, 20)) * 3
    X = np.vstack([proto[0] + 0.1 * rng.normal(size=(4, 20)), proto[1] + 0.1 * rng.normal(size=(4, 20))])
    E = lsi_embed(X, 2).values
    within = np.linalg.norm(E[0] - E[1])
    across = np.linalg.norm(E[0] - E[5])
    assert within < across


def _softmax(rows, tau=1.0):
    return to_assignment(EmbeddingMatrix(np.asarray(rows, dtype=float), "lsi"), tau, standardize=False).probs


def test_softmax_examples():
    assert np.allclose(_softmax([[0.0, 0.0]]), [[0.5, 0.5]], atol=1e-15)
    toy = _softmax([[0.0, 0.0], [0.0, np.log(2)], [0.0, np.log(3)]])
    assert np.allclose(toy, [[1 / 2, 1 / 2], [1 / 3, 2 / 3], [1 / 4, 3 / 4]], atol=1e-12, rtol=0)
    big = _softmax([[1000.0, 0.0]])
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        _softmax([[0.0, 1.0]], tau=0.0)


finite_rows = arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                     elements=st.floats(-50, 50, allow_nan=False))


@given(finite_rows, st.floats(-100, 100), st.floats(0.1, 10), st.booleans())
def test_softmax_rows_stochastic_and_shift_invariant(E, c, tau, std):
    emb = EmbeddingMatrix(E, "lsi")
    p = to_assignment(emb, tau, std).probs
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p > 0) or E.shape[1] > 1  # strictly positive unless underflow
    shifted = to_assignment(EmbeddingMatrix(E + c, "lsi"), tau, std).probs
    assert np.allclose(p, shifted, atol=1e-9)


@given(finite_rows)
def test_equal_embedding_rows_equal_assignment(E):
    E = np.vstack([E, E[:1]])
    p = to_assignment(EmbeddingMatrix(E, "vae")).probs
    assert np.array_equal(p[0], p[-1])


@pytest.mark.parametrize("n", [1, 3])
def test_identity_assignment(n):
    a = identity_assignment(n)
    assert np.array_equal(a.probs, np.eye(n))
    assert np.allclose(a.probs.sum(axis=1), 1)


def test_assignment_validation():
    with pytest.raises(ValueError, match="rows"):
        AssignmentMatrix(np.array([[0.5, 0.4]]))
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.array([[np.inf]]), "lsi")


def test_build_assignment_methods():
    X = np.random.default_rng(4).normal(size=(10, 16))
    for method in ("lsi", "identity"):
        p = build_assignment(X, method, m=4).probs
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert build_assignment(X, "lsi", m=4).probs.shape == (10, 4)
    assert np.all(build_assignment(X, "lsi", m=4).probs > 0)
    with pytest.raises(ValueError, match="valid methods"):
        build_assignment(X, "pca")


def test_assignment_csv_roundtrip(tmp_path):
    a = build_assignment(np.random.default_rng(5).normal(size=(6, 9)), "lsi", m=3)
    write_assignment_csv(tmp_path / "a.csv", a, {"seed": 0})
    back = read_assignment_csv(tmp_path / "a.csv")
    assert np.array_equal(back.probs, a.probs) and back.method_tag == "lsi"
