"""Item embeddings and their softmax assignment to latent tokens.

An item's embedding row is turned into a distribution p(e|i) over the ``m``
embedding dimensions, which act as discrete tokens shared across items.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .click_model import ATOL, _frozen

METHODS = ("lsi", "vae", "identity")


@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray
    method_tag: str

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("embedding must be a 2-d matrix with m >= 1 columns")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding entries must be finite")
        if self.method_tag not in METHODS:
            raise ValueError(f"unknown method_tag {self.method_tag!r}")
        object.__setattr__(self, "values", v)

    @property
    def n_items(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AssignmentMatrix:
    """Row-stochastic p(e|i), items x tokens."""

    probs: np.ndarray
    method_tag: str = "identity"

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ValueError("assignment must be 2-d")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("assignment entries must lie in [0, 1]")
        bad = np.abs(p.sum(axis=1) - 1.0) > ATOL
        if np.any(bad):
            raise ValueError(f"assignment rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def n_items(self) -> int:
        return self.probs.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class LsiFit:
    embedding: EmbeddingMatrix
    singular_values: np.ndarray  # all of them, nonincreasing
    components: np.ndarray       # m x l right singular vectors
    column_mean: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.embedding.values @ self.components + self.column_mean


def _matrix_rank(s: np.ndarray, shape) -> int:
    if s.size == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


def lsi_fit(item_features, m: int, center: bool = True) -> LsiFit:
    X = np.asarray(item_features, dtype=float)
    if X.ndim != 2:
        raise ValueError("item_features must be 2-d")
    if not np.all(np.isfinite(X)):
        raise ValueError("item_features contain non-finite entries")
    if m < 1 or m > min(X.shape):
        raise ValueError(f"m={m} must lie in [1, {min(X.shape)}]")
    mean = X.mean(axis=0) if center else np.zeros(X.shape[1])
    Xc = X - mean
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = _matrix_rank(s, X.shape)
    if m > rank:
        raise ValueError(f"m={m} exceeds the matrix rank; achievable rank is {rank}")
    # fix the sign ambiguity so output is reproducible across LAPACK builds
    signs = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U, Vt = U * signs, Vt * signs[:, None]
    emb = EmbeddingMatrix(U[:, :m] * s[:m], "lsi")
    return LsiFit(emb, s, Vt[:m], mean)


def lsi_embed(item_features, m: int, center: bool = True) -> EmbeddingMatrix:
    """Rank-``m`` truncated-SVD embedding ``U_m * S_m`` of the centered features."""
    return lsi_fit(item_features, m, center).embedding


def vae_embed(item_features, m: int, train=None) -> EmbeddingMatrix:
    from .vae import VaeConfig, fit_vae

    cfg = train if train is not None else VaeConfig()
    return fit_vae(item_features, m, cfg).embedding


def to_assignment(emb: EmbeddingMatrix, temperature: float = 1.0, standardize: bool = True) -> AssignmentMatrix:
    """Softmax each embedding row into p(e|i).

    With ``standardize`` each row is rescaled to zero mean and unit variance
    first, so that ``temperature`` has the same meaning for any embedding.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(emb.values, dtype=float)
    if standardize:
        z = z - z.mean(axis=1, keepdims=True)
        sd = z.std(axis=1, keepdims=True)
        z = np.divide(z, sd, out=np.zeros_like(z), where=sd > 0)
    z = z / temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return AssignmentMatrix(p, emb.method_tag)


def identity_assignment(n_items: int) -> AssignmentMatrix:
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    return AssignmentMatrix(np.eye(n_items), "identity")


def identity_embedding(n_items: int) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.eye(n_items), "identity")


def build_assignment(item_features, method: str, m: int = 8, temperature: float = 1.0,
                     standardize: bool = True, vae_config=None) -> AssignmentMatrix:
    """Embed items with ``method`` and return their assignment matrix."""
    X = np.asarray(item_features, dtype=float)
    if method == "identity":
        return identity_assignment(X.shape[0])
    if method == "lsi":
        emb = lsi_embed(X, m)
    elif method == "vae":
        emb = vae_embed(X, m, vae_config)
    else:
        raise ValueError(f"unknown embedding method {method!r}; valid methods: {', '.join(METHODS)}")
    return to_assignment(emb, temperature, standardize)


def write_matrix_csv(path, matrix, prefix: str, meta: dict | None = None) -> None:
    M = np.asarray(matrix, dtype=float)
    with Path(path).open("w", newline="") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id"] + [f"{prefix}{j}" for j in range(M.shape[1])])
        for i, row in enumerate(M):
            w.writerow([i] + [repr(float(x)) for x in row])


def read_matrix_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    body = np.array(rows[1:], dtype=float)
    order = np.argsort(body[:, 0], kind="stable")
    return body[order, 1:]


def write_assignment_csv(path, assignment: AssignmentMatrix, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("method", assignment.method_tag)
    write_matrix_csv(path, assignment.probs, "p_e", meta)


def read_assignment_csv(path) -> AssignmentMatrix:
    from .simulator import read_log_meta

    tag = read_log_meta(path).get("method", "identity")
    return AssignmentMatrix(read_matrix_csv(path), tag if tag in METHODS else "identity")
