"""Gradient-boosted regression trees for binary click propensities.

Logistic loss, second-order (Newton) leaf values and exact greedy splits over
sorted feature values. Labels may be soft (any value in [0, 1]) and rows may
carry weights, which lets callers collapse duplicate feature rows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

P_MIN, P_MAX = 1e-6, 1.0 - 1e-6


@dataclass
class GbdtConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    reg_lambda: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )


@dataclass
class RelevanceModel:
    base_score: float
    n_features: int
    learning_rate: float = 0.1
    trees: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)

    def raw_score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        F = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            F += self.learning_rate * t.apply(X)
        return F

    def predict(self, X) -> np.ndarray:
        return np.clip(_sigmoid(self.raw_score(X)), P_MIN, P_MAX)

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "n_features": self.n_features,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelevanceModel":
        return cls(d["base_score"], d["n_features"], d["learning_rate"],
                   [Tree.from_dict(t) for t in d["trees"]])


def _sigmoid(F):
    return 0.5 * (1.0 + np.tanh(0.5 * F))


def _logit(p: float) -> float:
    p = min(max(p, P_MIN), P_MAX)
    return float(np.log(p / (1.0 - p)))


def logloss(F: np.ndarray, y: np.ndarray, w: np.ndarray, exam: np.ndarray | None = None) -> float:
    """Weighted mean negative log-likelihood of y under P(y=1) = exam * sigmoid(F)."""
    if exam is None:
        # softplus(F) - y F, stable for large |F|
        per = np.logaddexp(0.0, F) - y * F
    else:
        with np.errstate(divide="ignore"):
            log_1m = np.log1p(-exam)
        log_q = np.log(exam) - np.logaddexp(0.0, -F)
        log_1mq = np.logaddexp(0.0, F + log_1m) - np.logaddexp(0.0, F)
        per = -(y * log_q + (1.0 - y) * log_1mq)
    return float(np.sum(w * per) / np.sum(w))


def _grad_hess(F, y, w, exam):
    s = _sigmoid(F)
    if exam is None:
        return w * (s - y), w * s * (1.0 - s)
    # gradient and expected (Fisher) curvature of the PBM likelihood in F
    rest = 1.0 - exam * s
    g = -y * (1.0 - s) + (1.0 - y) * exam * s * (1.0 - s) / rest
    h = exam * s * (1.0 - s) ** 2 / rest
    return w * g, w * h


def _best_split(X, order, g, h, rows_mask, cfg: GbdtConfig):
    """Best (gain, feature, threshold) over all features for the masked rows.

    ``order`` holds each feature's row order (n_features x n_rows). Ties go
    to the lowest feature index, then the lowest threshold.
    """
    lam, msl = cfg.reg_lambda, cfg.min_samples_leaf
    n = int(rows_mask.sum())
    if n < 2 * msl:
        return 0.0, -1, 0.0
    idx = order[rows_mask[order]].reshape(order.shape[0], n)
    v = np.take_along_axis(X.T, idx, axis=1)
    cg, ch = np.cumsum(g[idx], axis=1), np.cumsum(h[idx], axis=1)
    G, H = cg[0, -1], ch[0, -1]
    cnt = np.arange(1, n)
    ok = (v[:, :-1] < v[:, 1:]) & (cnt >= msl) & (n - cnt >= msl)
    gl, hl = cg[:, :-1], ch[:, :-1]
    gain = gl * gl / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - G * G / (H + lam)
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))
    f, j = divmod(flat, n - 1)
    if not gain[f, j] > 1e-12:
        return 0.0, -1, 0.0
    return float(gain[f, j]), f, 0.5 * (v[f, j] + v[f, j + 1])


def _grow_tree(X, order, g, h, cfg: GbdtConfig) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(mask):
        return -g[mask].sum() / (h[mask].sum() + cfg.reg_lambda)

    def build(mask, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(mask))
        if depth >= cfg.max_depth:
            return node
        gain, f, thr = _best_split(X, order, g, h, mask, cfg)
        if f < 0:
            return node
        lmask = mask & (X[:, f] <= thr)
        rmask = mask & ~(X[:, f] <= thr)
        feature[node], threshold[node] = f, thr
        left[node] = build(lmask, depth + 1)
        right[node] = build(rmask, depth + 1)
        return node

    build(np.ones(X.shape[0], dtype=bool), 0)
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
    )


def fit(X, y, config: GbdtConfig | None = None, sample_weight=None, examination=None) -> RelevanceModel:
    """Boost trees on logistic loss; training loss never increases per round.

    With ``examination`` (per-row theta in (0, 1]) the labels are clicks and
    the model is fitted through P(click) = theta * sigmoid(F), so that it
    predicts relevance with the given position bias held fixed.
    """
    cfg = config or GbdtConfig()
    cfg.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("need at least one sample with a 2-d feature matrix")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must match the number of rows")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("labels must lie in [0, 1]")
    w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != y.shape or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("sample weights must be non-negative with positive total")

    exam = None
    if examination is not None:
        exam = np.asarray(examination, dtype=float)
        if exam.shape != y.shape or np.any((exam <= 0) | (exam > 1)):
            raise ValueError("examination probabilities must lie in (0, 1] per row")

    ybar = float(np.sum(w * y) / np.sum(w if exam is None else w * exam))
    model = RelevanceModel(_logit(ybar), X.shape[1], cfg.learning_rate)
    F = np.full(X.shape[0], model.base_score)
    loss = logloss(F, y, w, exam)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite training loss at initialisation")
    model.train_loss.append(loss)
    if np.ptp(y) == 0:
        return model

    order = np.argsort(X, axis=0, kind="stable").T.copy()
    for _ in range(cfg.n_trees):
        g, h = _grad_hess(F, y, w, exam)
        tree = _grow_tree(X, order, g, h, cfg)
        step = tree.apply(X)
        # backtrack on the (rare) rounds where the Newton step overshoots
        for _ in range(30):
            new_F = F + cfg.learning_rate * step
            new_loss = logloss(new_F, y, w, exam)
            if not np.isfinite(new_loss):
                raise FloatingPointError("non-finite training loss during boosting")
            if new_loss <= loss:
                break
            tree.value *= 0.5
            step = step * 0.5
        else:
            break
        model.trees.append(tree)
        F, loss = new_F, new_loss
        model.train_loss.append(loss)
    return model


def predict(model: RelevanceModel, features) -> np.ndarray:
    return model.predict(features)
