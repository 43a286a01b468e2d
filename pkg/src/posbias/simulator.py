"""Synthetic PBM click logs with known ground truth.

Users belong to a few latent segments and items to a few latent clusters.
Relevance is a function of (item cluster, user segment) plus small per-item
jitter, and item features are noisy copies of their cluster prototype, so
items that are relevant to the same users also look alike in feature space.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .click_model import InteractionLog, LoggingPolicy, PositionBiasVector, RelevanceTable

POLICY_KINDS = ("uniform", "pinned", "skewed")


def _inverse_rank(k: np.ndarray, **_) -> np.ndarray:
    return 1.0 / (1.0 + k)


def _exponential(k: np.ndarray, rate: float = 0.3, **_) -> np.ndarray:
    return np.exp(-rate * k)


def _power(k: np.ndarray, eta: float = 1.0, **_) -> np.ndarray:
    return (1.0 / (1.0 + k)) ** eta


def _from_file(k: np.ndarray, path: str = "", **_) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".json":
        values = json.loads(p.read_text())
        if isinstance(values, dict):
            values = values["theta"]
    else:
        values = [float(x) for x in p.read_text().replace(",", " ").split()]
    values = np.asarray(values, dtype=float)
    if values.shape[0] != k.shape[0]:
        raise ValueError(f"bias file has {values.shape[0]} values, need {k.shape[0]}")
    return values


BIAS_CURVES: dict[str, Callable[..., np.ndarray]] = {
    "inverse-rank": _inverse_rank,
    "exponential": _exponential,
    "power": _power,
    "file": _from_file,
}


@dataclass
class SimConfig:
    n_items: int = 15
    n_positions: int = 10
    n_users: int = 60
    d_features: int = 8
    n_segments: int = 3
    n_item_clusters: int = 3
    d_item_features: int = 32
    bias_curve: str = "inverse-rank"
    bias_params: dict = field(default_factory=dict)
    policy_kind: str = "uniform"
    skew_weight: float = 0.5
    n_impressions: int = 100_000
    relevance_high: float = 0.85
    relevance_low: float = 0.1
    relevance_jitter: float = 0.03
    feature_signal: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_items", "n_positions", "n_users", "d_features", "n_segments",
                     "n_item_clusters", "d_item_features", "n_impressions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.bias_curve not in BIAS_CURVES:
            raise ValueError(f"unknown bias_curve {self.bias_curve!r}; choose from {sorted(BIAS_CURVES)}")
        if self.policy_kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy_kind {self.policy_kind!r}; choose from {POLICY_KINDS}")
        if self.policy_kind in ("pinned", "skewed") and self.n_items < self.n_positions:
            raise ValueError(
                f"n_items ({self.n_items}) < n_positions ({self.n_positions}) leaves positions uncovered"
            )
        if not 0.0 <= self.skew_weight <= 1.0:
            raise ValueError("skew_weight must lie in [0, 1]")
        if not 0.0 <= self.relevance_low <= self.relevance_high <= 1.0:
            raise ValueError("need 0 <= relevance_low <= relevance_high <= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    theta: PositionBiasVector
    relevance: RelevanceTable
    item_features: np.ndarray
    user_features: np.ndarray
    user_segments: np.ndarray
    item_clusters: np.ndarray

    def mu_for_users(self, user_ids=None) -> np.ndarray:
        """True mu(i, u) as a users x items matrix."""
        segs = self.user_segments if user_ids is None else self.user_segments[np.asarray(user_ids)]
        return self.relevance.mu[:, segs].T

    def to_json_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "mu": self.relevance.mu.tolist(),
            "item_features": self.item_features.tolist(),
            "user_features": self.user_features.tolist(),
            "user_segments": self.user_segments.tolist(),
            "item_clusters": self.item_clusters.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            PositionBiasVector(d["theta"]),
            RelevanceTable(d["mu"]),
            np.asarray(d["item_features"], dtype=float),
            np.asarray(d["user_features"], dtype=float),
            np.asarray(d["user_segments"], dtype=np.int64),
            np.asarray(d["item_clusters"], dtype=np.int64),
        )


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    truth_ss, log_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(truth_ss), np.random.default_rng(log_ss)


def bias_curve(config: SimConfig) -> np.ndarray:
    k = np.arange(config.n_positions, dtype=float)
    theta = np.asarray(BIAS_CURVES[config.bias_curve](k, **config.bias_params), dtype=float)
    return theta


def make_ground_truth(config: SimConfig) -> GroundTruth:
    config.validate()
    rng, _ = _streams(config.seed)
    theta = bias_curve(config)

    n_c, n_s = config.n_item_clusters, config.n_segments
    clusters = np.arange(config.n_items) % n_c
    segments = np.arange(config.n_users) % n_s

    # segment s prefers cluster s, then s+1, ... (cyclic)
    levels = np.linspace(config.relevance_high, config.relevance_low, n_c)
    cluster_mu = np.array([[levels[(c - s) % n_c] for s in range(n_s)] for c in range(n_c)])
    jitter = rng.normal(0.0, config.relevance_jitter, size=(config.n_items, 1))
    mu = np.clip(cluster_mu[clusters] + jitter, 0.01, 0.99)

    item_protos = rng.normal(size=(n_c, config.d_item_features))
    item_features = config.feature_signal * item_protos[clusters] + rng.normal(
        size=(config.n_items, config.d_item_features)
    )
    user_protos = rng.normal(size=(n_s, config.d_features))
    user_features = user_protos[segments] + 0.3 * rng.normal(size=(config.n_users, config.d_features))

    return GroundTruth(
        PositionBiasVector(theta),
        RelevanceTable(mu),
        item_features,
        user_features,
        segments,
        clusters,
    )


def pinned_positions(n_items: int, n_positions: int) -> np.ndarray:
    """Round-robin slot for every item."""
    return np.arange(n_items) % n_positions


def make_policy(config: SimConfig) -> LoggingPolicy:
    config.validate()
    n_i, n_k = config.n_items, config.n_positions
    uniform = np.full((n_i, n_k), 1.0 / (n_i * n_k))
    if config.policy_kind == "uniform":
        return LoggingPolicy(uniform)
    pinned = np.zeros((n_i, n_k))
    pinned[np.arange(n_i), pinned_positions(n_i, n_k)] = 1.0 / n_i
    if config.policy_kind == "pinned":
        return LoggingPolicy(pinned)
    w = config.skew_weight
    return LoggingPolicy((1.0 - w) * uniform + w * pinned)


def simulate_log(truth: GroundTruth, policy: LoggingPolicy, config: SimConfig) -> InteractionLog:
    """Draw impressions from the policy and clicks from the PBM."""
    theta = truth.theta.theta
    mu = truth.relevance.mu
    if policy.pi.shape != (mu.shape[0], theta.shape[0]):
        raise ValueError(f"policy shape {policy.pi.shape} != (items, positions) {(mu.shape[0], theta.shape[0])}")
    n_users = truth.user_features.shape[0]
    _, rng = _streams(config.seed)
    n = config.n_impressions

    users = rng.integers(0, n_users, size=n)
    flat = policy.pi.ravel()
    pairs = rng.choice(flat.shape[0], size=n, p=flat / flat.sum())
    items, positions = np.divmod(pairs, policy.n_positions)
    p_click = mu[items, truth.user_segments[users]] * theta[positions]
    clicks = (rng.random(n) < p_click).astype(np.int64)
    return InteractionLog(
        truth.user_features[users], items, clicks, positions,
        policy.n_items, policy.n_positions, user_ids=users,
    )


def sparsify(log: InteractionLog, policy: LoggingPolicy) -> InteractionLog:
    """Keep only records whose (item, position) pair the policy supports."""
    keep = policy.pi[log.item_ids, log.positions] > 0
    return log.subset(keep)


def pinned_policy(n_items: int, n_positions: int) -> LoggingPolicy:
    return make_policy(SimConfig(n_items=n_items, n_positions=n_positions, policy_kind="pinned"))


# -- file handoff ------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_log_csv(path, log: InteractionLog, meta: dict | None = None) -> None:
    path = Path(path)
    d = log.context_dim
    with path.open("w", newline="") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"u{j}" for j in range(d)] + ["item_id", "click", "position"])
        for ctx, i, c, k in zip(log.contexts, log.item_ids, log.clicks, log.positions):
            w.writerow([_fmt(x) for x in ctx] + [int(i), int(c), int(k)])


def read_log_csv(path, n_items: int | None = None, n_positions: int | None = None) -> InteractionLog:
    """Load a log in the ``user_features...,item_id,click,position`` schema.

    Lines starting with ``#`` are metadata. Catalog sizes default to the
    largest observed id + 1.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValueError(f"{path}: empty log")
    header, body = rows[0], rows[1:]
    if header[-3:] != ["item_id", "click", "position"]:
        raise ValueError(f"{path}: header must end with item_id,click,position")
    if not body:
        raise ValueError(f"{path}: no records")
    d = len(header) - 3
    arr = np.array(body, dtype=float)
    items = arr[:, d].astype(np.int64)
    positions = arr[:, d + 2].astype(np.int64)
    return InteractionLog(
        arr[:, :d] if d else np.zeros((len(body), 1)),
        items,
        arr[:, d + 1].astype(np.int64),
        positions,
        n_items if n_items is not None else int(items.max()) + 1,
        n_positions if n_positions is not None else int(positions.max()) + 1,
    )


def read_log_meta(path) -> dict:
    with Path(path).open() as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)
