"""Position-bias error and ranking quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .rem import EmState, item_relevance


def _as_theta(x) -> np.ndarray:
    return np.asarray(getattr(x, "theta", x), dtype=float)


def rmse_theta(estimated, truth, normalize: bool = False) -> float:
    """Root mean squared error between two bias vectors.

    ``normalize`` divides each vector by its own first entry, removing the
    multiplicative scale that the PBM cannot identify.
    """
    est, tru = _as_theta(estimated), _as_theta(truth)
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {tru.shape}")
    if normalize:
        if est[0] == 0 or tru[0] == 0:
            raise ValueError("cannot normalize by a zero first entry")
        est, tru = est / est[0], tru / tru[0]
    return float(np.sqrt(np.mean((est - tru) ** 2)))


def order_by_score(scores) -> list[int]:
    """Descending score; equal scores keep the lower item id first."""
    s = np.asarray(scores, dtype=float)
    return np.argsort(-s, kind="stable").tolist()


def rank_items(em_state: EmState, assignment, context) -> list[int]:
    scores = item_relevance(em_state, assignment, np.atleast_2d(context))[0]
    return order_by_score(scores)


def rank_all(em_state: EmState, assignment, contexts) -> list[list[int]]:
    scores = item_relevance(em_state, assignment, contexts)
    return [order_by_score(row) for row in scores]


def relevant_sets(mu_users_items, threshold: str | float = "median") -> list[set[int]]:
    """Items whose true relevance for a user exceeds that user's threshold."""
    mu = np.atleast_2d(np.asarray(mu_users_items, dtype=float))
    if threshold == "median":
        cut = np.median(mu, axis=1, keepdims=True)
    else:
        cut = np.full((mu.shape[0], 1), float(threshold))
    return [set(np.flatnonzero(row > c).tolist()) for row, c in zip(mu, cut[:, 0])]


def reciprocal_rank(ranking: Sequence[int], relevant: Iterable[int]) -> float:
    rel = set(relevant)
    for pos, item in enumerate(ranking, start=1):
        if item in rel:
            return 1.0 / pos
    return 0.0


def mrr(rankings, relevant) -> float:
    if len(rankings) != len(relevant):
        raise ValueError("need one relevant set per ranking")
    if not rankings:
        return 0.0
    return float(np.mean([reciprocal_rank(r, s) for r, s in zip(rankings, relevant)]))


def average_precision_at_k(ranking: Sequence[int], relevant: Iterable[int], k: int) -> float:
    """Sum of precision at each hit in the top ``k``, over min(|relevant|, k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        return 0.0
    hits, total = 0, 0.0
    for pos, item in enumerate(ranking[:k], start=1):
        if item in rel:
            hits += 1
            total += hits / pos
    return total / min(len(rel), k)


def map_at_k(rankings, relevant, k: int) -> float:
    if len(rankings) != len(relevant):
        raise ValueError("need one relevant set per ranking")
    if not rankings:
        return 0.0
    return float(np.mean([average_precision_at_k(r, s, k) for r, s in zip(rankings, relevant)]))


@dataclass
class TrialMetrics:
    rmse_theta: float
    rmse_theta_normalized: float
    mrr: float
    map_at: dict
    theta: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rmse_theta": self.rmse_theta,
            "rmse_theta_normalized": self.rmse_theta_normalized,
            "mrr": self.mrr,
            "map_at": {str(k): v for k, v in self.map_at.items()},
            "theta": list(self.theta),
        }


@dataclass
class EvalReport:
    rmse_theta: float
    rmse_theta_normalized: float
    mrr: float
    map_at: dict
    n_trials: int
    per_trial: list
    std: dict = field(default_factory=dict)
    relevance_threshold: str = "median"

    @classmethod
    def from_trials(cls, trials: Sequence[TrialMetrics], relevance_threshold="median") -> "EvalReport":
        if not trials:
            raise ValueError("need at least one trial")

        def agg(values):
            a = np.asarray(values, dtype=float)
            return float(a.mean()), float(a.std())

        rm, rs = agg([t.rmse_theta for t in trials])
        nm, ns = agg([t.rmse_theta_normalized for t in trials])
        mm, ms = agg([t.mrr for t in trials])
        cutoffs = sorted(trials[0].map_at)
        map_mean, std = {}, {"rmse_theta": rs, "rmse_theta_normalized": ns, "mrr": ms}
        for k in cutoffs:
            map_mean[k], std[f"map@{k}"] = agg([t.map_at[k] for t in trials])
        return cls(rm, nm, mm, map_mean, len(trials), list(trials), std, str(relevance_threshold))

    def to_dict(self) -> dict:
        return {
            "rmse_theta": self.rmse_theta,
            "rmse_theta_normalized": self.rmse_theta_normalized,
            "mrr": self.mrr,
            "map_at": {str(k): v for k, v in self.map_at.items()},
            "std": self.std,
            "n_trials": self.n_trials,
            "relevance_threshold": self.relevance_threshold,
            "per_trial": [t.to_dict() for t in self.per_trial],
        }


def format_table(reports: dict) -> str:
    """Plain-text comparison: one row per method, mean +- std columns."""
    names = list(reports)
    if not names:
        return ""
    cutoffs = sorted(next(iter(reports.values())).map_at)
    header = ["method", "RMSE", "RMSE (norm.)", "MRR"] + [f"MAP@{k}" for k in cutoffs]
    rows = []
    for name in names:
        r = reports[name]
        rows.append([
            name,
            f"{r.rmse_theta:.4f} ± {r.std['rmse_theta']:.4f}",
            f"{r.rmse_theta_normalized:.4f} ± {r.std['rmse_theta_normalized']:.4f}",
            f"{r.mrr:.4f} ± {r.std['mrr']:.4f}",
        ] + [f"{r.map_at[k]:.4f} ± {r.std[f'map@{k}']:.4f}" for k in cutoffs])
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]

    def line(cells):
        return " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()

    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"
