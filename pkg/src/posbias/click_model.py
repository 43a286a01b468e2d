"""Position-based click model: core value types and probability algebra.

Under the PBM a click needs both examination of the slot and relevance of
the item shown there::

    P(C=1 | i, u, k) = P(R=1 | i, u) * P(E=1 | k) = mu(i, u) * theta_k
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

ATOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_prob(name: str, x: float) -> None:
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")


@dataclass(frozen=True)
class Context:
    features: np.ndarray

    def __post_init__(self):
        f = _frozen(self.features)
        if f.ndim != 1:
            raise ValueError("context features must be a 1-d vector")
        if not np.all(np.isfinite(f)):
            raise ValueError("context features must be finite")
        object.__setattr__(self, "features", f)

    @property
    def dim(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Interaction:
    context: Context
    item_id: int
    click: int
    position: int

    def __post_init__(self):
        if self.click not in (0, 1):
            raise ValueError(f"click must be 0 or 1, got {self.click!r}")
        if self.item_id < 0 or self.position < 0:
            raise ValueError("item_id and position must be non-negative")


@dataclass(frozen=True)
class PositionBiasVector:
    theta: np.ndarray

    def __post_init__(self):
        t = _frozen(self.theta)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("theta must be a non-empty 1-d vector")
        if not np.all((t >= 0.0) & (t <= 1.0)):
            raise ValueError(f"theta entries must lie in [0, 1]: {t}")
        object.__setattr__(self, "theta", t)

    def __len__(self) -> int:
        return self.theta.shape[0]

    def tolist(self) -> list[float]:
        return self.theta.tolist()


@dataclass(frozen=True)
class RelevanceTable:
    """mu(i, u) tabulated over items x user segments."""

    mu: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mu)
        if m.ndim != 2:
            raise ValueError("mu must be a 2-d (items x segments) table")
        if not np.all((m >= 0.0) & (m <= 1.0)):
            raise ValueError("relevance values must lie in [0, 1]")
        object.__setattr__(self, "mu", m)

    @property
    def n_items(self) -> int:
        return self.mu.shape[0]

    @property
    def n_segments(self) -> int:
        return self.mu.shape[1]


@dataclass(frozen=True)
class LoggingPolicy:
    """Joint assignment distribution pi(i, k) over items x positions.

    The whole table sums to one (not each row).
    """

    pi: np.ndarray

    def __post_init__(self):
        p = _frozen(self.pi)
        if p.ndim != 2:
            raise ValueError("pi must be a 2-d (items x positions) matrix")
        if np.any(p < 0):
            raise ValueError("policy entries must be non-negative")
        if abs(p.sum() - 1.0) > ATOL:
            raise ValueError(f"policy mass must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "pi", p)

    @property
    def n_items(self) -> int:
        return self.pi.shape[0]

    @property
    def n_positions(self) -> int:
        return self.pi.shape[1]

    def support(self) -> set[tuple[int, int]]:
        return {(int(i), int(k)) for i, k in zip(*np.nonzero(self.pi))}


@dataclass(frozen=True)
class InteractionLog:
    """Column-oriented logged dataset of (u, i, c, k) records."""

    contexts: np.ndarray
    item_ids: np.ndarray
    clicks: np.ndarray
    positions: np.ndarray
    n_items: int
    n_positions: int
    user_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        ctx = _frozen(self.contexts)
        if ctx.ndim == 1:
            ctx = _frozen(ctx.reshape(-1, 1))
        items = _frozen(self.item_ids, dtype=np.int64)
        clicks = _frozen(self.clicks, dtype=np.int64)
        pos = _frozen(self.positions, dtype=np.int64)
        n = items.shape[0]
        if not (ctx.shape[0] == clicks.shape[0] == pos.shape[0] == n):
            raise ValueError("log columns must have equal length")
        if not np.all(np.isfinite(ctx)):
            raise ValueError("context features must be finite")
        if n and (items.min() < 0 or items.max() >= self.n_items):
            raise ValueError(f"item_id out of range [0, {self.n_items})")
        if n and (pos.min() < 0 or pos.max() >= self.n_positions):
            raise ValueError(f"position out of range [0, {self.n_positions})")
        if n and not np.all((clicks == 0) | (clicks == 1)):
            raise ValueError("clicks must be binary")
        object.__setattr__(self, "contexts", ctx)
        object.__setattr__(self, "item_ids", items)
        object.__setattr__(self, "clicks", clicks)
        object.__setattr__(self, "positions", pos)
        if self.user_ids is not None:
            object.__setattr__(self, "user_ids", _frozen(self.user_ids, dtype=np.int64))

    def __len__(self) -> int:
        return self.item_ids.shape[0]

    def __getitem__(self, j: int) -> Interaction:
        return Interaction(
            Context(self.contexts[j]),
            int(self.item_ids[j]),
            int(self.clicks[j]),
            int(self.positions[j]),
        )

    def __iter__(self) -> Iterator[Interaction]:
        for j in range(len(self)):
            yield self[j]

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    def subset(self, mask: np.ndarray) -> "InteractionLog":
        return InteractionLog(
            self.contexts[mask],
            self.item_ids[mask],
            self.clicks[mask],
            self.positions[mask],
            self.n_items,
            self.n_positions,
            None if self.user_ids is None else self.user_ids[mask],
        )

    def pair_support(self) -> set[tuple[int, int]]:
        return set(zip(self.item_ids.tolist(), self.positions.tolist()))

    @classmethod
    def from_records(cls, records: Sequence[Interaction], n_items: int, n_positions: int):
        if not records:
            raise ValueError("need at least one record")
        return cls(
            np.stack([r.context.features for r in records]),
            [r.item_id for r in records],
            [r.click for r in records],
            [r.position for r in records],
            n_items,
            n_positions,
        )


def click_probability(mu_iu: float, theta_k: float) -> float:
    _check_prob("mu_iu", mu_iu)
    _check_prob("theta_k", theta_k)
    return mu_iu * theta_k


def embedded_relevance(assignment_row, mu_eu) -> float:
    """Item-level relevance rebuilt from token-level relevance.

    ``sum_e p(e|i) * mu(e, u)``; the assignment row must be a distribution.
    """
    p = np.asarray(assignment_row, dtype=float)
    m = np.asarray(mu_eu, dtype=float)
    if p.shape != m.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {m.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > ATOL:
        raise ValueError("assignment row must be non-negative and sum to 1")
    return float(p @ m)


def embedded_policy(policy: LoggingPolicy, assignment) -> np.ndarray:
    """Token-level logging policy pi(e, k) = sum_i p(e|i) pi(i, k)."""
    probs = np.asarray(getattr(assignment, "probs", assignment), dtype=float)
    if probs.shape[0] != policy.n_items:
        raise ValueError("assignment rows must match the policy's items")
    return probs.T @ policy.pi
