"""Regression EM over embedding tokens.

Each logged record (u, i, c, k) is spread over the tokens of item i according
to p(e|i). The EM loop then alternates:

* E-step: posteriors of the hidden examination / relevance pair given the
  observed reward, the current theta_k and the current mu(e, u);
* M-step: a regression fit of mu(e, u) on sampled (or expected) relevance
  labels, and a closed-form average for theta_k.

With the identity assignment every record maps to its own item and this is
plain regression EM.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gbdt
from .click_model import InteractionLog, PositionBiasVector
from .embedding import AssignmentMatrix

MU_MIN, MU_MAX = 1e-6, 1.0 - 1e-6
MODES = ("sample", "expectation")
LEARNERS = ("gbdt", "tabular")


@dataclass
class EmConfig:
    max_iter: int = 50
    tol: float = 1e-3
    mode: str = "sample"
    learner: str = "gbdt"
    gbdt: gbdt.GbdtConfig = field(default_factory=gbdt.GbdtConfig)
    seed: int = 0
    resample_w: bool = False
    init_theta: float | list = 0.5
    init_mu: float = 0.5

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}; choose from {LEARNERS}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.init_mu < 1.0:
            raise ValueError("init_mu must lie in (0, 1)")
        self.gbdt.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EmConfig":
        d = dict(d)
        if "gbdt" in d and isinstance(d["gbdt"], dict):
            d["gbdt"] = gbdt.GbdtConfig(**d["gbdt"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown EmConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EmbeddedLog:
    """Expanded records (u, e, w, k), each with a mass ``weight``.

    Contexts are stored once in ``contexts``; records refer to them by row.
    """

    ctx_index: np.ndarray
    token: np.ndarray
    w: np.ndarray
    position: np.ndarray
    weight: np.ndarray
    contexts: np.ndarray
    n_tokens: int
    n_positions: int

    def __len__(self) -> int:
        return self.token.shape[0]


def unique_contexts(contexts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(np.asarray(contexts, dtype=float), axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def expand_log(log: InteractionLog, assignment: AssignmentMatrix, mode: str = "sample",
               seed=0, contexts=None) -> EmbeddedLog:
    """Spread every record over the embedding tokens of its item.

    ``expectation``: one row per (record, token) with p(e|i) > 0, weight
    p(e|i) and reward c, so the expected reward mass of a row is p(e|i) * c.
    ``sample``: one token per record drawn from p(.|i), weight 1 and reward c;
    the joint P(token = e, w = 1) is again p(e|i) * c.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    P = assignment.probs
    if P.shape[0] != log.n_items:
        raise ValueError(f"assignment has {P.shape[0]} rows for {log.n_items} items")
    if contexts is None:
        uniq, inv = unique_contexts(log.contexts)
    else:
        uniq, inv = contexts
    rows = P[log.item_ids]
    if mode == "expectation":
        rec, tok = np.nonzero(rows > 0)
        weight = rows[rec, tok]
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cum = np.cumsum(rows, axis=1)
        u = rng.random(len(log))
        tok = np.minimum((cum < u[:, None] * cum[:, -1:]).sum(axis=1), P.shape[1] - 1)
        rec = np.arange(len(log))
        weight = np.ones(len(log))
    return EmbeddedLog(
        inv[rec], tok.astype(np.int64), log.clicks[rec].astype(float),
        log.positions[rec], weight, uniq, P.shape[1], log.n_positions,
    )


# -- E-step ------------------------------------------------------------------

def e_step_posteriors(w: int, theta_k: float, mu_eu: float) -> tuple[float, float, float, float]:
    """P(E, R | w) for (E,R) = (1,1), (1,0), (0,1), (0,0)."""
    if w not in (0, 1):
        raise ValueError("w must be 0 or 1")
    for name, x in (("theta_k", theta_k), ("mu_eu", mu_eu)):
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {x!r}")
    if w == 1:
        return 1.0, 0.0, 0.0, 0.0
    denom = 1.0 - theta_k * mu_eu
    if denom <= 0.0:
        raise ValueError("theta_k * mu_eu = 1 makes an observed non-click impossible")
    return (
        0.0,
        theta_k * (1.0 - mu_eu) / denom,
        (1.0 - theta_k) * mu_eu / denom,
        (1.0 - theta_k) * (1.0 - mu_eu) / denom,
    )


@dataclass(frozen=True)
class Posteriors:
    e1r1: np.ndarray
    e1r0: np.ndarray
    e0r1: np.ndarray
    e0r0: np.ndarray

    @property
    def examined(self) -> np.ndarray:
        return self.e1r0 + self.e1r1

    @property
    def relevant(self) -> np.ndarray:
        return self.e0r1 + self.e1r1


def e_step(w: np.ndarray, theta_k: np.ndarray, mu: np.ndarray) -> Posteriors:
    """Vectorised posteriors; rows with w = 1 put all mass on (1, 1)."""
    w = np.asarray(w, dtype=float)
    tm = theta_k * mu
    if np.any((w == 0) & (tm >= 1.0)):
        raise ValueError("theta_k * mu_eu = 1 on a non-click row")
    denom = 1.0 - tm
    nc = 1.0 - w
    return Posteriors(
        w.copy(),
        nc * (theta_k * (1.0 - mu) / denom),
        nc * ((1.0 - theta_k) * mu / denom),
        nc * ((1.0 - theta_k) * (1.0 - mu) / denom),
    )


# -- M-step ------------------------------------------------------------------

def group_fsum(keys: np.ndarray, values: np.ndarray, n_groups: int) -> np.ndarray:
    """Exactly rounded per-group sums, independent of record order."""
    order = np.argsort(keys, kind="stable")
    vals = np.asarray(values, dtype=float)[order]
    bounds = np.searchsorted(np.asarray(keys)[order], np.arange(n_groups + 1))
    return np.array([math.fsum(vals[a:b].tolist()) for a, b in zip(bounds[:-1], bounds[1:])])


def m_step_theta(elog: EmbeddedLog, post: Posteriors) -> PositionBiasVector:
    """theta_k = weighted mean over position-k rows of w + (1 - w) P(E=1 | .)."""
    K = elog.n_positions
    mass = group_fsum(elog.position, elog.weight, K)
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise ValueError(f"no records at position {int(empty[0])}")
    num = group_fsum(elog.position, elog.weight * (elog.w + (1.0 - elog.w) * post.examined), K)
    return PositionBiasVector(np.clip(num / mass, 0.0, 1.0))


class TokenRelevance:
    """mu(e, u): wraps a learner so it can be queried by (context, token)."""

    kind = "base"

    def __init__(self, n_tokens: int):
        self.n_tokens = n_tokens

    def predict(self, contexts: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def table(self, contexts: np.ndarray) -> np.ndarray:
        """Relevance for every (context row, token): n_ctx x n_tokens."""
        n = contexts.shape[0]
        ctx = np.repeat(np.arange(n), self.n_tokens)
        tok = np.tile(np.arange(self.n_tokens), n)
        return self.predict(contexts[ctx], tok).reshape(n, self.n_tokens)


class ConstantRelevance(TokenRelevance):
    kind = "constant"

    def __init__(self, n_tokens: int, value: float = 0.5):
        super().__init__(n_tokens)
        self.value = value

    def predict(self, contexts, tokens):
        return np.full(np.shape(tokens)[0], self.value)

    def to_dict(self):
        return {"kind": self.kind, "n_tokens": self.n_tokens, "value": self.value}


class GbdtRelevance(TokenRelevance):
    kind = "gbdt"

    def __init__(self, n_tokens: int, model: gbdt.RelevanceModel):
        super().__init__(n_tokens)
        self.model = model

    @staticmethod
    def features(contexts: np.ndarray, tokens: np.ndarray, n_tokens: int) -> np.ndarray:
        onehot = np.zeros((tokens.shape[0], n_tokens))
        onehot[np.arange(tokens.shape[0]), tokens] = 1.0
        return np.hstack([np.asarray(contexts, dtype=float), onehot])

    def predict(self, contexts, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        return self.model.predict(self.features(contexts, tokens, self.n_tokens))

    def to_dict(self):
        return {"kind": self.kind, "n_tokens": self.n_tokens, "model": self.model.to_dict()}


class TabularRelevance(TokenRelevance):
    """Per-(context, token) averages; unseen keys fall back to the token mean."""

    kind = "tabular"

    def __init__(self, n_tokens: int, contexts: np.ndarray, values: np.ndarray):
        super().__init__(n_tokens)
        self.contexts = np.asarray(contexts, dtype=float)
        self.values = np.asarray(values, dtype=float)  # n_ctx x n_tokens, nan = unseen
        self._index = {row.tobytes(): j for j, row in enumerate(self.contexts)}
        seen = ~np.isnan(self.values)
        cnt = seen.sum(axis=0)
        total = np.where(seen, self.values, 0.0).sum(axis=0)
        overall = float(self.values[seen].mean()) if seen.any() else 0.5
        self.fallback = np.where(cnt > 0, total / np.maximum(cnt, 1), overall)

    def predict(self, contexts, tokens):
        contexts = np.asarray(contexts, dtype=float)
        tokens = np.asarray(tokens, dtype=np.int64)
        rows = np.array([self._index.get(c.tobytes(), -1) for c in contexts], dtype=np.int64)
        out = self.fallback[tokens].copy()
        seen = rows >= 0
        vals = self.values[rows[seen], tokens[seen]]
        out[np.flatnonzero(seen)[~np.isnan(vals)]] = vals[~np.isnan(vals)]
        return out

    def to_dict(self):
        return {"kind": self.kind, "n_tokens": self.n_tokens,
                "contexts": self.contexts.tolist(),
                "values": [[None if np.isnan(x) else x for x in row] for row in self.values]}


def relevance_from_dict(d: dict) -> TokenRelevance:
    kind = d["kind"]
    if kind == "gbdt":
        return GbdtRelevance(d["n_tokens"], gbdt.RelevanceModel.from_dict(d["model"]))
    if kind == "tabular":
        vals = np.array([[np.nan if x is None else x for x in row] for row in d["values"]], dtype=float)
        return TabularRelevance(d["n_tokens"], np.asarray(d["contexts"], dtype=float), vals)
    if kind == "constant":
        return ConstantRelevance(d["n_tokens"], d["value"])
    raise ValueError(f"unknown relevance model kind {kind!r}")


def relevance_targets(elog: EmbeddedLog, post: Posteriors, mode: str, rng=None) -> np.ndarray:
    """P(R=1 | u, e, w, k), or a Bernoulli draw from it in sample mode."""
    p = elog.w + (1.0 - elog.w) * post.e0r1
    if mode == "expectation":
        return p
    return (rng.random(p.shape[0]) < p).astype(float)


def m_step_relevance(elog: EmbeddedLog, post: Posteriors, learner: str = "gbdt",
                     seed=0, mode: str = "sample",
                     gbdt_config: gbdt.GbdtConfig | None = None) -> TokenRelevance:
    """Refit mu(e, u) on relevance labels derived from the E-step.

    Rows sharing (context, token) have identical features, so they are
    collapsed to one weighted row with the weighted mean label; for the
    logistic loss this leaves every gradient and hessian unchanged.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    r = relevance_targets(elog, post, mode, rng)
    m = elog.n_tokens
    n_ctx = elog.contexts.shape[0]
    key = elog.ctx_index * m + elog.token
    uk, inv = np.unique(key, return_inverse=True)
    mass = group_fsum(inv, elog.weight, uk.shape[0])
    label = group_fsum(inv, elog.weight * r, uk.shape[0])
    keep = mass > 0
    uk, mass, label = uk[keep], mass[keep], label[keep]
    mean = np.clip(label / mass, 0.0, 1.0)
    ctx, tok = np.divmod(uk, m)
    if learner == "tabular":
        values = np.full((n_ctx, m), np.nan)
        values[ctx, tok] = mean
        return TabularRelevance(m, elog.contexts, values)
    if learner == "gbdt":
        X = GbdtRelevance.features(elog.contexts[ctx], tok, m)
        model = gbdt.fit(X, mean, gbdt_config or gbdt.GbdtConfig(), sample_weight=mass)
        return GbdtRelevance(m, model)
    raise ValueError(f"unknown learner {learner!r}; choose from {LEARNERS}")


# -- driver ------------------------------------------------------------------

@dataclass
class EmState:
    theta: PositionBiasVector
    relevance_model: TokenRelevance
    iteration: int
    theta_history: list
    converged: bool = False
    config: EmConfig | None = None

    @property
    def n_tokens(self) -> int:
        return self.relevance_model.n_tokens

    def status(self) -> str:
        return "converged" if self.converged else "max_iter"

    def to_json_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "theta_history": [t.tolist() for t in self.theta_history],
            "iteration": self.iteration,
            "status": self.status(),
            "config": None if self.config is None else self.config.to_dict(),
            "relevance_model": self.relevance_model.to_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EmState":
        return cls(
            PositionBiasVector(d["theta"]),
            relevance_from_dict(d["relevance_model"]),
            d["iteration"],
            [PositionBiasVector(t) for t in d["theta_history"]],
            d["status"] == "converged",
            None if d.get("config") is None else EmConfig.from_dict(d["config"]),
        )


def _row_relevance(model: TokenRelevance, elog: EmbeddedLog) -> np.ndarray:
    key = elog.ctx_index * elog.n_tokens + elog.token
    uk, inv = np.unique(key, return_inverse=True)
    ctx, tok = np.divmod(uk, elog.n_tokens)
    mu = model.predict(elog.contexts[ctx], tok)
    return np.clip(mu, MU_MIN, MU_MAX)[inv]


def run_em(log: InteractionLog, assignment: AssignmentMatrix, config: EmConfig | None = None) -> EmState:
    """Alternate expansion, E-step and M-steps until theta settles.

    Stops when the max-norm change of theta drops below ``tol``; running out
    of iterations is reported through ``EmState.converged``, not raised.
    """
    cfg = config or EmConfig()
    cfg.validate()
    K = log.n_positions
    rng = np.random.default_rng(cfg.seed)
    ctx = unique_contexts(log.contexts)
    elog = expand_log(log, assignment, cfg.mode, rng, contexts=ctx)

    init = np.broadcast_to(np.asarray(cfg.init_theta, dtype=float), (K,))
    theta = PositionBiasVector(init)
    model: TokenRelevance = ConstantRelevance(assignment.n_tokens, cfg.init_mu)
    history = [theta]
    mu = _row_relevance(model, elog)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if cfg.resample_w and cfg.mode == "sample" and it > 1:
            elog = expand_log(log, assignment, cfg.mode, rng, contexts=ctx)
            mu = _row_relevance(model, elog)
        post = e_step(elog.w, theta.theta[elog.position], mu)
        model = m_step_relevance(elog, post, cfg.learner, rng, cfg.mode, cfg.gbdt)
        new_theta = m_step_theta(elog, post)
        delta = float(np.max(np.abs(new_theta.theta - theta.theta)))
        theta, mu = new_theta, _row_relevance(model, elog)
        history.append(theta)
        if delta < cfg.tol:
            converged = True
            break
    return EmState(theta, model, it, history, converged, cfg)


def item_relevance(state: EmState, assignment: AssignmentMatrix, contexts: np.ndarray) -> np.ndarray:
    """Item-level mu(i, u) = sum_e p(e|i) mu(e, u), as n_contexts x n_items."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    if assignment.n_tokens != state.n_tokens:
        raise ValueError(f"assignment has {assignment.n_tokens} tokens, model has {state.n_tokens}")
    return state.relevance_model.table(contexts) @ assignment.probs.T


def fit_relevance_fixed_theta(log: InteractionLog, theta, learner: str = "gbdt",
                              gbdt_config: gbdt.GbdtConfig | None = None) -> EmState:
    """Item-level mu(i, u) fitted by maximum likelihood with theta held fixed.

    Records are grouped by (context, item, position); the gbdt learner boosts
    on P(click) = theta_k * mu, the tabular learner uses sum(c) / sum(theta_k)
    per (context, item).
    """
    theta = np.clip(np.asarray(getattr(theta, "theta", theta), dtype=float), MU_MIN, 1.0)
    if theta.shape != (log.n_positions,):
        raise ValueError(f"theta has {theta.shape[0]} entries for {log.n_positions} positions")
    uniq, inv = unique_contexts(log.contexts)
    n_i, K = log.n_items, log.n_positions
    key = (inv * n_i + log.item_ids) * K + log.positions
    uk, kinv = np.unique(key, return_inverse=True)
    n = np.bincount(kinv).astype(float)
    clicks = np.bincount(kinv, weights=log.clicks.astype(float))
    ci, k = np.divmod(uk, K)
    ctx, item = np.divmod(ci, n_i)
    if learner == "tabular":
        cells, cinv = np.unique(ci, return_inverse=True)
        num = np.bincount(cinv, weights=clicks)
        den = np.bincount(cinv, weights=n * theta[k])
        values = np.full((uniq.shape[0], n_i), np.nan)
        c_ctx, c_item = np.divmod(cells, n_i)
        values[c_ctx, c_item] = np.clip(num / den, 0.0, 1.0)
        model: TokenRelevance = TabularRelevance(n_i, uniq, values)
    elif learner == "gbdt":
        X = GbdtRelevance.features(uniq[ctx], item, n_i)
        fitted = gbdt.fit(X, clicks / n, gbdt_config or gbdt.GbdtConfig(), sample_weight=n,
                          examination=theta[k])
        model = GbdtRelevance(n_i, fitted)
    else:
        raise ValueError(f"unknown learner {learner!r}; choose from {LEARNERS}")
    pbv = PositionBiasVector(theta)
    return EmState(pbv, model, 0, [pbv], True, None)
