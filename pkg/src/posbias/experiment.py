"""Trial protocol shared by the CLI pipeline, the scripts and the acceptance suite.

One trial: simulate a uniform-policy log, pin every item to a single slot
(keeping only the matching records), estimate theta with each embedding
method, then hold theta fixed, fit item relevance under the PBM and score
the resulting per-user rankings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .embedding import METHODS, build_assignment, identity_assignment
from .rem import EmConfig, EmState, fit_relevance_fixed_theta, run_em
from .simulator import (
    GroundTruth, SimConfig, make_ground_truth, make_policy, pinned_policy, simulate_log, sparsify,
)
from .vae import VaeConfig


class ConfigError(ValueError):
    pass


@dataclass
class EmbedConfig:
    method: str = "lsi"
    m: int = 8
    temperature: float = 1.0
    standardize: bool = True
    vae: VaeConfig = field(default_factory=VaeConfig)


@dataclass
class EvalConfig:
    cutoffs: list = field(default_factory=lambda: [5, 10])
    n_trials: int = 5
    normalize: bool = False
    relevance_threshold: str | float = "median"
    sparse: bool = True


@dataclass
class PipelineConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    embedding: EmbedConfig = field(default_factory=EmbedConfig)
    em: EmConfig = field(default_factory=EmConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    methods: list = field(default_factory=lambda: ["identity", "lsi", "vae"])
    output_dir: str = "runs/default"

    def validate(self) -> None:
        try:
            self.sim.validate()
            self.em.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; valid methods: {', '.join(METHODS)}")
        if self.embedding.method not in METHODS:
            raise ConfigError(f"unknown embedding method {self.embedding.method!r}; valid methods: {', '.join(METHODS)}")
        if self.embedding.m < 1:
            raise ConfigError("embedding m must be >= 1")
        if self.embedding.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.eval.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if any(int(k) < 1 for k in self.eval.cutoffs):
            raise ConfigError("cutoffs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            cfg = cls()
            if "sim" in d:
                cfg.sim = SimConfig.from_dict(d["sim"])
            if "embedding" in d:
                e = dict(d["embedding"])
                vae = VaeConfig(**e.pop("vae", {}))
                cfg.embedding = EmbedConfig(**e, vae=vae)
            if "em" in d:
                cfg.em = EmConfig.from_dict(d["em"])
            if "eval" in d:
                cfg.eval = EvalConfig(**d["eval"])
            if "methods" in d:
                cfg.methods = list(d["methods"])
            if "output_dir" in d:
                cfg.output_dir = d["output_dir"]
        except TypeError as e:
            raise ConfigError(str(e)) from e
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)


def config_hash(cfg) -> str:
    d = cfg.to_dict() if hasattr(cfg, "to_dict") else cfg
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def trial_configs(cfg: PipelineConfig, trial: int) -> tuple[SimConfig, EmConfig, VaeConfig]:
    sim = replace(cfg.sim, seed=cfg.sim.seed + trial, policy_kind="uniform" if cfg.eval.sparse else cfg.sim.policy_kind)
    em = replace(cfg.em, seed=cfg.em.seed + trial)
    vae = replace(cfg.embedding.vae, seed=cfg.embedding.vae.seed + trial)
    return sim, em, vae


def make_trial_data(sim: SimConfig, sparse: bool = True):
    truth = make_ground_truth(sim)
    log = simulate_log(truth, make_policy(sim), sim)
    if sparse:
        log = sparsify(log, pinned_policy(sim.n_items, sim.n_positions))
    return truth, log


def evaluate_state(state: EmState, truth: GroundTruth, log, em: EmConfig, ev: EvalConfig) -> metrics.TrialMetrics:
    theta = state.theta.theta
    ranker = fit_relevance_fixed_theta(log, theta, em.learner, em.gbdt)
    rankings = metrics.rank_all(ranker, identity_assignment(log.n_items), truth.user_features)
    relevant = metrics.relevant_sets(truth.mu_for_users(), ev.relevance_threshold)
    return metrics.TrialMetrics(
        metrics.rmse_theta(theta, truth.theta, normalize=ev.normalize),
        metrics.rmse_theta(theta, truth.theta, normalize=True),
        metrics.mrr(rankings, relevant),
        {int(k): metrics.map_at_k(rankings, relevant, int(k)) for k in ev.cutoffs},
        theta.tolist(),
    )


def estimate(method: str, truth: GroundTruth, log, cfg: PipelineConfig, em: EmConfig, vae: VaeConfig) -> EmState:
    e = cfg.embedding
    assignment = build_assignment(truth.item_features, method, m=e.m, temperature=e.temperature,
                                  standardize=e.standardize, vae_config=vae)
    return run_em(log, assignment, em)


def run_trial(cfg: PipelineConfig, trial: int) -> dict:
    sim, em, vae = trial_configs(cfg, trial)
    truth, log = make_trial_data(sim, cfg.eval.sparse)
    out = {}
    for method in cfg.methods:
        state = estimate(method, truth, log, cfg, em, vae)
        out[method] = evaluate_state(state, truth, log, em, cfg.eval)
    return out


METHOD_LABELS = {"identity": "REM", "lsi": "LSI + REM", "vae": "VAE + REM"}


def run_pipeline(cfg: PipelineConfig, progress=None) -> dict:
    """All trials for all methods; returns {method: EvalReport}."""
    cfg.validate()
    per_method = {m: [] for m in cfg.methods}
    for t in range(cfg.eval.n_trials):
        res = run_trial(cfg, t)
        for m, tm in res.items():
            per_method[m].append(tm)
        if progress:
            progress(t, res)
    return {m: metrics.EvalReport.from_trials(v, cfg.eval.relevance_threshold) for m, v in per_method.items()}


def report_json(cfg: PipelineConfig, reports: dict) -> dict:
    return {
        "meta": {
            "config_hash": config_hash(cfg),
            "seed": cfg.sim.seed,
            "relevance_label_rule": f"mu(i,u) > per-user {cfg.eval.relevance_threshold}",
            "rmse_reported": "raw" if not cfg.eval.normalize else "first-entry normalized",
        },
        "config": cfg.to_dict(),
        "methods": {METHOD_LABELS.get(m, m): r.to_dict() for m, r in reports.items()},
    }


def report_table(reports: dict) -> str:
    return metrics.format_table({METHOD_LABELS.get(m, m): r for m, r in reports.items()})
