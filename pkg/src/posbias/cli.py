"""Command-line pipeline: simulate -> embed -> estimate -> evaluate.

Exit codes: 0 success, 2 configuration / input error, 3 runtime or numeric
failure. Relative ``--out`` paths are resolved under ``$POSBIAS_OUTPUT_ROOT``
when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import embedding as emb_mod
from . import experiment as ex
from .rem import EmConfig, EmState, run_em
from .simulator import (
    GroundTruth, make_ground_truth, make_policy, pinned_policy, read_log_csv, read_log_meta,
    simulate_log, sparsify, write_log_csv,
)

OUTPUT_ROOT_ENV = "POSBIAS_OUTPUT_ROOT"
EXIT_CONFIG, EXIT_RUNTIME = 2, 3


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


def resolve_out(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_config(args) -> ex.PipelineConfig:
    cfg = ex.PipelineConfig.load(args.config) if getattr(args, "config", None) else ex.PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.sim.seed = args.seed
        cfg.em.seed = args.seed
    if getattr(args, "method", None) is not None:
        cfg.embedding.method = args.method
    if getattr(args, "m", None) is not None:
        cfg.embedding.m = args.m
    if getattr(args, "temperature", None) is not None:
        cfg.embedding.temperature = args.temperature
    if getattr(args, "mode", None) is not None:
        cfg.em.mode = args.mode
    if getattr(args, "learner", None) is not None:
        cfg.em.learner = args.learner
    if getattr(args, "max_iter", None) is not None:
        cfg.em.max_iter = args.max_iter
    if getattr(args, "trials", None) is not None:
        cfg.eval.n_trials = args.trials
    cfg.validate()
    return cfg


def _meta(cfg: ex.PipelineConfig, seed: int, **extra) -> dict:
    return {"config_hash": ex.config_hash(cfg), "seed": seed, **extra}


def load_truth(path) -> GroundTruth:
    try:
        return GroundTruth.from_json_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError as e:
        raise ex.ConfigError(f"truth file not found: {path}") from e


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = resolve_out(args.out)
    sim = cfg.sim
    if args.sparsify:
        sim = replace(sim, policy_kind="uniform")
    truth = make_ground_truth(sim)
    log = simulate_log(truth, make_policy(sim), sim)
    if args.sparsify:
        log = sparsify(log, pinned_policy(sim.n_items, sim.n_positions))
    meta = _meta(cfg, sim.seed)
    write_log_csv(out / "log.csv", log, meta)
    ex.dump_json(out / "truth.json", {"meta": meta, **truth.to_json_dict()})
    print(f"wrote {out / 'log.csv'} ({len(log)} records) and {out / 'truth.json'}")
    return 0


def _features(path) -> "np.ndarray":
    import numpy as np

    p = Path(path)
    if not p.exists():
        raise ex.ConfigError(f"features file not found: {path}")
    if p.suffix == ".json":
        return np.asarray(json.loads(p.read_text())["item_features"], dtype=float)
    return emb_mod.read_matrix_csv(p)


def cmd_embed(args) -> int:
    if args.method not in emb_mod.METHODS:
        raise ex.ConfigError(f"unknown method {args.method!r}; valid methods: {', '.join(emb_mod.METHODS)}")
    cfg = load_config(args)
    out = resolve_out(args.out)
    e = cfg.embedding
    X = _features(args.features)
    vae = replace(e.vae, epochs=args.epochs) if args.epochs is not None else e.vae
    assignment = emb_mod.build_assignment(X, e.method, m=e.m, temperature=e.temperature,
                                          standardize=not args.raw, vae_config=vae)
    meta = _meta(cfg, vae.seed, method=e.method, m=assignment.n_tokens, temperature=e.temperature)
    emb_mod.write_assignment_csv(out / "assignment.csv", assignment, meta)
    print(f"wrote {out / 'assignment.csv'} ({assignment.n_items} x {assignment.n_tokens})")
    return 0


def _read_log(path, n_items=None, n_positions=None):
    if not Path(path).exists():
        raise ex.ConfigError(f"log file not found: {path}")
    return read_log_csv(path, n_items, n_positions)


def cmd_estimate(args) -> int:
    cfg = load_config(args)
    out = resolve_out(args.out)
    log_path = args.load_csv or args.log
    if log_path is None:
        raise ex.ConfigError("estimate needs --log (or --load-csv)")
    if args.assignment:
        if not Path(args.assignment).exists():
            raise ex.ConfigError(f"assignment file not found: {args.assignment}")
        assignment = emb_mod.read_assignment_csv(args.assignment)
        log = _read_log(log_path, n_items=assignment.n_items, n_positions=args.n_positions)
    else:
        log = _read_log(log_path, n_positions=args.n_positions)
        assignment = emb_mod.identity_assignment(log.n_items)
    state = run_em(log, assignment, cfg.em)
    payload = state.to_json_dict()
    payload["meta"] = _meta(cfg, cfg.em.seed, log=Path(log_path).name, method=assignment.method_tag)
    ex.dump_json(out / "em_state.json", payload)
    print(f"wrote {out / 'em_state.json'} ({state.status()} after {state.iteration} iterations)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    out = resolve_out(args.out)
    if not Path(args.state).exists():
        raise ex.ConfigError(f"state file not found: {args.state}")
    state = EmState.from_json_dict(json.loads(Path(args.state).read_text()))
    truth = load_truth(args.truth)
    em = state.config or cfg.em
    if args.log:
        log = _read_log(args.log, n_items=truth.relevance.n_items, n_positions=len(truth.theta))
        tm = ex.evaluate_state(state, truth, log, em, cfg.eval)
    else:
        from . import metrics
        import numpy as np

        if state.n_tokens != truth.relevance.n_items:
            raise ex.ConfigError("ranking without --log needs an item-level (identity) state")
        ranks = metrics.rank_all(state, emb_mod.identity_assignment(state.n_tokens), truth.user_features)
        rel = metrics.relevant_sets(truth.mu_for_users(), cfg.eval.relevance_threshold)
        theta = state.theta.theta
        tm = metrics.TrialMetrics(
            metrics.rmse_theta(theta, truth.theta, cfg.eval.normalize),
            metrics.rmse_theta(theta, truth.theta, True),
            metrics.mrr(ranks, rel),
            {int(k): metrics.map_at_k(ranks, rel, int(k)) for k in cfg.eval.cutoffs},
            list(np.asarray(theta).tolist()),
        )
    report = ex.metrics.EvalReport.from_trials([tm], cfg.eval.relevance_threshold)
    payload = {"meta": _meta(cfg, cfg.em.seed, state=Path(args.state).name), "report": report.to_dict()}
    ex.dump_json(out / "report.json", payload)
    table = ex.metrics.format_table({"estimate": report})
    (out / "report.txt").write_text(table)
    print(table, end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args)
    out = resolve_out(args.out or cfg.output_dir)

    def progress(t, res):
        parts = ", ".join(f"{ex.METHOD_LABELS.get(m, m)} rmse={v.rmse_theta:.4f}" for m, v in res.items())
        print(f"trial {t + 1}/{cfg.eval.n_trials}: {parts}", file=sys.stderr)

    reports = ex.run_pipeline(cfg, progress=None if args.quiet else progress)
    ex.dump_json(out / "report.json", ex.report_json(cfg, reports))
    table = ex.report_table(reports)
    (out / "report.txt").write_text(table)
    ex.dump_json(out / "config.json", cfg.to_dict())
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posbias", description="Position-bias estimation with item embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="write a synthetic log.csv and truth.json")
    common(p)
    p.add_argument("--sparsify", action="store_true",
                   help="simulate under the uniform policy, then keep only pinned (item, slot) records")
    p.set_defaults(func=cmd_simulate, stage="simulate")

    p = sub.add_parser("embed", help="write assignment.csv from item features")
    common(p)
    p.add_argument("--features", required=True, help="truth.json or an item x feature CSV")
    p.add_argument("--method", default="lsi")
    p.add_argument("--m", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--epochs", type=int, help="VAE training epochs")
    p.add_argument("--raw", action="store_true", help="skip per-row standardization before softmax")
    p.set_defaults(func=cmd_embed, stage="embed")

    p = sub.add_parser("estimate", help="run regression EM and write em_state.json")
    common(p)
    p.add_argument("--log", help="log CSV")
    p.add_argument("--load-csv", dest="load_csv", help="external log CSV in the same schema")
    p.add_argument("--assignment", help="assignment CSV (default: identity)")
    p.add_argument("--n-positions", type=int, dest="n_positions")
    p.add_argument("--mode", choices=["sample", "expectation"])
    p.add_argument("--learner", choices=["gbdt", "tabular"])
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.set_defaults(func=cmd_estimate, stage="estimate")

    p = sub.add_parser("evaluate", help="score an em_state.json against truth.json")
    common(p)
    p.add_argument("--state", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--log", help="log used to refit relevance with theta fixed")
    p.set_defaults(func=cmd_evaluate, stage="evaluate")

    p = sub.add_parser("pipeline", help="all stages for identity / LSI / VAE over n trials")
    common(p, out_default=None)
    p.add_argument("--method", help=argparse.SUPPRESS)
    p.add_argument("--m", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--mode", choices=["sample", "expectation"])
    p.add_argument("--trials", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_pipeline, stage="pipeline")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ex.ConfigError, FileNotFoundError) as e:
        print(f"error in stage '{args.stage}': {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # numeric / runtime failures
        print(f"error in stage '{args.stage}': {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
