"""Theta RMSE versus log size, dense uniform log against the pinned sparse log.

    python3 scripts/sweep_sparsity.py --impressions 20000 50000 100000 200000
"""

import argparse
from dataclasses import replace

from posbias import experiment as ex


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--impressions", nargs="+", type=int, default=[20_000, 50_000, 100_000])
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--methods", nargs="+", default=["identity", "lsi"])
    args = ap.parse_args(argv)

    print(f"{'log':<7} {'impressions':>11} " + " ".join(f"{ex.METHOD_LABELS[m]:>10}" for m in args.methods))
    for sparse in (False, True):
        for n in args.impressions:
            cfg = ex.PipelineConfig(methods=list(args.methods))
            cfg.sim = replace(cfg.sim, n_impressions=n, policy_kind="uniform")
            cfg.eval.n_trials = args.trials
            cfg.eval.sparse = sparse
            reports = ex.run_pipeline(cfg)
            cells = " ".join(f"{reports[m].rmse_theta:10.4f}" for m in args.methods)
            print(f"{'sparse' if sparse else 'dense':<7} {n:>11} {cells}")


if __name__ == "__main__":
    main()
