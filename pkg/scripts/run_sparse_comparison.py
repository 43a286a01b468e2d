"""Compare REM, LSI + REM and VAE + REM on the pinned-slot sparse log.

    python3 scripts/run_sparse_comparison.py --trials 5 --impressions 100000
"""

import argparse
import json
import sys
from dataclasses import replace

from posbias import experiment as ex


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="pipeline config JSON")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--impressions", type=int)
    ap.add_argument("--items", type=int)
    ap.add_argument("--positions", type=int)
    ap.add_argument("--json", help="also write the full report here")
    args = ap.parse_args(argv)

    cfg = ex.PipelineConfig.load(args.config) if args.config else ex.PipelineConfig()
    cfg.eval.n_trials = args.trials
    for field, value in (("n_impressions", args.impressions), ("n_items", args.items),
                         ("n_positions", args.positions)):
        if value is not None:
            cfg.sim = replace(cfg.sim, **{field: value})

    def progress(t, res):
        cells = "  ".join(f"{ex.METHOD_LABELS[m]}: {v.rmse_theta:.4f}" for m, v in res.items())
        print(f"trial {t + 1}: {cells}", file=sys.stderr)

    reports = ex.run_pipeline(cfg, progress)
    print(ex.report_table(reports), end="")
    if args.json:
        ex.dump_json(args.json, ex.report_json(cfg, reports))


if __name__ == "__main__":
    main()
