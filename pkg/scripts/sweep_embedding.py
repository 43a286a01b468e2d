"""Sweep embedding dimension and softmax temperature for LSI / VAE + REM.

Prints mean theta RMSE and MAP@10 over the trials for every (method, m, tau).

    python3 scripts/sweep_embedding.py --dims 2 4 8 12 --temps 0.25 1 4 --trials 3
"""

import argparse
from dataclasses import replace

import numpy as np

from posbias import experiment as ex


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--methods", nargs="+", default=["lsi", "vae"])
    ap.add_argument("--dims", nargs="+", type=int, default=[2, 4, 8, 12])
    ap.add_argument("--temps", nargs="+", type=float, default=[0.5, 1.0, 2.0])
    ap.add_argument("--raw", action="store_true", help="softmax on unstandardised embedding rows")
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--impressions", type=int, default=100_000)
    args = ap.parse_args(argv)

    base = ex.PipelineConfig()
    base.sim = replace(base.sim, n_impressions=args.impressions)
    base.eval.n_trials = args.trials
    print(f"{'method':<8} {'m':>3} {'tau':>6} {'rmse':>8} {'map@10':>8}")

    # the vanilla baseline does not depend on m or tau
    base.methods = ["identity"]
    van = ex.run_pipeline(base)["identity"]
    print(f"{'REM':<8} {'-':>3} {'-':>6} {van.rmse_theta:8.4f} {van.map_at[10]:8.4f}")

    for method in args.methods:
        for m in args.dims:
            for tau in args.temps:
                cfg = ex.PipelineConfig(sim=base.sim, em=base.em, eval=base.eval, methods=[method])
                cfg.embedding = replace(cfg.embedding, m=m, temperature=tau, standardize=not args.raw)
                try:
                    r = ex.run_pipeline(cfg)[method]
                except ValueError as e:
                    print(f"{method:<8} {m:>3} {tau:>6g}  skipped: {e}")
                    continue
                print(f"{method:<8} {m:>3} {tau:>6g} {r.rmse_theta:8.4f} {r.map_at[10]:8.4f}")


if __name__ == "__main__":
    np.seterr(all="ignore")
    main()
