"""Open-world run on Gaussian blobs: GMM-FINCH without feedback, ANN at 0% and 100%.

Prints one row per step and split; `--out DIR` also writes the JSON-lines logs.
"""
import argparse
from pathlib import Path

from owl.evaluator import ExperimentConfig, run_experiment
from owl.io import write_jsonl
from owl.predictors import make_predictor
from owl.presets import blob_ann_config, blob_gmm_config
from owl.synth import blob_experiment

RUNS = [("gmm_finch", 0.0), ("ann", 0.0), ("ann", 1.0)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--separation", type=float, default=6.0)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    manifest, features, plan = blob_experiment(dim=args.dim, separation=args.separation, seed=args.seed)
    print("predictor\tbudget\tstep\tsplit\tclass_acc\tdetect_mcc\trecog_nmi\treaction")
    for kind, budget in RUNS:
        cfg = blob_gmm_config(args.seed) if kind == "gmm_finch" else blob_ann_config(args.seed)
        log = run_experiment(plan, manifest, features, make_predictor(cfg),
                             ExperimentConfig(feedback_budget=budget, seed=args.seed))
        for r in log:
            rt = "-" if r.reaction_time is None else f"{r.reaction_time:.3f}"
            m = r.measures
            print(f"{kind}\t{budget:g}\t{r.step:g}\t{r.split}\t{m['classification']['accuracy']:.3f}\t"
                  f"{m['detection']['mcc']:.3f}\t{m['recognition']['nmi']:.3f}\t{rt}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            write_jsonl([r.to_json() for r in log], args.out / f"{kind}_{int(budget * 100)}.jsonl")


if __name__ == "__main__":
    main()
