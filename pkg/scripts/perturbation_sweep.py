"""Classification MCC under feature-space perturbations of growing magnitude.

Each increment is replayed from the post-feedback state of the previous
one, once per perturbation; the clean (identity) row is the reference.
"""
import argparse

import numpy as np

from owl.evaluator import ExperimentConfig, KnownLedger, replay_with_perturbation, run_experiment
from owl.predictors import make_predictor, predictor_from_checkpoint
from owl.presets import blob_ann_config, blob_gmm_config
from owl.synth import Perturbation, blob_experiment

SWEEP = {
    "gaussian_noise": [0.5, 1, 2, 4, 6, 8],
    "uniform_scale": [0.1, 0.5, 1.0],
    "orthogonal_rotation": [0.05, 0.2, 1.0],
    "coordinate_flip_sign": [0.1, 0.25, 0.5],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--predictor", choices=("gmm_finch", "ann"), default="gmm_finch")
    ap.add_argument("--budget", type=float, default=None, help="default: 0 for gmm_finch, 1 for ann")
    ap.add_argument("--split", default="train")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    budget = args.budget if args.budget is not None else float(args.predictor == "ann")
    manifest, features, plan = blob_experiment(seed=args.seed)
    cfg = blob_gmm_config(args.seed) if args.predictor == "gmm_finch" else blob_ann_config(args.seed)
    exp = ExperimentConfig(feedback_budget=budget, seed=args.seed)
    saved = {}

    def keep(pred, ledger, t):
        saved[t] = (pred.to_checkpoint(), KnownLedger(set(ledger.predictor_known), set(ledger.evaluator_seen)))

    run_experiment(plan, manifest, features, make_predictor(cfg), exp, checkpoint=keep)
    perts = [Perturbation()] + [Perturbation(k, m, args.seed) for k, ms in SWEEP.items() for m in ms]
    table = {p.name(): [] for p in perts}
    for t in range(1, len(plan)):
        (header, blocks), ledger = saved[t - 1]
        res = replay_with_perturbation(predictor_from_checkpoint(header, dict(blocks)), ledger, plan.increments[t],
                                       manifest, features, perts, exp)
        for name, recs in res.items():
            table[name] += [r.measures["classification"]["mcc"] for r in recs if r.split == args.split]
    clean = np.mean(table["identity"])
    print(f"perturbation\tmean_mcc\trelative_drop   ({args.predictor}, {args.split} split, increments 1-{len(plan) - 1})")
    for name, vals in table.items():
        print(f"{name}\t{np.mean(vals):.3f}\t{1 - np.mean(vals) / clean:+.2f}")


if __name__ == "__main__":
    main()
