"""The ten acceptance criteria, one test each, at their stated tolerances.

Each test records a PASS/FAIL line; the lines are printed together at the
end of the pytest session (see conftest.py). Run just this file with
    pytest tests/test_acceptance.py -v
"""
import functools
import math
import os
import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from owl.evaluator import ExperimentConfig, KnownLedger, replay_with_perturbation, run_experiment
from owl.finch import finch_cluster
from owl.io import dumps_record
from owl.metrics import ConfusionMatrix, mcc, nmi_arith, reaction_time
from owl.predictors import make_predictor, predictor_from_checkpoint
from owl.predictors.ann import ann_init, loss_and_grads
from owl.presets import blob_ann_config, blob_gmm_config
from owl.protocol import StageSpec, plan_increments
from owl.synth import BlobSpec, Perturbation, gen_blobs, schedule_manifest

from oracles import nmi_direct, onehot_pearson, random_counts

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


def cm_from(counts) -> ConfusionMatrix:
    labels = [f"l{i}" for i in range(counts.shape[0])]
    cells = {(labels[i], labels[j]): int(counts[i, j])
             for i in range(counts.shape[0]) for j in range(counts.shape[1]) if counts[i, j]}
    return ConfusionMatrix(tuple(labels), tuple(labels), cells)


# shared criterion-7 runs

@functools.lru_cache(maxsize=None)
def blob_plan():
    from owl.synth import blob_experiment
    return blob_experiment(start_classes=20, novel_classes=10, increments=3, dim=16, separation=6.0, seed=0)


def run_blobs(kind: str, budget: float, checkpoints=None):
    manifest, features, plan = blob_plan()
    cfg = blob_gmm_config() if kind == "gmm_finch" else blob_ann_config()
    return run_experiment(plan, manifest, features, make_predictor(cfg), ExperimentConfig(feedback_budget=budget),
                          checkpoint=checkpoints)


def by_step(log, split, reduction, measure, whole: bool):
    return {r.step: r.measures[reduction][measure] for r in log
            if r.split == split and float(r.step).is_integer() == whole and not r.cumulative}


# 1

def test_c01_table1_schedule():
    t0 = time.perf_counter()
    manifest = schedule_manifest(409, [227, 82])
    start = {r.label for r in manifest if r.source == 0}
    plan = plan_increments(manifest, start, [StageSpec(0, 1), StageSpec(1, 5), StageSpec(2, 5)], seed=0)
    novel = [len(i.novel_labels) for i in plan.increments]
    known = [len(i.known_labels) for i in plan.increments]
    dt = time.perf_counter() - t0
    ok = (novel == [0, 46, 46, 46, 46, 43, 17, 17, 17, 17, 14]
          and known == [409, 409, 455, 501, 547, 593, 636, 653, 670, 687, 704] and dt < 5)
    record(1, ok, f"novel={novel} known={known} ({dt:.2f}s)")


# 2

def test_c02_mcc_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(500):
        counts = random_counts(rng, 8, 10_000)
        worst = max(worst, abs(mcc(cm_from(counts)) - onehot_pearson(counts)))
    dt = time.perf_counter() - t0
    record(2, worst <= 1e-10 and dt < 10, f"max |mcc - pearson| = {worst:.2e} over 500 matrices ({dt:.2f}s)")


# 3

def test_c03_nmi_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        counts = random_counts(rng, 8, 10_000)
        worst = max(worst, abs(nmi_arith(cm_from(counts)) - nmi_direct(counts)))
    perm_ok = all(nmi_arith(cm_from(np.eye(k, dtype=int)[rng.permutation(k)] * rng.integers(1, 50, k)[:, None]))
                  == 1.0 for k in range(2, 9))
    prod_ok = all(abs(nmi_arith(cm_from(np.outer(rng.integers(1, 9, k), rng.integers(1, 9, k))))) <= 1e-12
                  for k in range(2, 9))
    record(3, worst <= 1e-12 and perm_ok and prod_ok,
           f"max deviation {worst:.2e}; permutation -> 1: {perm_ok}; product -> 0: {prod_ok}")


# 4

def test_c04_reaction_time():
    instant = reaction_time([0, 1, 1, 0], [0, 1, 0, 0])
    never = reaction_time([0, 1, 1, 0], [0, 0, 0, 0])
    # a=0, z=3, d=2, r=2, m=1
    hand = reaction_time([1, 0, 0, 1], [0, 0, 1, 0])
    rng = np.random.default_rng(4)
    monotone = True
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        truth = rng.random(n) < rng.random()
        if not truth.any():
            truth[rng.integers(n)] = True
        a = int(np.argmax(truth))
        d1, d2 = sorted(rng.integers(a, n, size=2))
        scores = [reaction_time(truth, np.arange(n) == d) for d in (d1, d2)]
        monotone &= scores[0] <= scores[1]
    ok = instant == 0.0 and never == 1.0 and hand == 0.5 and monotone
    record(4, ok, f"instant={instant} never={never} hand case={hand} monotone over 1000 sequences: {monotone}")


# 5

def test_c05_finch():
    manifest, features, _ = gen_blobs(BlobSpec(5, 8, 60, 10.0, seed=4))
    truth = [r.label for r in manifest]
    t0 = time.perf_counter()
    levels = finch_cluster(features.matrix)
    dt = time.perf_counter() - t0
    best = max(adjusted_rand_score(truth, lv) for lv in levels)
    record(5, best == 1.0 and dt < 2, f"best ARI {best} over {len(levels)} levels ({dt:.3f}s)")


# 6

def test_c06_gradient_check():
    rng = np.random.default_rng(6)
    state = ann_init(6, 8, ["a", "b", "c", "d"], seed=6)
    params = state.params()
    X = rng.normal(size=(5, 6))
    y = np.array([0, 1, 2, 3, 1])
    mask = (rng.random((5, 8)) >= 0.5) / 0.5
    _, grads = loss_and_grads(params, X, y, 0.01, mask)
    worst, h = 0.0, 1e-6
    for name, g in grads.items():
        for idx in np.ndindex(g.shape):
            up = {k: v.copy() for k, v in params.items()}
            dn = {k: v.copy() for k, v in params.items()}
            up[name][idx] += h
            dn[name][idx] -= h
            num = (loss_and_grads(up, X, y, 0.01, mask)[0] - loss_and_grads(dn, X, y, 0.01, mask)[0]) / (2 * h)
            worst = max(worst, abs(g[idx] - num) / max(1e-8, abs(g[idx]) + abs(num)))
    record(6, worst < 1e-4, f"max relative error {worst:.2e} on a 5-sample batch with dropout")


# 7

def test_c07_end_to_end(monkeypatch):
    monkeypatch.setenv("OWL_THREADS", "1")
    t0 = time.perf_counter()
    gmm = run_blobs("gmm_finch", 0.0)
    ann = run_blobs("ann", 1.0)
    dt = time.perf_counter() - t0
    det = by_step(gmm, "train", "detection", "mcc", whole=True)
    rec = by_step(gmm, "train", "recognition", "nmi", whole=True)
    # step 0.5 is the supervised initial fit; feedback starts with increment 1
    acc = {s: v for s, v in by_step(ann, "train", "classification", "accuracy", whole=False).items() if s > 1}
    ok = (min(det.values()) >= 0.8 and min(rec.values()) >= 0.5 and min(acc.values()) >= 0.95
          and len(det) == len(acc) == 3 and dt < 60)
    fmt = lambda d: ",".join(f"{k:g}:{v:.3f}" for k, v in sorted(d.items()))
    record(7, ok, f"GMM detection MCC {fmt(det)}; GMM recognition NMI {fmt(rec)}; "
                  f"ANN post-feedback accuracy {fmt(acc)} ({dt:.1f}s)")


# 8

def test_c08_budget_ordering():
    full = by_step(run_blobs("ann", 1.0), "train", "classification", "accuracy", whole=False)
    none = by_step(run_blobs("ann", 0.0), "train", "classification", "accuracy", whole=False)
    ok = full.keys() == none.keys() and all(full[s] >= none[s] for s in full)
    record(8, ok, "half steps " + ", ".join(f"{s:g}: {full[s]:.3f} >= {none[s]:.3f}" for s in sorted(full)))


# 9

def test_c09_determinism(monkeypatch):
    logs = {}
    for threads in ("1", "8", "8"):
        monkeypatch.setenv("OWL_THREADS", threads)
        for kind, budget in (("gmm_finch", 0.0), ("ann", 1.0)):
            text = "".join(dumps_record(r.to_json()) + "\n" for r in run_blobs(kind, budget))
            logs.setdefault(kind, set()).add(text.encode())
    ok = all(len(v) == 1 for v in logs.values())
    record(9, ok, "byte-identical logs for repeated runs at OWL_THREADS=1 and 8: "
                  + ", ".join(f"{k}={len(v) == 1}" for k, v in logs.items()))


# 10

def test_c10_perturbation_tolerance():
    manifest, features, plan = blob_plan()
    out = {}
    for kind, budget in (("gmm_finch", 0.0), ("ann", 1.0)):
        saved = {}

        def keep(pred, ledger, t):
            saved[t] = (pred.to_checkpoint(), KnownLedger(set(ledger.predictor_known), set(ledger.evaluator_seen)))

        log = run_blobs(kind, budget, keep)
        cfg = ExperimentConfig(feedback_budget=budget)
        exact, drops = True, {}
        for t in range(1, len(plan)):
            (header, blocks), ledger = saved[t - 1]
            res = replay_with_perturbation(predictor_from_checkpoint(header, dict(blocks)), ledger, plan.increments[t],
                                           manifest, features,
                                           [Perturbation(), Perturbation("gaussian_noise", 6.0, seed=10)], cfg)
            clean = {r.split: r for r in log if r.step == t and not r.cumulative}
            for r in res["identity"]:
                c = clean[r.split]
                exact &= (r.raw_cm == c.raw_cm and r.reduced_cms == c.reduced_cms
                          and dumps_record(r.measures) == dumps_record(c.measures))
            noisy = {r.split: r for r in res["gaussian_noise:6"]}
            base = clean["train"].measures["classification"]["mcc"]
            drops[t] = 1.0 - noisy["train"].measures["classification"]["mcc"] / base
        out[kind] = (exact, drops)
    gmm_exact, gmm_drops = out["gmm_finch"]
    ann_exact, ann_drops = out["ann"]
    ok = gmm_exact and ann_exact and min(gmm_drops.values()) >= 0.5
    record(10, ok, "identity bit-exact: "
                   f"gmm={gmm_exact} ann={ann_exact}; noise 6 relative MCC drop on train, GMM-FINCH "
                   + ",".join(f"{t}:{d:.2f}" for t, d in gmm_drops.items())
                   + " (ANN, not judged: " + ",".join(f"{t}:{d:.2f}" for t, d in ann_drops.items()) + ")")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
