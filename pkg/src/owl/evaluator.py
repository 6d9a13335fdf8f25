"""The increment loop: unlabeled arrival, pre-feedback evaluation, feedback, post-feedback evaluation."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from owl.data import ExperimentPlan, FeatureStore, IncrementPlan, Manifest, SPLITS, validate_plan
from owl.metrics import (MODES, ConfusionMatrix, aggregate, build_confusion, measure_all,
                         reaction_time, reduce_confusion)
from owl.predictors import Predictor

NOVELTY_MODES = ("novel_to_predictor", "novel_to_evaluator")


@dataclass(frozen=True)
class ExperimentConfig:
    feedback_budget: float = 1.0
    novelty_mode: str = "novel_to_predictor"
    evaluate_splits: tuple[str, ...] = ("train", "test")
    cumulative: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.feedback_budget <= 1.0:
            raise ValueError("feedback_budget: must lie in [0, 1]")
        if self.novelty_mode not in NOVELTY_MODES:
            raise ValueError(f"novelty_mode: unknown mode {self.novelty_mode!r}")
        splits = tuple(self.evaluate_splits)
        bad = [s for s in splits if s not in SPLITS]
        if bad or not splits:
            raise ValueError(f"evaluate_splits: must be a nonempty subset of {SPLITS}")
        object.__setattr__(self, "evaluate_splits", tuple(s for s in SPLITS if s in splits))


@dataclass
class KnownLedger:
    predictor_known: set[str] = field(default_factory=set)
    evaluator_seen: set[str] = field(default_factory=set)

    def known_for(self, mode: str) -> frozenset[str]:
        return frozenset(self.predictor_known if mode == "novel_to_predictor" else self.evaluator_seen)

    def to_json(self) -> dict:
        return {"predictor_known": sorted(self.predictor_known),
                "evaluator_seen": sorted(self.evaluator_seen)}

    @classmethod
    def from_json(cls, obj) -> "KnownLedger":
        return cls(set(obj["predictor_known"]), set(obj["evaluator_seen"]))


@dataclass
class StepRecord:
    step: float
    split: str
    raw_cm: ConfusionMatrix
    reduced_cms: dict[str, ConfusionMatrix]
    measures: dict[str, dict[str, float]]
    known_labels: frozenset[str]
    reaction_time: float | None = None
    feedback_granted_ids: list[str] | None = None
    cumulative: bool = False
    perturbation: str | None = None

    def to_json(self) -> dict:
        out = {
            "step": float(self.step),
            "split": self.split,
            "cumulative": self.cumulative,
            "known_labels": sorted(self.known_labels),
            "raw_cm": self.raw_cm.to_json(),
            "reduced_cms": {m: self.reduced_cms[m].to_json() for m in MODES},
            "measures": self.measures,
            "reaction_time": self.reaction_time,
            "feedback_granted_ids": self.feedback_granted_ids,
        }
        if self.perturbation is not None:
            out["perturbation"] = self.perturbation
        return out

    @classmethod
    def from_json(cls, obj) -> "StepRecord":
        return cls(
            step=obj["step"], split=obj["split"],
            raw_cm=ConfusionMatrix.from_json(obj["raw_cm"]),
            reduced_cms={m: ConfusionMatrix.from_json(c) for m, c in obj["reduced_cms"].items()},
            measures=obj["measures"], known_labels=frozenset(obj["known_labels"]),
            reaction_time=obj["reaction_time"], feedback_granted_ids=obj["feedback_granted_ids"],
            cumulative=obj["cumulative"], perturbation=obj.get("perturbation"),
        )


def score_matrices(raw: ConfusionMatrix, known) -> tuple[dict, dict]:
    reduced = {m: reduce_confusion(raw, m, known) for m in MODES}
    measures = {"raw": measure_all(raw)}
    measures.update({m: measure_all(cm) for m, cm in reduced.items()})
    return reduced, measures


def worker_count() -> int:
    """OWL_THREADS caps worker threads; 0 or unset means one per CPU."""
    raw = os.environ.get("OWL_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"OWL_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else (os.cpu_count() or 1)


class Evaluator:
    """Holds the ground truth and runs the protocol against one predictor."""

    def __init__(self, manifest: Manifest, features: FeatureStore, config: ExperimentConfig,
                 sink: Callable[[StepRecord], None] | None = None, prediction_sink=None):
        self.prediction_sink = prediction_sink
        self.truth = {r.id: r.label for r in manifest}
        self.features = features
        self.config = config
        self.sink = sink
        self.records: list[StepRecord] = []
        self._running: dict[tuple[str, bool], list[dict[str, ConfusionMatrix]]] = {}
        self.ledger_seen_before: frozenset[str] = frozenset()

    def _features(self, ids) -> np.ndarray:
        if not len(ids):
            return np.zeros((0, self.features.dim))
        return self.features.get(ids)

    def _emit(self, rec: StepRecord):
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)
        if self.config.cumulative and not rec.cumulative and rec.perturbation is None:
            key = (rec.split, float(rec.step).is_integer())
            hist = self._running.setdefault(key, [])
            hist.append({"raw": rec.raw_cm, **rec.reduced_cms})
            summed = {name: aggregate([h[name] for h in hist]) for name in hist[0]}
            measures = {name: measure_all(cm) for name, cm in summed.items()}
            cum = StepRecord(rec.step, rec.split, summed["raw"], {m: summed[m] for m in MODES},
                             measures, rec.known_labels, cumulative=True)
            self.records.append(cum)
            if self.sink is not None:
                self.sink(cum)

    def _predict_splits(self, predictor: Predictor, inc: IncrementPlan, features=None):
        feats = self.features if features is None else features
        splits = [s for s in self.config.evaluate_splits if inc.ids(s)]

        def run(split):
            ids = list(inc.ids(split))
            X = feats.get(ids)
            return split, ids, predictor.predict(ids, X)

        workers = min(worker_count(), max(1, len(splits)))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, splits))
        else:
            results = [run(s) for s in splits]
        return results

    def _evaluate(self, predictor, inc, step, known, *, pre: bool, granted=None, features=None,
                  perturbation=None) -> list[StepRecord]:
        out = []
        seen_before = self.ledger_seen_before
        for split, ids, preds in self._predict_splits(predictor, inc, features):
            if self.prediction_sink is not None:
                self.prediction_sink(step, split, ids, preds)
            raw = build_confusion([(self.truth[sid], p) for sid, p in zip(ids, preds)])
            reduced, measures = score_matrices(raw, known)
            rt = None
            if pre and split == "train":
                truth_novel = [self.truth[sid] not in seen_before for sid in ids]
                rt = reaction_time(truth_novel, [p.novelty_flag for p in preds])
            out.append(StepRecord(step, split, raw, reduced, measures, known, reaction_time=rt,
                                  feedback_granted_ids=None if pre else list(granted or []),
                                  perturbation=perturbation))
        return out

    def initial_fit(self, predictor: Predictor, inc: IncrementPlan, ledger: KnownLedger) -> list[StepRecord]:
        """Increment 0: plain supervised fit, reported at step 0.5."""
        tr = list(inc.train_ids)
        va = list(inc.validation_ids)
        predictor.fit_initial(tr, self._features(tr), [self.truth[s] for s in tr],
                              va, self._features(va), [self.truth[s] for s in va])
        granted_labels = {self.truth[s] for s in tr}
        ledger.predictor_known |= set(inc.known_labels) | granted_labels
        ledger.evaluator_seen |= {self.truth[s] for s in inc.all_ids()}
        self.ledger_seen_before = frozenset(ledger.evaluator_seen)
        recs = self._evaluate(predictor, inc, inc.index + 0.5, ledger.known_for(self.config.novelty_mode),
                              pre=False, granted=tr)
        for r in recs:
            self._emit(r)
        return recs

    def run_increment(self, predictor: Predictor, inc: IncrementPlan, ledger: KnownLedger,
                      checkpoint: Callable[[Predictor, KnownLedger, int], None] | None = None) -> list[StepRecord]:
        cfg = self.config
        missing = [s for s in inc.all_ids() if s not in self.features]
        if missing:
            raise KeyError(f"missing feature vector for sample {missing[0]!r}")
        t = inc.index

        # (1) unlabeled arrival
        unlabeled = list(inc.train_ids)
        if predictor.config.observes_eval_splits:
            unlabeled += list(inc.validation_ids) + list(inc.test_ids)
        predictor.observe(unlabeled, self._features(unlabeled))

        # (2) pre-feedback evaluation
        self.ledger_seen_before = frozenset(ledger.evaluator_seen)
        recs = self._evaluate(predictor, inc, float(t), ledger.known_for(cfg.novelty_mode), pre=True)
        for r in recs:
            self._emit(r)
        ledger.evaluator_seen |= {self.truth[s] for s in inc.all_ids()}

        # (3) feedback request and grant
        train = list(inc.train_ids)
        order = predictor.request_feedback_order(train, self._features(train))
        if sorted(order) != sorted(train):
            raise ValueError(f"increment {t}: predictor feedback order is not a permutation of the train ids")
        n_grant = math.floor(cfg.feedback_budget * len(train) + 1e-9)
        granted = list(order[:n_grant])
        labels = [self.truth[s] for s in granted]
        ledger.predictor_known |= set(labels)

        # (4) learn from feedback, evaluate again
        predictor.feedback(granted, self._features(granted), labels)
        post = self._evaluate(predictor, inc, t + 0.5, ledger.known_for(cfg.novelty_mode),
                              pre=False, granted=granted)
        for r in post:
            self._emit(r)
        if checkpoint is not None:
            checkpoint(predictor, ledger, t)
        return recs + post

    def replay(self, predictor: Predictor, inc: IncrementPlan, ledger: KnownLedger,
               features: FeatureStore, perturbation: str) -> list[StepRecord]:
        """Pre-feedback phase of one increment on substitute features; nothing is emitted."""
        if features.dim != self.features.dim:
            raise ValueError(f"feature dimension {features.dim} does not match {self.features.dim}")
        unlabeled = list(inc.train_ids)
        if predictor.config.observes_eval_splits:
            unlabeled += list(inc.validation_ids) + list(inc.test_ids)
        predictor.observe(unlabeled, features.get(unlabeled) if unlabeled else np.zeros((0, features.dim)))
        self.ledger_seen_before = frozenset(ledger.evaluator_seen)
        return self._evaluate(predictor, inc, float(inc.index), ledger.known_for(self.config.novelty_mode),
                              pre=True, features=features, perturbation=perturbation)


def run_experiment(plan: ExperimentPlan, manifest: Manifest, features: FeatureStore, predictor: Predictor,
                   config: ExperimentConfig, sink=None, checkpoint=None, prediction_sink=None) -> list[StepRecord]:
    """Fit on increment 0, then run every later increment; records stream to `sink` as produced.

    `prediction_sink(step, split, ids, predictions)` sees every per-sample prediction.
    """
    problems = validate_plan(plan, manifest)
    if problems:
        raise ValueError("invalid plan: " + "; ".join(problems[:5]))
    ev = Evaluator(manifest, features, config, sink, prediction_sink)
    ledger = KnownLedger()
    first = plan.increments[0]
    missing = [s for s in first.all_ids() if s not in features]
    if missing:
        raise KeyError(f"missing feature vector for sample {missing[0]!r}")
    ev.initial_fit(predictor, first, ledger)
    if checkpoint is not None:
        checkpoint(predictor, ledger, 0)
    for inc in plan.increments[1:]:
        ev.run_increment(predictor, inc, ledger, checkpoint)
    return ev.records


def replay_with_perturbation(predictor: Predictor, ledger: KnownLedger, inc: IncrementPlan,
                             manifest: Manifest, features: FeatureStore, perturbations: Sequence,
                             config: ExperimentConfig) -> dict[str, list[StepRecord]]:
    """Replay one increment from a restored post-feedback state, once per perturbation.

    `predictor` must be the state saved after increment inc.index - 1; each
    perturbation replays from a fresh copy of it.
    """
    from owl.synth import perturb
    header, blocks = predictor.to_checkpoint()
    out = {}
    for p in perturbations:
        fresh = type(predictor).from_checkpoint(header, {k: np.array(v) for k, v in dict(blocks).items()})
        ev = Evaluator(manifest, features, config)
        name = p.name()
        out[name] = ev.replay(fresh, inc, KnownLedger(set(ledger.predictor_known), set(ledger.evaluator_seen)),
                              perturb(features, p), name)
    return out
