"""Semi-supervised Gaussian-mixture recognizer with FINCH-derived components.

Each known class is a mixture with one Gaussian per FINCH cluster of its
labeled samples. Unlabeled samples whose best known-class log-density
falls under the calibrated threshold join a cumulative unknown pool; the
pool is FINCH-clustered and every cluster becomes a recognized class
"unknown_k" with its own Gaussian.
"""
from __future__ import annotations

import numpy as np

from owl import UNKNOWN, UNKNOWN_PREFIX
from owl.data import PredictionRecord
from owl.finch import finch_cluster, select_partition
from owl.gaussian import ClassModel, GaussianComponent, fit_class_model
from owl.predictors.base import (NoveltyThreshold, Predictor, PredictorConfig, calibrate_threshold,
                                 records_from_scores)


class GmmFinchPredictor(Predictor):
    kind = "gmm_finch"

    def __init__(self, config: PredictorConfig):
        super().__init__(config)
        self.dim = 0
        self.labeled_ids: list[str] = []
        self.labeled_labels: list[str] = []
        self.labeled_X = np.zeros((0, 0))
        self.val_labels: list[str] = []
        self.val_X = np.zeros((0, 0))
        self.pool: dict[str, np.ndarray] = {}
        self.class_models: dict[str, ClassModel] = {}
        self.unknown_models: dict[str, ClassModel] = {}

    @property
    def known_labels(self) -> frozenset[str]:
        return frozenset(self.class_models)

    def _check_dim(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or (len(X) and X.shape[1] != self.dim):
            raise ValueError(f"expected features of dimension {self.dim}, got shape {X.shape}")
        return X

    def _partition(self, points: np.ndarray, which: str) -> np.ndarray:
        return select_partition(finch_cluster(points, self.config.finch_metric), which)

    def _refit_classes(self, labels):
        diagonal = self.config.covariance == "diagonal"
        lab = np.array(self.labeled_labels)
        for label in sorted(labels):
            pts = self.labeled_X[lab == label]
            part = self._partition(pts, self.config.finch_partition)
            self.class_models[label] = fit_class_model(label, pts, part, diagonal)

    def _recalibrate(self):
        keep = [i for i, lab in enumerate(self.val_labels) if lab in self.class_models]
        if keep:
            scores = self.confidence(self.val_X[keep])
        else:
            scores = self.confidence(self.labeled_X)
        self.threshold = calibrate_threshold(scores, self.config.accepted_error)

    def _recluster_pool(self):
        self.unknown_models = {}
        if not self.pool:
            return
        ids = sorted(self.pool)
        pts = np.stack([self.pool[sid] for sid in ids])
        which = self.config.pool_partition or self.config.finch_partition
        part = self._partition(pts, which)
        diagonal = self.config.covariance == "diagonal"
        for k in range(int(part.max()) + 1):
            name = f"{UNKNOWN_PREFIX}{k + 1}"
            members = pts[part == k]
            self.unknown_models[name] = fit_class_model(name, members, np.zeros(len(members), dtype=int), diagonal)

    def _known_scores(self, X) -> tuple[list[str], np.ndarray]:
        labels = sorted(self.class_models)
        if not len(X):
            return labels, np.zeros((0, len(labels)))
        return labels, np.stack([self.class_models[lab].log_prob(X) for lab in labels], axis=1)

    def confidence(self, X) -> np.ndarray:
        return self._known_scores(self._check_dim(X))[1].max(axis=1)

    def fit_initial(self, ids, X, labels, val_ids, val_X, val_labels):
        X = np.asarray(X, dtype=np.float64)
        self.dim = X.shape[1]
        self.labeled_ids = list(ids)
        self.labeled_labels = list(labels)
        self.labeled_X = X.copy()
        self.val_labels = list(val_labels)
        self.val_X = self._check_dim(val_X).reshape(len(self.val_labels), self.dim)
        self._refit_classes(set(labels))
        self._recalibrate()

    def observe(self, ids, X):
        """Score unlabeled samples and pool the ones below the novelty threshold."""
        X = self._check_dim(X)
        if not len(ids):
            return
        labeled = set(self.labeled_ids)
        novel = self.confidence(X) < self.threshold.value
        added = False
        for sid, x, flag in zip(ids, X, novel):
            if flag and sid not in labeled and sid not in self.pool:
                self.pool[sid] = x.copy()
                added = True
        if added:
            self._recluster_pool()

    def feedback(self, ids, X, labels):
        X = self._check_dim(X)
        seen = set(self.labeled_ids)
        fresh = [i for i, sid in enumerate(ids) if sid not in seen]
        if not fresh:
            return
        self.labeled_ids += [ids[i] for i in fresh]
        self.labeled_labels += [labels[i] for i in fresh]
        self.labeled_X = np.concatenate([self.labeled_X, X[fresh]])
        self._refit_classes({labels[i] for i in fresh})
        if self.config.recalibrate:
            self._recalibrate()
        removed = [ids[i] for i in fresh if ids[i] in self.pool]
        for sid in removed:
            del self.pool[sid]
        if removed:
            self._recluster_pool()

    def update(self, ids, X, labels=None):
        """Labeled samples refit their classes; unlabeled ones are scored into the pool."""
        if labels is None:
            self.observe(ids, X)
            return
        X = self._check_dim(X)
        lab_idx = [i for i, lab in enumerate(labels) if lab is not None]
        unl_idx = [i for i, lab in enumerate(labels) if lab is None]
        if lab_idx:
            self.feedback([ids[i] for i in lab_idx], X[lab_idx], [labels[i] for i in lab_idx])
        if unl_idx:
            self.observe([ids[i] for i in unl_idx], X[unl_idx])

    def predict(self, ids, X) -> list[PredictionRecord]:
        X = self._check_dim(X)
        labels, known = self._known_scores(X)
        columns = [known]
        names = list(labels)
        for name in sorted(self.unknown_models):
            columns.append(self.unknown_models[name].log_prob(X)[:, None])
            names.append(name)
        # the catch-all competes at the threshold: it wins exactly when no
        # known class reaches the threshold and no recognized cluster does better
        columns.append(np.full((len(X), 1), self.threshold.value))
        names.append(UNKNOWN)
        scores = np.concatenate(columns, axis=1)
        order = np.argsort(names, kind="stable")
        return records_from_scores(list(ids), [names[i] for i in order], scores[:, order])

    def to_checkpoint(self):
        blocks = [("labeled_X", self.labeled_X), ("val_X", self.val_X)]
        pool_ids = sorted(self.pool)
        blocks.append(("pool_X", np.stack([self.pool[s] for s in pool_ids]) if pool_ids
                       else np.zeros((0, self.dim))))
        models = []
        for group, table in (("class", self.class_models), ("unknown", self.unknown_models)):
            for label in sorted(table):
                comps = table[label].components
                models.append({"group": group, "label": label, "weights": [c.weight for c in comps]})
                for j, c in enumerate(comps):
                    blocks.append((f"{group}:{label}:{j}:mean", c.mean))
                    blocks.append((f"{group}:{label}:{j}:cov", c.covariance))
        header = {
            "kind": self.kind,
            "dims": {"input": self.dim},
            "labels": sorted(self.class_models),
            "config": self.config.to_dict(),
            "threshold": [self.threshold.value, self.threshold.calibration_size],
            "feedback_round": self.feedback_round,
            "labeled_ids": list(self.labeled_ids),
            "labeled_labels": list(self.labeled_labels),
            "val_labels": list(self.val_labels),
            "pool_ids": pool_ids,
            "models": models,
        }
        # snapshot: later training must not reach back into a saved checkpoint
        return header, [(name, np.array(b, dtype=np.float64)) for name, b in blocks]

    @classmethod
    def from_checkpoint(cls, header, blocks):
        p = cls(PredictorConfig(**header["config"]))
        p.dim = header["dims"]["input"]
        p.threshold = NoveltyThreshold(header["threshold"][0], header["threshold"][1])
        p.feedback_round = header["feedback_round"]
        p.labeled_ids = list(header["labeled_ids"])
        p.labeled_labels = list(header["labeled_labels"])
        p.labeled_X = blocks["labeled_X"]
        p.val_labels = list(header["val_labels"])
        p.val_X = blocks["val_X"]
        p.pool = {sid: row for sid, row in zip(header["pool_ids"], blocks["pool_X"])}
        for m in header["models"]:
            group, label = m["group"], m["label"]
            comps = [GaussianComponent(blocks[f"{group}:{label}:{j}:mean"],
                                       blocks[f"{group}:{label}:{j}:cov"], w)
                     for j, w in enumerate(m["weights"])]
            table = p.class_models if group == "class" else p.unknown_models
            table[label] = ClassModel(label, comps)
        return p
