from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from owl.data import PredictionRecord, is_unknown_label
from owl.rng import shuffled


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "ann"
    accepted_error: float = 0.10
    feedback_order: str = "least_confident"
    epochs_per_increment: int = 1
    hidden_width: int | str = "feature_dim"
    dropout: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 256
    leaky_slope: float = 0.01
    covariance: str = "full"
    finch_partition: str = "finest"
    pool_partition: str | None = None
    finch_metric: str = "euclidean"
    use_eval_splits_as_unlabeled: bool | None = None
    recalibrate: bool = True
    # ANN only: z-score inputs with initial-fit statistics; resample memory to equal class counts
    standardize: bool = False
    class_balanced: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ann", "gmm_finch"):
            raise ValueError(f"kind: unknown predictor kind {self.kind!r}")
        if not 0.0 < self.accepted_error < 1.0:
            raise ValueError("accepted_error: must lie in (0, 1)")
        if self.feedback_order not in ("least_confident", "random"):
            raise ValueError(f"feedback_order: unknown ordering {self.feedback_order!r}")
        if self.epochs_per_increment < 1:
            raise ValueError("epochs_per_increment: must be >= 1")
        if not (self.hidden_width == "feature_dim" or
                (isinstance(self.hidden_width, int) and self.hidden_width > 0)):
            raise ValueError("hidden_width: must be 'feature_dim' or a positive integer")
        if not (isinstance(self.batch_size, int) and self.batch_size > 0):
            raise ValueError("batch_size: must be a positive integer")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate: must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum: must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout: must lie in [0, 1)")
        if self.covariance not in ("full", "diagonal"):
            raise ValueError(f"covariance: unknown covariance type {self.covariance!r}")
        for name in ("finch_partition", "pool_partition"):
            value = getattr(self, name)
            if value is not None and value not in ("finest", "coarsest_nontrivial", "coarsest"):
                raise ValueError(f"{name}: unknown partition choice {value!r}")
        if self.finch_metric not in ("euclidean", "cosine"):
            raise ValueError(f"finch_metric: unknown metric {self.finch_metric!r}")

    @property
    def observes_eval_splits(self) -> bool:
        if self.use_eval_splits_as_unlabeled is None:
            return self.kind == "gmm_finch"
        return self.use_eval_splits_as_unlabeled

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NoveltyThreshold:
    value: float
    calibration_size: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("novelty threshold must be finite")


def calibrate_threshold(max_scores: Sequence[float], accepted_error: float) -> NoveltyThreshold:
    """Nearest-rank lower quantile of known-sample confidences.

    A sample is novel iff its max class score is strictly below the value,
    so about `accepted_error` of the calibration knowns end up flagged.
    """
    scores = np.sort(np.asarray(max_scores, dtype=np.float64))
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold from no scores")
    if not 0.0 < accepted_error < 1.0:
        raise ValueError("accepted_error must lie in (0, 1)")
    # round() keeps 0.1 * 100 from landing on rank 11
    rank = max(1, math.ceil(round(accepted_error * scores.size, 9)))
    return NoveltyThreshold(float(scores[rank - 1]), int(scores.size))


def records_from_scores(ids: Sequence[str], labels: Sequence[str], scores: np.ndarray) -> list[PredictionRecord]:
    """Build prediction records; labels must be sorted so column order breaks ties."""
    out = []
    for sid, row in zip(ids, scores):
        best = labels[int(np.argmax(row))]
        out.append(PredictionRecord(sid, dict(zip(labels, map(float, row))), is_unknown_label(best)))
    return out


class Predictor:
    """What the evaluator drives: initial fit, unlabeled observation, feedback, prediction.

    Nothing here ever sees a label outside `fit_initial` and `feedback`.
    """

    kind = ""

    def __init__(self, config: PredictorConfig):
        self.config = config
        self.threshold: NoveltyThreshold | None = None
        self.feedback_round = 0

    @property
    def known_labels(self) -> frozenset[str]:
        raise NotImplementedError

    def fit_initial(self, ids, X, labels, val_ids, val_X, val_labels):
        raise NotImplementedError

    def observe(self, ids, X):
        """Unlabeled data arrives; supervised-only predictors ignore it."""

    def feedback(self, ids, X, labels):
        raise NotImplementedError

    def predict(self, ids, X) -> list[PredictionRecord]:
        raise NotImplementedError

    def confidence(self, X) -> np.ndarray:
        """Per-sample max score over known classes."""
        raise NotImplementedError

    def request_feedback_order(self, ids, X) -> list[str]:
        ids = list(ids)
        self.feedback_round += 1
        if self.config.feedback_order == "random":
            return shuffled(ids, self.config.seed, "feedback", self.feedback_round)
        if not ids:
            return []
        conf = self.confidence(X)
        return [sid for _, sid in sorted(zip(conf.tolist(), ids))]

    def to_checkpoint(self) -> tuple[dict, list[tuple[str, np.ndarray]]]:
        raise NotImplementedError

    @classmethod
    def from_checkpoint(cls, header: dict, blocks: dict[str, np.ndarray]) -> "Predictor":
        raise NotImplementedError

