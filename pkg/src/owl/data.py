"""Core value types: samples, manifests, increment plans, features, predictions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from owl import KNOWN, UNKNOWN, UNKNOWN_PREFIX

SPLITS = ("train", "validation", "test")


def is_reserved_label(label: str) -> bool:
    return label in (UNKNOWN, KNOWN) or label.startswith(UNKNOWN_PREFIX)


def is_unknown_label(label: str) -> bool:
    """True for the catch-all and for recognized-unknown cluster labels."""
    return label == UNKNOWN or label.startswith(UNKNOWN_PREFIX)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    label: str
    split: str
    source: int = 0
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("sample id must be nonempty")
        if not self.label:
            raise ValueError(f"sample {self.id!r}: label must be nonempty")
        if self.split not in SPLITS:
            raise ValueError(f"sample {self.id!r}: unknown split {self.split!r}")
        if self.source < 0:
            raise ValueError(f"sample {self.id!r}: source must be non-negative")


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...]

    def __init__(self, records: Iterable[SampleRecord]):
        records = tuple(records)
        seen = set()
        for r in records:
            if r.id in seen:
                raise ValueError(f"duplicate sample id {r.id!r}")
            if is_reserved_label(r.label):
                raise ValueError(f"sample {r.id!r}: label {r.label!r} is reserved")
            seen.add(r.id)
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, SampleRecord]:
        return {r.id: r for r in self.records}

    @property
    def labels(self) -> set[str]:
        return {r.label for r in self.records}


@dataclass(frozen=True)
class IncrementPlan:
    index: int
    known_labels: frozenset[str]
    novel_labels: frozenset[str]
    train_ids: tuple[str, ...] = ()
    validation_ids: tuple[str, ...] = ()
    test_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "known_labels", frozenset(self.known_labels))
        object.__setattr__(self, "novel_labels", frozenset(self.novel_labels))
        for name in ("train_ids", "validation_ids", "test_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def ids(self, split: str) -> tuple[str, ...]:
        return getattr(self, f"{split}_ids")

    def all_ids(self) -> tuple[str, ...]:
        return self.train_ids + self.validation_ids + self.test_ids


@dataclass(frozen=True)
class ExperimentPlan:
    increments: tuple[IncrementPlan, ...]
    seed: int
    label_universe: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "increments", tuple(self.increments))
        object.__setattr__(self, "label_universe", frozenset(self.label_universe))

    def __len__(self):
        return len(self.increments)


class FeatureStore:
    """Sample id -> d-dimensional vector (float64 in memory, float32 on disk)."""

    def __init__(self, ids: Iterable[str], vectors):
        ids = list(ids)
        matrix = np.array(vectors, dtype=np.float64)
        if matrix.ndim != 2:
            matrix = matrix.reshape(len(ids), -1)
        if matrix.shape[0] != len(ids):
            raise ValueError(f"{len(ids)} ids but {matrix.shape[0]} vectors")
        if matrix.shape[1] < 1:
            raise ValueError("feature dimension must be positive")
        if not np.all(np.isfinite(matrix)):
            bad = ids[int(np.argwhere(~np.isfinite(matrix))[0, 0])]
            raise ValueError(f"non-finite feature value for sample {bad!r}")
        self.ids = ids
        self.index = {sid: i for i, sid in enumerate(ids)}
        if len(self.index) != len(ids):
            raise ValueError("duplicate ids in feature store")
        self.matrix = matrix
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, sid):
        return sid in self.index

    def get(self, ids) -> np.ndarray:
        try:
            rows = [self.index[sid] for sid in ids]
        except KeyError as e:
            raise KeyError(f"missing feature vector for sample {e.args[0]!r}") from None
        return self.matrix[rows]

    def __eq__(self, other):
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.matrix, other.matrix)


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    scores: Mapping[str, float]
    novelty_flag: bool

    def __post_init__(self):
        if not self.scores:
            raise ValueError(f"prediction for {self.sample_id!r} has no scores")

    @property
    def label(self) -> str:
        return argmax_label(self.scores)

    def ranked(self) -> list[str]:
        return sorted(self.scores, key=lambda k: (-self.scores[k], k))


def argmax_label(scores: Mapping[str, float]) -> str:
    # ties -> lexicographically smallest label
    best = max(scores.values())
    return min(k for k, v in scores.items() if v == best)


def validate_plan(plan: ExperimentPlan, manifest: Manifest) -> list[str]:
    """Every violated plan invariant, described with the offending label or id."""
    problems = []
    records = manifest.by_id()
    introduced: dict[str, int] = {}
    prev = None
    for pos, inc in enumerate(plan.increments):
        if inc.index != pos:
            problems.append(f"increment at position {pos} has index {inc.index}")
        for label in sorted(inc.known_labels & inc.novel_labels):
            problems.append(f"increment {pos}: label {label!r} is both known and novel")
        for label in sorted(inc.novel_labels):
            if label in introduced:
                problems.append(
                    f"disjointness: label {label!r} is novel in increments {introduced[label]} and {pos}"
                )
            else:
                introduced[label] = pos
        if prev is not None:
            expected = prev.known_labels | prev.novel_labels
            if inc.known_labels != expected:
                missing = sorted(expected - inc.known_labels)
                extra = sorted(inc.known_labels - expected)
                problems.append(
                    f"increment {pos}: known labels do not extend increment {pos - 1} "
                    f"(missing {missing}, unexpected {extra})"
                )
        prev = inc

    placed: dict[str, int] = {}
    for pos, inc in enumerate(plan.increments):
        present = inc.known_labels | inc.novel_labels
        for split in SPLITS:
            for sid in inc.ids(split):
                if sid in placed:
                    problems.append(f"id {sid!r} appears in increments {placed[sid]} and {pos}")
                placed[sid] = pos
                rec = records.get(sid)
                if rec is None:
                    problems.append(f"increment {pos}: id {sid!r} not in manifest")
                    continue
                if rec.split != split:
                    problems.append(f"increment {pos}: id {sid!r} listed as {split} but is {rec.split}")
                if rec.label not in present:
                    problems.append(
                        f"increment {pos}: id {sid!r} has label {rec.label!r} "
                        f"not yet introduced (introduced at {introduced.get(rec.label)})"
                    )
    for label in sorted(introduced):
        if label not in plan.label_universe:
            problems.append(f"label {label!r} missing from label universe")
    return problems
