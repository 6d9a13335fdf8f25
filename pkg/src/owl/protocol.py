"""Turning labeled dataset releases into an incremental open-world experiment plan."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from owl.data import ExperimentPlan, IncrementPlan, Manifest, SampleRecord
from owl.rng import shuffled


@dataclass(frozen=True)
class StageSpec:
    source: int
    increments: int

    def __post_init__(self):
        if self.increments < 1:
            raise ValueError(f"stage {self.source}: increments must be >= 1")


def parse_stages(text: str) -> list[StageSpec]:
    """'0:1,1:5,2:5' -> [StageSpec(0, 1), StageSpec(1, 5), StageSpec(2, 5)]"""
    stages = []
    for chunk in text.split(","):
        source, _, n = chunk.strip().partition(":")
        stages.append(StageSpec(int(source), int(n) if n else 1))
    return stages


def unify_labels(manifests: Sequence[Manifest]) -> Manifest:
    """Merge dataset releases (ordered oldest first) into one manifest.

    Latest label wins, earliest split wins, source becomes the earliest
    release index and metadata is merged with later releases overriding.
    """
    merged: dict[str, dict] = {}
    for release, manifest in enumerate(manifests):
        for rec in manifest:
            cur = merged.get(rec.id)
            if cur is None:
                merged[rec.id] = dict(label=rec.label, split=rec.split, source=release,
                                      metadata=dict(rec.metadata))
            else:
                cur["label"] = rec.label
                cur["metadata"].update(rec.metadata)
    return Manifest(SampleRecord(id=sid, **fields) for sid, fields in merged.items())


def stratified_partition(ids_by_label: Mapping[str, Sequence[str]], k: int, seed: int,
                         salt: tuple = ()) -> list[list[str]]:
    """Deal each label's shuffled ids round-robin into k parts.

    Every label gets its own shuffle stream derived from (seed, salt, label),
    so the result does not depend on the order labels are visited in.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    parts: list[list[str]] = [[] for _ in range(k)]
    for label in sorted(ids_by_label):
        for i, sid in enumerate(shuffled(sorted(ids_by_label[label]), seed, *salt, label)):
            parts[i % k].append(sid)
    return parts


def novel_class_counts(n_unknown: int, n_increments: int, rule: str = "ceil") -> list[int]:
    """How many unknown classes each increment of a stage introduces.

    rule="ceil" gives ceil(|U|/N) to the first N-1 increments (227 over 5 -> 46,46,46,46,43);
    rule="floor" gives floor(|U|/N) to the first N-1 increments instead.
    """
    if rule == "ceil":
        per = math.ceil(n_unknown / n_increments)
    elif rule == "floor":
        per = n_unknown // n_increments
    else:
        raise ValueError(f"unknown class-count rule {rule!r}")
    counts = []
    left = n_unknown
    for _ in range(n_increments - 1):
        c = min(per, left)
        counts.append(c)
        left -= c
    counts.append(left)
    return counts


def plan_increments(manifest: Manifest, start_known: Iterable[str], stages: Sequence[StageSpec],
                    seed: int, rule: str = "ceil") -> ExperimentPlan:
    start_known = frozenset(start_known)
    if not stages:
        raise ValueError("at least one stage is required")
    by_source: dict[int, list[SampleRecord]] = defaultdict(list)
    for rec in manifest:
        by_source[rec.source].append(rec)
    stage_sources = [s.source for s in stages]
    if len(set(stage_sources)) != len(stage_sources):
        raise ValueError("each source may appear in only one stage")
    stray = sorted(set(by_source) - set(stage_sources))
    if stray:
        raise ValueError(f"records with sources {stray} are not covered by any stage")
    for spec in stages:
        if not by_source.get(spec.source):
            raise ValueError(f"stage for source {spec.source} has no records")
    stage0_labels = {r.label for r in by_source[stages[0].source]}
    absent = sorted(start_known - stage0_labels)
    if absent:
        raise ValueError(f"start_known labels absent from stage 0: {absent}")

    total = sum(s.increments for s in stages)
    train: list[list[str]] = [[] for _ in range(total)]
    evals: dict[str, list[list[str]]] = {sp: [[] for _ in range(total)] for sp in ("validation", "test")}
    novel: list[set[str]] = [set() for _ in range(total)]
    introduced_at = {label: 0 for label in start_known}
    known = set(start_known)

    offset = 0
    for stage_idx, spec in enumerate(stages):
        recs = by_source[spec.source]
        n = spec.increments
        train_by_label: dict[str, list[str]] = defaultdict(list)
        for r in recs:
            if r.split == "train":
                train_by_label[r.label].append(r.id)

        unknown = {r.label for r in recs} - known
        order = sorted(unknown, key=lambda lab: (-len(train_by_label.get(lab, ())), lab))
        pos = 0
        for j, count in enumerate(novel_class_counts(len(order), n, rule)):
            for label in order[pos:pos + count]:
                novel[offset + j].add(label)
                introduced_at[label] = offset + j
            pos += count

        known_train = {lab: ids for lab, ids in train_by_label.items() if lab in known}
        for j, part in enumerate(stratified_partition(known_train, n, seed, ("known", stage_idx))):
            train[offset + j].extend(part)

        for label in order:
            t = introduced_at[label]
            ids = train_by_label.get(label, [])
            remaining = total - t
            if len(ids) < remaining:
                # too few samples to persist through every later increment
                train[t].extend(shuffled(ids, seed, "novel", stage_idx, label))
                continue
            for j, part in enumerate(stratified_partition({label: ids}, remaining, seed,
                                                          ("novel", stage_idx))):
                train[t + j].extend(part)

        for r in recs:
            if r.split != "train":
                evals[r.split][max(offset, introduced_at[r.label])].append(r.id)

        known |= unknown
        offset += n

    increments = []
    known_t = set(start_known)
    for t in range(total):
        increments.append(IncrementPlan(
            index=t,
            known_labels=frozenset(known_t),
            novel_labels=frozenset(novel[t]),
            train_ids=shuffled(sorted(train[t]), seed, "order", "train", t),
            validation_ids=shuffled(sorted(evals["validation"][t]), seed, "order", "validation", t),
            test_ids=shuffled(sorted(evals["test"][t]), seed, "order", "test", t),
        ))
        known_t |= novel[t]
    return ExperimentPlan(increments=tuple(increments), seed=seed, label_universe=frozenset(known))
