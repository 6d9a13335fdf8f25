"""Confusion matrices and every measure derived from them."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from owl import KNOWN, UNKNOWN
from owl.data import PredictionRecord

MODES = ("classification", "detection", "recognition")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Sparse count matrix with truth labels on rows and predictions on columns."""

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    cells: Mapping[tuple[str, str], int]

    def __post_init__(self):
        rows, cols = set(self.rows), set(self.cols)
        clean = {}
        for (r, c), n in self.cells.items():
            if n < 0:
                raise ValueError(f"negative count at ({r!r}, {c!r})")
            if r not in rows or c not in cols:
                raise ValueError(f"cell ({r!r}, {c!r}) outside the matrix labels")
            if n:
                clean[(r, c)] = int(n)
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "cols", tuple(self.cols))
        object.__setattr__(self, "cells", clean)

    @classmethod
    def from_dense(cls, rows, cols, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts)
        cells = {(r, c): int(counts[i, j]) for i, r in enumerate(rows)
                 for j, c in enumerate(cols) if counts[i, j]}
        return cls(tuple(rows), tuple(cols), cells)

    @property
    def total(self) -> int:
        return sum(self.cells.values())

    def dense(self) -> np.ndarray:
        ri = {r: i for i, r in enumerate(self.rows)}
        ci = {c: j for j, c in enumerate(self.cols)}
        out = np.zeros((len(self.rows), len(self.cols)), dtype=np.int64)
        for (r, c), n in self.cells.items():
            out[ri[r], ci[c]] = n
        return out

    def get(self, row: str, col: str) -> int:
        return self.cells.get((row, col), 0)

    def row_sums(self) -> dict[str, int]:
        out = dict.fromkeys(self.rows, 0)
        for (r, _), n in self.cells.items():
            out[r] += n
        return out

    def col_sums(self) -> dict[str, int]:
        out = dict.fromkeys(self.cols, 0)
        for (_, c), n in self.cells.items():
            out[c] += n
        return out

    def to_json(self) -> dict:
        ri = {r: i for i, r in enumerate(self.rows)}
        ci = {c: j for j, c in enumerate(self.cols)}
        cells = sorted([ri[r], ci[c], n] for (r, c), n in self.cells.items())
        return {"rows": list(self.rows), "cols": list(self.cols), "cells": cells}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ConfusionMatrix":
        rows, cols = tuple(obj["rows"]), tuple(obj["cols"])
        return cls(rows, cols, {(rows[r], cols[c]): n for r, c, n in obj["cells"]})


def _from_pairs(pairs: Iterable[tuple[str, str]]) -> ConfusionMatrix:
    counts = Counter(pairs)
    if not counts:
        raise ValueError("cannot build a confusion matrix from no samples")
    labels = tuple(sorted({t for t, _ in counts} | {p for _, p in counts}))
    return ConfusionMatrix(labels, labels, dict(counts))


def build_confusion(pairs: Sequence[tuple[str, PredictionRecord]]) -> ConfusionMatrix:
    return _from_pairs((truth, pred.label) for truth, pred in pairs)


def confusion_from_labels(truths: Sequence[str], preds: Sequence[str]) -> ConfusionMatrix:
    if len(truths) != len(preds):
        raise ValueError("truth and prediction sequences differ in length")
    return _from_pairs(zip(truths, preds))


def topk_confusion(pairs: Sequence[tuple[str, Sequence[str]]], k: int) -> ConfusionMatrix:
    """Top-k confusion: a hit lands on the diagonal, a miss on the rank-1 prediction."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for truth, ranking in pairs:
        if not ranking:
            raise ValueError("ranked prediction list is empty")
        out.append((truth, truth if truth in ranking[:k] else ranking[0]))
    return _from_pairs(out)


def _relabel(cm: ConfusionMatrix, row_map, col_map, rows=None, cols=None) -> ConfusionMatrix:
    cells: dict[tuple[str, str], int] = defaultdict(int)
    for (r, c), n in cm.cells.items():
        cells[(row_map(r), col_map(c))] += n
    if rows is None:
        rows = tuple(sorted({row_map(r) for r in cm.rows}))
    if cols is None:
        cols = tuple(sorted({col_map(c) for c in cm.cols}))
    return ConfusionMatrix(rows, cols, dict(cells))


def reduce_confusion(cm: ConfusionMatrix, mode: str, known: Iterable[str]) -> ConfusionMatrix:
    known = frozenset(known)
    if mode == "classification":
        fold = lambda lab: lab if lab in known else UNKNOWN
        return _relabel(cm, fold, fold)
    if mode == "detection":
        fold = lambda lab: KNOWN if lab in known else UNKNOWN
        both = (KNOWN, UNKNOWN)
        return _relabel(cm, fold, fold, rows=both, cols=both)
    if mode == "recognition":
        fold = lambda lab: KNOWN if lab in known else lab
        return _relabel(cm, fold, fold)
    raise ValueError(f"unknown reduction mode {mode!r}")


def _require_total(cm: ConfusionMatrix) -> int:
    total = cm.total
    if total <= 0:
        raise ValueError("measure undefined for an empty confusion matrix")
    return total


def accuracy(cm: ConfusionMatrix) -> float:
    total = _require_total(cm)
    return sum(n for (r, c), n in cm.cells.items() if r == c) / total


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (Gorodkin's R_K); 0.0 when undefined."""
    s = _require_total(cm)
    c = sum(n for (r, col), n in cm.cells.items() if r == col)
    t = cm.row_sums()
    p = cm.col_sums()
    labels = set(t) | set(p)
    tk = np.array([t.get(k, 0) for k in sorted(labels)], dtype=np.float64)
    pk = np.array([p.get(k, 0) for k in sorted(labels)], dtype=np.float64)
    s = float(s)
    cov_tp = c * s - float(pk @ tk)
    cov_pp = s * s - float(pk @ pk)
    cov_tt = s * s - float(tk @ tk)
    denom = cov_pp * cov_tt
    if denom <= 0:
        return 0.0
    return cov_tp / math.sqrt(denom)


def _entropy(p: np.ndarray) -> float:
    # fsum is order independent, so equal multisets of probabilities give equal entropies
    p = p[p > 0]
    return -math.fsum((p * np.log(p)).tolist())


def nmi_arith(cm: ConfusionMatrix) -> float:
    """Mutual information normalized by the arithmetic mean of the marginal entropies."""
    total = _require_total(cm)
    joint = cm.dense().astype(np.float64) / total
    pr = joint.sum(axis=1)
    pc = joint.sum(axis=0)
    hr, hc = _entropy(pr), _entropy(pc)
    if hr == 0.0 and hc == 0.0:
        return 1.0
    if hr == 0.0 or hc == 0.0:
        return 0.0
    # I = H(row) + H(col) - H(joint); exactly H on permutation matrices
    mi = hr + hc - _entropy(joint.ravel())
    return min(1.0, max(0.0, mi / ((hr + hc) / 2.0)))


MEASURES = {"accuracy": accuracy, "mcc": mcc, "nmi": nmi_arith}


def measure_all(cm: ConfusionMatrix, names: Iterable[str] = ("accuracy", "mcc", "nmi")) -> dict:
    out = {}
    for name in names:
        if name not in MEASURES:
            raise ValueError(f"unknown measure {name!r}")
        out[name] = MEASURES[name](cm)
    return out


def reaction_time(truth_novel: Sequence[bool], pred_novel: Sequence[bool]) -> float | None:
    """Harmonic-mean novelty reaction time of one increment; lower is better.

    None when the increment holds no novel samples, 1.0 when novelty is
    never detected at or after its first occurrence.
    """
    if len(truth_novel) != len(pred_novel):
        raise ValueError("truth and prediction novelty sequences differ in length")
    truth = np.asarray(truth_novel, dtype=bool)
    pred = np.asarray(pred_novel, dtype=bool)
    novel_idx = np.flatnonzero(truth)
    if novel_idx.size == 0:
        return None
    a = int(novel_idx[0])
    z = len(truth) - 1
    r = int(novel_idx.size)
    hits = np.flatnonzero(pred[a:])
    if hits.size == 0:
        return 1.0
    d = a + int(hits[0])
    if d == a:
        return 0.0
    m = int(truth[a:d + 1].sum())
    return 2.0 / ((z + 1 - a) / (d - a) + r / m)


def aggregate(cms: Sequence[ConfusionMatrix]) -> ConfusionMatrix:
    if not cms:
        raise ValueError("nothing to aggregate")
    rows = sorted(set().union(*(cm.rows for cm in cms)))
    cols = sorted(set().union(*(cm.cols for cm in cms)))
    cells: dict[tuple[str, str], int] = defaultdict(int)
    for cm in cms:
        for key, n in cm.cells.items():
            cells[key] += n
    return ConfusionMatrix(tuple(rows), tuple(cols), dict(cells))


NA = "N/A"
BINS = ("small", "medium", "large")


def tercile_bins(values: Sequence[str]) -> list[str]:
    """Replace numeric values by small/medium/large thirds (by sample count); others become N/A."""
    numeric = []
    for i, v in enumerate(values):
        try:
            x = float(v)
        except (TypeError, ValueError):
            continue
        if math.isfinite(x):
            numeric.append((x, i))
    out = [NA] * len(values)
    numeric.sort()
    for name, chunk in zip(BINS, np.array_split(np.arange(len(numeric)), 3)):
        for pos in chunk:
            out[numeric[pos][1]] = name
    return out


def group_metrics(pairs: Sequence[tuple[str, str, Mapping[str, str]]], group_key: str,
                  measures: Iterable[str] = ("accuracy", "mcc", "nmi"), *, binned: bool = False,
                  reduction: str | None = None, known: Iterable[str] = ()) -> dict[str, dict]:
    """Measures per metadata group.

    pairs are (truth, predicted label, metadata). Samples without the key
    fall under "N/A"; binned=True tercile-bins numeric values first.
    """
    measures = list(measures)
    for name in measures:
        if name not in MEASURES:
            raise ValueError(f"unknown measure {name!r}")
    values = [meta.get(group_key, NA) or NA for _, _, meta in pairs]
    if binned:
        values = tercile_bins(values)
    groups: dict[str, list[tuple[str, str]]] = defaultdict(list)
    for (truth, pred, _), g in zip(pairs, values):
        groups[g].append((truth, pred))
    known = frozenset(known)
    out = {}
    for g in sorted(groups):
        cm = _from_pairs(groups[g])
        if reduction:
            cm = reduce_confusion(cm, reduction, known)
        out[g] = {"count": len(groups[g]), **measure_all(cm, measures)}
    return out
