"""Synthetic stand-ins for extracted features: Gaussian blobs and feature-space perturbations.

The perturbations are feature-space analogs of nuisance transforms, not
reproductions of any pixel-space transform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm, logm

from owl.data import FeatureStore, Manifest, SampleRecord
from owl.rng import derive_seed


@dataclass(frozen=True)
class BlobSpec:
    classes: int
    dim: int
    per_class: int | tuple[int, ...]
    separation: float
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1 or self.dim < 1:
            raise ValueError("classes and dim must be positive")
        counts = self.counts()
        if len(counts) != self.classes or min(counts) < 1:
            raise ValueError("per_class must be positive (one count per class when given as a sequence)")
        if not (self.separation > 0 and math.isfinite(self.separation)):
            raise ValueError("separation must be a positive finite number")
        if len(self.split_fractions) != 3 or min(self.split_fractions) < 0:
            raise ValueError("split_fractions needs three non-negative entries")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")

    def counts(self) -> tuple[int, ...]:
        if isinstance(self.per_class, int):
            return (self.per_class,) * self.classes
        return tuple(self.per_class)


def class_label(k: int) -> str:
    return f"class_{k:03d}"


def _split_sizes(n: int, fractions) -> tuple[int, int, int]:
    n_val = math.floor(fractions[1] * n + 1e-9)
    n_test = math.floor(fractions[2] * n + 1e-9)
    return n - n_val - n_test, n_val, n_test


def blob_centers(classes: int, dim: int, separation: float, seed: int, max_tries: int = 10_000) -> np.ndarray:
    """Seeded centers in a box, rejection-sampled so every pair is >= separation apart."""
    rng = np.random.default_rng(derive_seed(seed, "centers"))
    side = 2.0 * separation * math.ceil(classes ** (1.0 / dim))
    centers = []
    for k in range(classes):
        for _ in range(max_tries):
            c = rng.uniform(0.0, side, size=dim)
            if all(np.linalg.norm(c - o) >= separation for o in centers):
                centers.append(c)
                break
        else:
            raise ValueError(f"could not place {classes} centers {separation} apart in {dim} dimensions")
    return np.array(centers)


def gen_blobs(spec: BlobSpec) -> tuple[Manifest, FeatureStore, np.ndarray]:
    """Unit-variance Gaussian blobs; returns the manifest, features and class centers."""
    centers = blob_centers(spec.classes, spec.dim, spec.separation, spec.seed)
    records, ids, vecs = [], [], []
    for k, n in enumerate(spec.counts()):
        label = class_label(k)
        rng = np.random.default_rng(derive_seed(spec.seed, "samples", label))
        x = centers[k] + rng.standard_normal((n, spec.dim))
        n_train, n_val, _ = _split_sizes(n, spec.split_fractions)
        splits = ["train"] * n_train + ["validation"] * n_val + ["test"] * (n - n_train - n_val)
        splits = [splits[i] for i in rng.permutation(n)]
        for i in range(n):
            sid = f"{label}-{i:05d}"
            records.append(SampleRecord(sid, label, splits[i], 0))
            ids.append(sid)
            vecs.append(x[i])
    # float32-representable values survive the binary feature format exactly
    vecs = np.array(vecs).astype(np.float32).astype(np.float64)
    return Manifest(records), FeatureStore(ids, vecs), centers


def assign_sources(manifest: Manifest, class_source: Mapping[str, int], carryover: float = 0.0,
                   seed: int = 0) -> Manifest:
    """Give each sample a release index.

    A class debuts in release class_source[label]; a `carryover` fraction of
    its samples is spread evenly over the later releases so known classes
    keep receiving new samples.
    """
    last = max(class_source.values())
    by_label: dict[str, list[SampleRecord]] = {}
    for r in manifest:
        by_label.setdefault(r.label, []).append(r)
    out = []
    for label in sorted(by_label):
        recs = by_label[label]
        first = class_source[label]
        later = list(range(first + 1, last + 1))
        source = {r.id: first for r in recs}
        if later and carryover > 0:
            rng = np.random.default_rng(derive_seed(seed, "carry", label))
            for split in ("train", "validation", "test"):
                members = [r.id for r in recs if r.split == split]
                moved = [members[i] for i in rng.permutation(len(members))][:round(carryover * len(members))]
                for j, sid in enumerate(moved):
                    source[sid] = later[j % len(later)]
        out.extend(SampleRecord(r.id, r.label, r.split, source[r.id], r.metadata) for r in recs)
    return Manifest(out)


def schedule_manifest(start_known: int, stage_classes: Sequence[int], train_per_class: int = 4,
                      eval_per_class: int = 1) -> Manifest:
    """Tiny label-only manifest with a multi-release class structure (no features needed).

    Stage 0 holds `start_known` classes; stage s >= 1 introduces
    stage_classes[s-1] new classes. Train counts differ per class so the
    most-frequent-first ordering is exercised.
    """
    records = []
    k = 0
    groups = [start_known] + list(stage_classes)
    for source, n_classes in enumerate(groups):
        for _ in range(n_classes):
            label = class_label(k)
            n_train = train_per_class + (k % 7)
            for i in range(n_train):
                records.append(SampleRecord(f"{label}-t{i}", label, "train", source))
            for i in range(eval_per_class):
                records.append(SampleRecord(f"{label}-v{i}", label, "validation", source))
                records.append(SampleRecord(f"{label}-e{i}", label, "test", source))
            k += 1
    return Manifest(records)


KINDS = ("identity", "gaussian_noise", "uniform_scale", "orthogonal_rotation", "coordinate_flip_sign")


@dataclass(frozen=True)
class Perturbation:
    kind: str = "identity"
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not self.magnitude >= 0:
            raise ValueError("perturbation magnitude must be non-negative")

    def name(self) -> str:
        return self.kind if self.kind == "identity" else f"{self.kind}:{self.magnitude:g}"

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "Perturbation":
        """'gaussian_noise:6' -> Perturbation('gaussian_noise', 6.0)"""
        kind, _, mag = text.partition(":")
        return cls(kind.strip(), float(mag) if mag else 0.0, seed)


def rotation_matrix(dim: int, magnitude: float, seed: int) -> np.ndarray:
    """Random rotation raised to `magnitude` (0 -> identity, 1 -> the full rotation)."""
    rng = np.random.default_rng(derive_seed(seed, "rotation", dim))
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    if dim == 1:
        return np.eye(1)
    gen = np.real(logm(q))
    gen = 0.5 * (gen - gen.T)
    return expm(magnitude * gen)


def perturb(features: FeatureStore, p: Perturbation) -> FeatureStore:
    x = features.matrix.astype(np.float64)
    if p.kind == "identity":
        return FeatureStore(list(features.ids), features.matrix.copy())
    if p.kind == "gaussian_noise":
        if p.magnitude == 0:
            return FeatureStore(list(features.ids), features.matrix.copy())
        noise = np.stack([np.random.default_rng(derive_seed(p.seed, "noise", sid)).standard_normal(features.dim)
                          for sid in features.ids])
        return FeatureStore(list(features.ids), x + p.magnitude * noise)
    if p.kind == "uniform_scale":
        return FeatureStore(list(features.ids), x * (1.0 + p.magnitude))
    if p.kind == "orthogonal_rotation":
        return FeatureStore(list(features.ids), x @ rotation_matrix(features.dim, p.magnitude, p.seed).T)
    # coordinate_flip_sign
    rng = np.random.default_rng(derive_seed(p.seed, "flip", features.dim))
    n_flip = round(min(p.magnitude, 1.0) * features.dim)
    signs = np.ones(features.dim)
    signs[rng.permutation(features.dim)[:n_flip]] = -1.0
    return FeatureStore(list(features.ids), x * signs)


def blob_experiment(start_classes: int = 20, novel_classes: int = 10, increments: int = 3,
                    dim: int = 16, separation: float = 6.0, per_class: int = 100,
                    carryover: float = 0.25, seed: int = 0):
    """Blobs arranged as a two-release open-world experiment.

    Release 0 holds the starting classes (a single fully supervised
    increment); release 1 introduces the novel classes over `increments`
    increments and carries a `carryover` fraction of the starting classes'
    samples along. Returns (manifest, features, plan).
    """
    from owl.protocol import StageSpec, plan_increments

    spec = BlobSpec(start_classes + novel_classes, dim, per_class, separation, seed=seed)
    manifest, features, _ = gen_blobs(spec)
    class_source = {class_label(k): int(k >= start_classes) for k in range(spec.classes)}
    manifest = assign_sources(manifest, class_source, carryover, seed)
    start = {class_label(k) for k in range(start_classes)}
    plan = plan_increments(manifest, start, [StageSpec(0, 1), StageSpec(1, increments)], seed)
    return manifest, features, plan
