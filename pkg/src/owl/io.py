"""Readers and writers for every file the harness touches.

All writers are byte-stable: writing what a reader returned reproduces
the original file exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from owl.data import ExperimentPlan, FeatureStore, IncrementPlan, Manifest, SampleRecord

FEATURE_MAGIC = b"OWLF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"OWLC"
CHECKPOINT_VERSION = 1


# manifests

def write_manifest(manifest: Manifest, path) -> None:
    meta_keys = sorted({k for r in manifest for k in r.metadata})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "split", "source"] + [f"meta.{k}" for k in meta_keys])
        for r in manifest:
            w.writerow([r.id, r.label, r.split, r.source] + [r.metadata.get(k, "") for k in meta_keys])


def read_manifest(path) -> Manifest:
    """Empty metadata cells mean the key is absent for that sample."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or header[:4] != ["id", "label", "split", "source"]:
            raise ValueError(f"{path}: manifest header must start with id,label,split,source")
        for col in header[4:]:
            if not col.startswith("meta."):
                raise ValueError(f"{path}: unexpected column {col!r}")
        meta_keys = [c[len("meta."):] for c in header[4:]]
        records = []
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                records.append(SampleRecord(
                    id=row[0], label=row[1], split=row[2], source=int(row[3]),
                    metadata={k: v for k, v in zip(meta_keys, row[4:]) if v != ""}))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    return Manifest(records)


def read_labels(path) -> set[str]:
    """One label per line; blank lines and '#' comments are skipped."""
    out = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.add(line)
    return out


def write_labels(labels: Iterable[str], path) -> None:
    Path(path).write_text("".join(f"{lab}\n" for lab in sorted(labels)), encoding="utf-8")


# features

def write_features(store: FeatureStore, path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        _write_features_csv(store, path)
        return
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HI", FEATURE_VERSION, store.dim))
        vecs = store.matrix.astype("<f4")
        for sid, row in zip(store.ids, vecs):
            raw = sid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"sample id too long for the feature format: {sid[:40]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(row.tobytes())


def read_features(path) -> FeatureStore:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(FEATURE_MAGIC):
        if path.suffix == ".csv":
            return _read_features_csv(path)
        raise ValueError(f"{path}: not a feature file (bad magic)")
    if len(data) < 10:
        raise ValueError(f"{path}: truncated header")
    version, dim = struct.unpack_from("<HI", data, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    if dim < 1:
        raise ValueError(f"{path}: dimension must be positive")
    pos = 10
    ids, rows = [], []
    width = 4 * dim
    while pos < len(data):
        if pos + 2 > len(data):
            raise ValueError(f"{path}: truncated record at byte {pos}")
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + n + width > len(data):
            raise ValueError(f"{path}: truncated record at byte {pos - 2}")
        ids.append(data[pos:pos + n].decode("utf-8"))
        pos += n
        rows.append(np.frombuffer(data, dtype="<f4", count=dim, offset=pos))
        pos += width
    matrix = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return FeatureStore(ids, matrix)


def _write_features_csv(store: FeatureStore, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"f{i}" for i in range(store.dim)])
        for sid, row in zip(store.ids, store.matrix):
            # str(np.float32) is the shortest text that round-trips in float32
            w.writerow([sid] + [str(v) for v in row])


def _read_features_csv(path: Path) -> FeatureStore:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise ValueError(f"{path}: feature CSV header must start with 'id'")
    dim = len(rows[0]) - 1
    ids = [r[0] for r in rows[1:]]
    vecs = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float32).reshape(len(ids), dim)
    return FeatureStore(ids, vecs)


# plans

def plan_to_json(plan: ExperimentPlan) -> dict:
    return {
        "seed": plan.seed,
        "label_universe": sorted(plan.label_universe),
        "increments": [
            {
                "index": inc.index,
                "known_labels": sorted(inc.known_labels),
                "novel_labels": sorted(inc.novel_labels),
                "train_ids": list(inc.train_ids),
                "validation_ids": list(inc.validation_ids),
                "test_ids": list(inc.test_ids),
            }
            for inc in plan.increments
        ],
    }


def plan_from_json(obj: dict) -> ExperimentPlan:
    return ExperimentPlan(
        increments=tuple(IncrementPlan(**inc) for inc in obj["increments"]),
        seed=int(obj["seed"]),
        label_universe=frozenset(obj["label_universe"]),
    )


def write_plan(plan: ExperimentPlan, path) -> None:
    Path(path).write_text(json.dumps(plan_to_json(plan), indent=1) + "\n", encoding="utf-8")


def read_plan(path) -> ExperimentPlan:
    try:
        return plan_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: malformed plan ({e})") from None


# JSON lines with fixed float formatting

def dumps_record(obj) -> str:
    """Compact JSON with floats at 17 significant digits, so logs are bit-reproducible."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError("non-finite value in log record")
        text = format(x, ".17g")
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k), ensure_ascii=False)}:{dumps_record(v)}"
                              for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_record(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ValueError(f"{path}:{lineno}: {e}") from None
    return out


def write_jsonl(records: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


# predictor checkpoints

def write_checkpoint(header: dict, blocks: list[tuple[str, np.ndarray]], path) -> None:
    """JSON header (with declared block shapes) followed by raw little-endian f64 blocks."""
    header = dict(header)
    arrays = [np.ascontiguousarray(arr, dtype="<f8") for _, arr in blocks]
    header["blocks"] = [{"name": name, "shape": list(arr.shape)} for (name, _), arr in zip(blocks, arrays)]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(head)))
    buf.write(head)
    for arr in arrays:
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC) or len(data) < 10:
        raise ValueError(f"{path}: not a predictor checkpoint")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[10:10 + hlen].decode("utf-8"))
    pos = 10 + hlen
    blocks = {}
    for spec in header.pop("blocks"):
        count = int(np.prod(spec["shape"], dtype=np.int64))
        if pos + 8 * count > len(data):
            raise ValueError(f"{path}: block {spec['name']!r} is truncated")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(spec["shape"])
        blocks[spec["name"]] = arr.astype(np.float64)
        pos += 8 * count
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after the declared blocks")
    return header, blocks
