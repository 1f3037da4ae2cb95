"""Labeled feature-vector datasets: on-disk formats, normalization, subsampling.

The binary shard format ("FVS1") is the interchange contract with the
extractor: little-endian, magic "FVS1", u32 K, u32 N, then N records of
[u32 label][K x f32 values].  The CSV alternative is header-free lines
"label,v0,...,v{K-1}".  Values are f32 on disk and widened to f64 in
memory for all computation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from bayesmem.utils import DataFormatError, ValidationError

SHARD_MAGIC = b"FVS1"


@dataclass(frozen=True)
class FeatureRecord:
    """One labeled feature vector."""

    label: int
    values: np.ndarray


@dataclass(frozen=True)
class FeatureDataset:
    """Ordered labeled feature vectors with a shared dimensionality.

    Immutable after construction; all operations below return new datasets.
    """

    K: int
    labels: np.ndarray  # (N,) int64
    values: np.ndarray  # (N, K) float64
    normalized: bool = False

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.K:
            raise ValidationError(
                f"values must be (N, {self.K}), got shape {values.shape}"
            )
        if labels.shape != (values.shape[0],):
            raise ValidationError("labels and values disagree on record count")
        if labels.size and labels.min() < 0:
            raise ValidationError("class labels must be non-negative")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def records(self) -> list[FeatureRecord]:
        return [FeatureRecord(int(l), v) for l, v in zip(self.labels, self.values)]

    def class_ids(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))


def _sniff_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "shard" if head == SHARD_MAGIC else "csv"


def load_shard(path, fmt: str = "auto") -> FeatureDataset:
    """Read a feature dataset from disk.

    fmt: "shard", "csv", or "auto" (sniff by magic bytes).  Malformed
    headers, wrong-length records, and non-finite values raise
    DataFormatError naming the offending record.
    """
    if fmt == "auto":
        fmt = _sniff_format(path)
    if fmt == "shard":
        return _load_binary(path)
    if fmt == "csv":
        return _load_csv(path)
    raise ValidationError(f"unknown shard format {fmt!r}")


def _load_binary(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) != 12 or header[:4] != SHARD_MAGIC:
            raise DataFormatError(f"{path}: not a feature shard (bad magic/header)")
        k, n = struct.unpack("<II", header[4:])
        if k < 1:
            raise DataFormatError(f"{path}: header declares K={k}")
        record_bytes = 4 + 4 * k
        payload = fh.read()
    if len(payload) != n * record_bytes:
        raise DataFormatError(
            f"{path}: expected {n} records of {record_bytes} bytes, "
            f"found {len(payload)} payload bytes"
        )
    rec_dtype = np.dtype([("label", "<u4"), ("values", "<f4", (k,))])
    raw = np.frombuffer(payload, dtype=rec_dtype, count=n)
    values32 = raw["values"]
    finite = np.isfinite(values32).all(axis=1) if n else np.ones(0, bool)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise DataFormatError(f"{path}: non-finite value in record {bad}")
    labels = raw["label"].astype(np.int64)
    values = values32.astype(np.float64)
    return FeatureDataset(K=k, labels=labels, values=values, normalized=False)


def _load_csv(path) -> FeatureDataset:
    labels: list[int] = []
    rows: list[np.ndarray] = []
    k = None
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise DataFormatError(f"{path}: record {len(rows)} (line {i + 1}) too short")
            try:
                label = int(parts[0])
                vals = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}: record {len(rows)} (line {i + 1}) unparseable: {exc}"
                ) from None
            if k is None:
                k = vals.size
            elif vals.size != k:
                raise DataFormatError(
                    f"{path}: record {len(rows)} has {vals.size} values, expected {k}"
                )
            if not np.all(np.isfinite(vals)):
                raise DataFormatError(f"{path}: non-finite value in record {len(rows)}")
            if label < 0:
                raise DataFormatError(f"{path}: negative label in record {len(rows)}")
            labels.append(label)
            rows.append(vals)
    if k is None:
        raise DataFormatError(f"{path}: empty CSV shard")
    values = np.vstack(rows) if rows else np.empty((0, k))
    return FeatureDataset(K=k, labels=np.array(labels, dtype=np.int64), values=values)


def write_shard(dataset: FeatureDataset, path, fmt: str = "shard") -> None:
    """Write a dataset to disk; values are stored as f32."""
    if fmt == "shard":
        with open(path, "wb") as fh:
            fh.write(SHARD_MAGIC)
            fh.write(struct.pack("<II", dataset.K, len(dataset)))
            f32 = dataset.values.astype("<f4")
            for label, row in zip(dataset.labels, f32):
                fh.write(struct.pack("<I", int(label)))
                fh.write(row.tobytes())
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            f32 = dataset.values.astype(np.float32)
            for label, row in zip(dataset.labels, f32):
                fh.write(str(int(label)))
                for v in row:
                    fh.write(",%.9g" % float(v))
                fh.write("\n")
    else:
        raise ValidationError(f"unknown shard format {fmt!r}")


def l2_normalize(dataset: FeatureDataset) -> FeatureDataset:
    """Scale every record to unit Euclidean norm.

    Idempotent: re-normalizing an already normalized dataset is a visible
    no-op.  All-zero records are rejected (the scaling is undefined).
    """
    norms = np.linalg.norm(dataset.values, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ValidationError(
            f"record {int(zero[0])} is the all-zero vector; cannot L2-normalize"
        )
    values = dataset.values / norms[:, None]
    return FeatureDataset(K=dataset.K, labels=dataset.labels, values=values, normalized=True)


def subsample_features(dataset: FeatureDataset, count: int, seed: int):
    """Project onto `count` feature dimensions drawn without replacement.

    The chosen indices (sorted ascending) are returned so the identical
    projection can be applied to held-out data via select_features.
    Deterministic in (dataset, count, seed).
    """
    if not 1 <= count <= dataset.K:
        raise ValidationError(f"count must be in [1, {dataset.K}], got {count}")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(dataset.K, size=count, replace=False))
    return select_features(dataset, indices), indices


def select_features(dataset: FeatureDataset, indices) -> FeatureDataset:
    """Restrict a dataset to the given feature indices (projection only)."""
    indices = np.asarray(indices, dtype=np.int64)
    values = np.ascontiguousarray(dataset.values[:, indices])
    # Projection breaks unit norms; the result must be re-normalized.
    return FeatureDataset(K=int(indices.size), labels=dataset.labels, values=values)


def split_by_class(dataset: FeatureDataset) -> dict[int, FeatureDataset]:
    """Partition records by label, preserving record order within each class."""
    if len(dataset) == 0:
        raise ValidationError("cannot split an empty dataset")
    out: dict[int, FeatureDataset] = {}
    for cid in dataset.class_ids():
        mask = dataset.labels == cid
        out[cid] = FeatureDataset(
            K=dataset.K,
            labels=dataset.labels[mask],
            values=dataset.values[mask],
            normalized=dataset.normalized,
        )
    return out
