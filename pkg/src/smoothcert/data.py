"""Dataset ingestion, binary-pair extraction, splits, and on-disk formats.

Datasets are immutable after construction (feature/label arrays are marked
read-only) and serialize to a canonical little-endian container so that
byte-level hashing is stable across platforms and runs.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "SplitSpec",
    "load_idx_images",
    "load_csv_tabular",
    "binary_pair",
    "split",
    "standardize",
    "subset",
    "take_per_class",
    "save_dataset",
    "load_dataset",
    "dataset_to_bytes",
    "dataset_sha256",
]

_CONTAINER_MAGIC = b"SCDS"
_CONTAINER_VERSION = 1
_FLAG_POISONED = 1

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Labeled feature matrix: n rows of d features with labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_shape: tuple

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int32)
        if feats.ndim != 2:
            raise ValueError(f"features must be a 2-D (n, d) matrix, got shape {feats.shape}")
        if labs.shape != (feats.shape[0],):
            raise ValueError("labels must be a 1-D array matching the feature rows")
        if feats.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        shape = tuple(int(s) for s in self.feature_shape)
        if int(np.prod(shape)) != feats.shape[1]:
            raise ValueError(f"feature_shape {shape} does not multiply out to d={feats.shape[1]}")
        c = int(self.class_count)
        if c < 1 or labs.min() < 0 or labs.max() >= c:
            raise ValueError(f"labels must lie in [0, {c})")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "class_count", c)
        object.__setattr__(self, "feature_shape", shape)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int

    def __post_init__(self):
        if not (0.0 < float(self.train_fraction) < 1.0):
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction!r}")


def _open_maybe_gzip(path):
    f = open(path, "rb")
    head = f.read(2)
    f.seek(0)
    if head == b"\x1f\x8b":
        return gzip.open(f)
    return f


def _read_exact(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise ValueError(f"truncated file while reading {what}: wanted {count} bytes, got {len(buf)}")
    return buf


def load_idx_images(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair (gzipped or raw).

    Big-endian magic 0x00000803 / 0x00000801 with u32 dimension sizes, then
    unsigned bytes.  Pixels are scaled to [0, 1] by /255; the image height
    and width are recorded as the feature shape.
    """
    with _open_maybe_gzip(images_path) as f:
        magic, n, h, w = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != _IDX_IMAGES_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x} in {images_path}")
        raw = _read_exact(f, n * h * w, "image pixels")
        if f.read(1):
            raise ValueError(f"trailing bytes after {n} images in {images_path}")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, h * w)
    with _open_maybe_gzip(labels_path) as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != _IDX_LABELS_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x} in {labels_path}")
        labels = np.frombuffer(_read_exact(f, n_labels, "labels"), dtype=np.uint8)
    if n_labels != n:
        raise ValueError(f"image/label count mismatch: {n} images vs {n_labels} labels")
    features = pixels.astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int32), int(labels.max()) + 1, (h, w))


def load_csv_tabular(path, label_column: int = -1) -> Dataset:
    """Load a numeric CSV with an integer label column (by index)."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty files warn before we reject them
            table = np.genfromtxt(path, delimiter=",", dtype=np.float64)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    if table.size == 0:
        raise ValueError(f"{path} contains no data rows")
    table = np.atleast_2d(table)
    if np.isnan(table).any():
        bad = np.argwhere(np.isnan(table))[0]
        raise ValueError(f"non-numeric cell at row {bad[0]}, column {bad[1]} in {path}")
    col = label_column if label_column >= 0 else table.shape[1] + label_column
    if not 0 <= col < table.shape[1]:
        raise ValueError(f"label column {label_column} out of range for {table.shape[1]} columns")
    raw_labels = table[:, col]
    if not np.all(raw_labels == np.round(raw_labels)):
        raise ValueError("label column must hold integers")
    labels = raw_labels.astype(np.int32)
    if labels.min() < 0:
        raise ValueError("labels must be nonnegative")
    features = np.delete(table, col, axis=1)
    return Dataset(features, labels, int(labels.max()) + 1, (features.shape[1],))


def binary_pair(dataset: Dataset, label_a: int, label_b: int) -> Dataset:
    """Restrict to two classes, relabeled {label_a: 0, label_b: 1}, order kept."""
    if label_a == label_b:
        raise ValueError("binary pair needs two distinct labels")
    mask_a = dataset.labels == label_a
    mask_b = dataset.labels == label_b
    for lab, mask in ((label_a, mask_a), (label_b, mask_b)):
        if not mask.any():
            raise ValueError(f"label {lab} not present in dataset")
    keep = mask_a | mask_b
    features = dataset.features[keep]
    labels = np.where(mask_a[keep], 0, 1).astype(np.int32)
    return Dataset(features, labels, 2, dataset.feature_shape)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into (train, test); disjoint, exhaustive."""
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(dataset.n)
    n_train = int(math.floor(spec.train_fraction * dataset.n + 0.5))
    n_train = min(max(n_train, 1), dataset.n - 1)
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    return subset(dataset, train_idx), subset(dataset, test_idx)


def subset(dataset: Dataset, indices) -> Dataset:
    idx = np.asarray(indices, dtype=np.int64)
    return Dataset(
        dataset.features[idx], dataset.labels[idx], dataset.class_count, dataset.feature_shape
    )


def take_per_class(dataset: Dataset, per_class: int, seed: int) -> Dataset:
    """Deterministically downsample to at most ``per_class`` rows per class."""
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(dataset.class_count):
        rows = np.flatnonzero(dataset.labels == c)
        if rows.size > per_class:
            rows = np.sort(rng.choice(rows, size=per_class, replace=False))
        chosen.append(rows)
    return subset(dataset, np.sort(np.concatenate(chosen)))


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Scale columns to zero mean / unit variance using train statistics.

    Constant columns are left unscaled.  The same affine map is applied to
    every additional dataset so train/test stay commensurable.
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)

    def apply(ds: Dataset) -> Dataset:
        return Dataset(
            (ds.features - mean) / std, ds.labels, ds.class_count, ds.feature_shape
        )

    return tuple(apply(ds) for ds in (train,) + others)


def _pack_poison_block(poisoned) -> bytes:
    spec = poisoned.spec
    kind = spec.kind.encode()
    out = io.BytesIO()
    out.write(struct.pack("<Q", poisoned.poisoned_indices.size))
    out.write(poisoned.poisoned_indices.astype("<u8").tobytes())
    out.write(poisoned.pattern.astype("<f8").tobytes())
    out.write(struct.pack("<d", poisoned.attack_l2_total))
    out.write(struct.pack("<H", len(kind)))
    out.write(kind)
    out.write(
        struct.pack(
            "<ddiiq",
            spec.l2_norm,
            spec.poison_ratio,
            spec.source_label,
            spec.target_label,
            spec.pattern_seed,
        )
    )
    return out.getvalue()


def dataset_to_bytes(obj) -> bytes:
    """Canonical serialization of a Dataset or PoisonedDataset."""
    from .attacks import PoisonedDataset  # local import to avoid a cycle

    poisoned = obj if isinstance(obj, PoisonedDataset) else None
    ds = poisoned.dataset if poisoned is not None else obj
    flags = _FLAG_POISONED if poisoned is not None else 0
    out = io.BytesIO()
    out.write(_CONTAINER_MAGIC)
    out.write(
        struct.pack(
            "<IQQII",
            _CONTAINER_VERSION,
            ds.n,
            ds.d,
            ds.class_count,
            len(ds.feature_shape),
        )
    )
    out.write(np.asarray(ds.feature_shape, dtype="<u8").tobytes())
    out.write(struct.pack("<I", flags))
    out.write(ds.features.astype("<f8").tobytes())
    out.write(ds.labels.astype("<i4").tobytes())
    if poisoned is not None:
        out.write(_pack_poison_block(poisoned))
    return out.getvalue()


def dataset_from_bytes(buf: bytes):
    """Inverse of dataset_to_bytes; returns Dataset or PoisonedDataset."""
    from .attacks import BackdoorSpec, PoisonedDataset

    f = io.BytesIO(buf)
    magic = _read_exact(f, 4, "container magic")
    if magic != _CONTAINER_MAGIC:
        raise ValueError(f"bad container magic {magic!r}")
    version, n, d, class_count, rank = struct.unpack(
        "<IQQII", _read_exact(f, 28, "container header")
    )
    if version != _CONTAINER_VERSION:
        raise ValueError(f"unsupported container version {version}")
    shape = tuple(np.frombuffer(_read_exact(f, 8 * rank, "feature shape"), dtype="<u8").astype(int))
    (flags,) = struct.unpack("<I", _read_exact(f, 4, "flags"))
    features = np.frombuffer(_read_exact(f, 8 * n * d, "features"), dtype="<f8").reshape(n, d)
    labels = np.frombuffer(_read_exact(f, 4 * n, "labels"), dtype="<i4")
    ds = Dataset(features, labels, class_count, shape)
    if not flags & _FLAG_POISONED:
        if f.read(1):
            raise ValueError("trailing bytes after dataset payload")
        return ds
    (r,) = struct.unpack("<Q", _read_exact(f, 8, "poison count"))
    indices = np.frombuffer(_read_exact(f, 8 * r, "poisoned indices"), dtype="<u8").astype(np.int64)
    pattern = np.frombuffer(_read_exact(f, 8 * d, "pattern"), dtype="<f8")
    (attack_l2_total,) = struct.unpack("<d", _read_exact(f, 8, "attack size"))
    (kind_len,) = struct.unpack("<H", _read_exact(f, 2, "kind length"))
    kind = _read_exact(f, kind_len, "kind").decode()
    l2_norm, poison_ratio, source, target, pattern_seed = struct.unpack(
        "<ddiiq", _read_exact(f, 32, "attack spec")
    )
    if f.read(1):
        raise ValueError("trailing bytes after poison block")
    spec = BackdoorSpec(kind, l2_norm, poison_ratio, source, target, pattern_seed)
    return PoisonedDataset(ds, indices, pattern, attack_l2_total, spec)


def save_dataset(obj, path) -> None:
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(obj))


def load_dataset(path):
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())


def dataset_sha256(obj) -> str:
    """Hex digest of the canonical byte serialization."""
    return hashlib.sha256(dataset_to_bytes(obj)).hexdigest()
