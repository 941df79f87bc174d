"""Backdoor pattern generation and training-set injection.

An attack replaces a fraction of source-class training rows by trigger-
carrying copies relabeled to the target class; the same trigger added to a
test input is what the certificates defend against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import AttackMagnitude
from .data import Dataset

__all__ = [
    "PATTERN_KINDS",
    "BackdoorSpec",
    "PoisonedDataset",
    "make_pattern",
    "inject",
    "apply_to_test",
    "round_half_up",
]

PATTERN_KINDS = ("one-pixel", "four-pixel", "blending", "one-dimension", "four-dimension")
_IMAGE_KINDS = ("one-pixel", "four-pixel")
_TABULAR_KINDS = ("one-dimension", "four-dimension")


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class BackdoorSpec:
    """Parameters of one backdoor attack.

    ``l2_norm`` is the exact L2 size of the trigger added to each poisoned
    row; ``poison_ratio`` the fraction of the training set replaced;
    ``pattern_seed`` only matters for the dense blending trigger.
    """

    kind: str
    l2_norm: float
    poison_ratio: float
    source_label: int
    target_label: int
    pattern_seed: int = 0

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}, expected one of {PATTERN_KINDS}")
        if not (float(self.l2_norm) > 0 and math.isfinite(self.l2_norm)):
            raise ValueError(f"l2_norm must be positive and finite, got {self.l2_norm!r}")
        if not (0.0 <= float(self.poison_ratio) <= 1.0):
            raise ValueError(f"poison_ratio must lie in [0, 1], got {self.poison_ratio!r}")
        if self.source_label == self.target_label:
            raise ValueError("source and target labels must differ")


@dataclass(frozen=True)
class PoisonedDataset:
    """A dataset together with the ground truth of its poisoning."""

    dataset: Dataset
    poisoned_indices: np.ndarray
    pattern: np.ndarray
    attack_l2_total: float
    spec: BackdoorSpec

    def __post_init__(self):
        idx = np.asarray(self.poisoned_indices, dtype=np.int64)
        idx.setflags(write=False)
        pat = np.asarray(self.pattern, dtype=np.float64)
        pat.setflags(write=False)
        object.__setattr__(self, "poisoned_indices", idx)
        object.__setattr__(self, "pattern", pat)

    @property
    def poisoned_count(self) -> int:
        return int(self.poisoned_indices.size)

    def attack_magnitude(self) -> AttackMagnitude:
        return AttackMagnitude.from_shared_pattern(self.pattern, self.poisoned_count)


def make_pattern(spec: BackdoorSpec, feature_shape) -> np.ndarray:
    """Build the flat trigger vector for the given feature shape.

    The result always has L2 norm exactly spec.l2_norm (to float precision).
    Image kinds place mass at the center of an (h, w[, channels]) grid;
    tabular kinds use the leading coordinates; blending fills every
    coordinate with a seeded Gaussian draw rescaled to the target norm.
    """
    shape = tuple(int(s) for s in feature_shape)
    d = int(np.prod(shape))
    if spec.kind in _IMAGE_KINDS:
        if len(shape) == 2:
            h, w, c = shape[0], shape[1], 1
        elif len(shape) == 3:
            h, w, c = shape
        else:
            raise ValueError(f"{spec.kind} needs an (h, w) or (h, w, c) shape, got {shape}")
        grid = np.zeros((h, w, c))
        if spec.kind == "one-pixel":
            grid[h // 2, w // 2, :] = spec.l2_norm / math.sqrt(c)
        else:
            if h < 2 or w < 2:
                raise ValueError(f"four-pixel pattern needs h, w >= 2, got {shape}")
            rows = (h // 2 - 1, h // 2)
            cols = (w // 2 - 1, w // 2)
            for r in rows:
                for col in cols:
                    grid[r, col, :] = spec.l2_norm / math.sqrt(4 * c)
        pattern = grid.reshape(-1) if len(shape) == 3 else grid[:, :, 0].reshape(-1)
    elif spec.kind in _TABULAR_KINDS:
        if len(shape) != 1 or d < 4:
            raise ValueError(f"{spec.kind} needs a flat shape with >= 4 features, got {shape}")
        pattern = np.zeros(d)
        if spec.kind == "one-dimension":
            pattern[0] = spec.l2_norm
        else:
            pattern[:4] = spec.l2_norm / 2.0
    else:  # blending: dense, any shape
        rng = np.random.default_rng(spec.pattern_seed)
        pattern = rng.standard_normal(d)
        norm = float(np.linalg.norm(pattern))
        if norm == 0.0:
            raise ValueError("degenerate blending draw with zero norm")
        pattern = pattern * (spec.l2_norm / norm)
    return pattern


def inject(dataset: Dataset, spec: BackdoorSpec, rng_seed: int) -> PoisonedDataset:
    """Poison round(poison_ratio * n) source-class rows of ``dataset``.

    The rows are chosen uniformly at random by ``rng_seed``, replaced in
    place by (x + pattern, target_label); every other row is byte-identical
    to the input.  Rejects datasets with too few source-class rows.
    """
    n = dataset.n
    r = round_half_up(spec.poison_ratio * n)
    source_rows = np.flatnonzero(dataset.labels == spec.source_label)
    if source_rows.size < r:
        raise ValueError(
            f"need {r} rows of source label {spec.source_label}, dataset has {source_rows.size}"
        )
    pattern = make_pattern(spec, dataset.feature_shape)

    rng = np.random.default_rng(rng_seed)
    chosen = np.sort(rng.choice(source_rows, size=r, replace=False))

    features = dataset.features.copy()
    labels = dataset.labels.copy()
    features[chosen] += pattern
    labels[chosen] = spec.target_label
    poisoned = Dataset(features, labels, dataset.class_count, dataset.feature_shape)

    return PoisonedDataset(
        dataset=poisoned,
        poisoned_indices=chosen,
        pattern=pattern,
        attack_l2_total=math.sqrt(r) * float(np.linalg.norm(pattern)),
        spec=spec,
    )


def apply_to_test(x: np.ndarray, spec: BackdoorSpec, feature_shape=None) -> np.ndarray:
    """Add the training trigger to a test input (no clipping).

    ``feature_shape`` defaults to x's own shape; pass it explicitly when x
    is a flat view of an image.
    """
    x = np.asarray(x, dtype=float)
    shape = tuple(feature_shape) if feature_shape is not None else x.shape
    if int(np.prod(shape)) != x.size:
        raise ValueError(f"feature shape {shape} does not match input of size {x.size}")
    pattern = make_pattern(spec, shape)
    return x + pattern.reshape(x.shape)
