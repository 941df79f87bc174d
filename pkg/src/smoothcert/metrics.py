"""Benchmark metrics and report tables for certification runs.

A run produces one EvaluationRecord per test instance; the three standard
metrics fold over them.  Abstentions count as incorrect and uncertified
everywhere, and radius comparisons are strict (a radius exactly equal to
the grid point does not count).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from .certify import CertifiedPrediction

__all__ = [
    "RADIUS_GRID_COARSE",
    "RADIUS_GRID_FINE",
    "EvaluationRecord",
    "BenchmarkRow",
    "prediction_accuracy",
    "certified_rate",
    "certified_accuracy",
    "abstain_rate",
    "summarize_records",
    "emit_report",
    "save_records",
    "load_records",
]

# default radius grids for wide- and fine-scale benchmarks
RADIUS_GRID_COARSE = (0.2, 0.5, 1.0, 2.0)
RADIUS_GRID_FINE = (0.05, 0.1, 0.2, 0.5)


@dataclass(frozen=True)
class EvaluationRecord:
    """Ground truth vs one certified prediction (None = abstained)."""

    true_label: int
    prediction: int | None
    radius: float | None
    exact_saturated: bool = False

    def __post_init__(self):
        if (self.prediction is None) != (self.radius is None):
            raise ValueError("radius must be present exactly when a prediction is")

    @classmethod
    def from_prediction(cls, true_label: int, pred: CertifiedPrediction) -> "EvaluationRecord":
        return cls(
            true_label=int(true_label),
            prediction=pred.label,
            radius=pred.radius,
            exact_saturated=pred.exact_saturated,
        )


def _require_records(records):
    records = list(records)
    if not records:
        raise ValueError("metrics need at least one record")
    return records


def prediction_accuracy(records) -> float:
    """Fraction of records predicted correctly; abstentions are incorrect."""
    records = _require_records(records)
    hits = sum(1 for r in records if r.prediction is not None and r.prediction == r.true_label)
    return hits / len(records)


def certified_rate(records, radius: float) -> float:
    """Fraction certified strictly beyond ``radius`` (regardless of truth)."""
    records = _require_records(records)
    hits = sum(1 for r in records if r.radius is not None and r.radius > radius)
    return hits / len(records)


def certified_accuracy(records, radius: float) -> float:
    """Fraction both correct and certified strictly beyond ``radius``."""
    records = _require_records(records)
    hits = sum(
        1
        for r in records
        if r.prediction is not None and r.prediction == r.true_label and r.radius > radius
    )
    return hits / len(records)


def abstain_rate(records) -> float:
    records = _require_records(records)
    return sum(1 for r in records if r.prediction is None) / len(records)


@dataclass(frozen=True)
class BenchmarkRow:
    """One benchmark table row: an attack setting and its metrics on a grid."""

    attack_kind: str
    pattern_l2: float
    poison_ratio: float
    sigma: float
    prediction_acc: float
    radius_grid: tuple
    certified_acc: tuple
    certified_rate: tuple

    def __post_init__(self):
        if not (len(self.radius_grid) == len(self.certified_acc) == len(self.certified_rate)):
            raise ValueError("metric tuples must match the radius grid")
        for acc, rate in zip(self.certified_acc, self.certified_rate):
            if not (0.0 <= acc <= rate <= 1.0 and acc <= self.prediction_acc + 1e-12):
                raise ValueError("certified accuracy must not exceed certified rate or accuracy")


def summarize_records(
    records,
    radius_grid,
    attack_kind: str = "none",
    pattern_l2: float = 0.0,
    poison_ratio: float = 0.0,
    sigma: float = 0.0,
) -> BenchmarkRow:
    grid = tuple(float(r) for r in radius_grid)
    return BenchmarkRow(
        attack_kind=attack_kind,
        pattern_l2=float(pattern_l2),
        poison_ratio=float(poison_ratio),
        sigma=float(sigma),
        prediction_acc=prediction_accuracy(records),
        radius_grid=grid,
        certified_acc=tuple(certified_accuracy(records, r) for r in grid),
        certified_rate=tuple(certified_rate(records, r) for r in grid),
    )


def emit_report(rows, radius_grid, fmt: str = "csv") -> str:
    """Render benchmark rows as a deterministic CSV or JSON document."""
    rows = list(rows)
    if not rows:
        raise ValueError("report needs at least one row")
    grid = tuple(float(r) for r in radius_grid)
    for row in rows:
        if row.radius_grid != grid:
            raise ValueError(f"row grid {row.radius_grid} does not match report grid {grid}")
    if fmt == "json":
        payload = {
            "radius_grid": list(grid),
            "rows": [
                {
                    "attack_kind": r.attack_kind,
                    "pattern_l2": r.pattern_l2,
                    "poison_ratio": r.poison_ratio,
                    "sigma": r.sigma,
                    "prediction_acc": r.prediction_acc,
                    "certified_acc": list(r.certified_acc),
                    "certified_rate": list(r.certified_rate),
                }
                for r in rows
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        header = ["attack_kind", "pattern_l2", "poison_ratio", "sigma", "prediction_acc"]
        header += [f"certified_acc@{r:g}" for r in grid]
        header += [f"certified_rate@{r:g}" for r in grid]
        writer.writerow(header)
        for r in rows:
            writer.writerow(
                [r.attack_kind, repr(r.pattern_l2), repr(r.poison_ratio), repr(r.sigma), repr(r.prediction_acc)]
                + [repr(v) for v in r.certified_acc]
                + [repr(v) for v in r.certified_rate]
            )
        return out.getvalue()
    raise ValueError(f"unknown report format {fmt!r}, expected 'csv' or 'json'")


def save_records(records, path) -> None:
    """Write one JSON object per line; floats keep full round-trip precision."""
    with open(path, "w") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "true_label": r.true_label,
                        "prediction": r.prediction,
                        "radius": r.radius,
                        "exact_saturated": r.exact_saturated,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_records(path) -> list:
    records = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                EvaluationRecord(
                    true_label=obj["true_label"],
                    prediction=obj["prediction"],
                    radius=obj["radius"],
                    exact_saturated=obj.get("exact_saturated", False),
                )
            )
    if not records:
        raise ValueError(f"no records found in {path}")
    return records
