"""Event -> 120-item feature vector (degrees, then count/degree frequencies)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .detection import SuspiciousEvent

WINDOW = 60
FEATURE_DIM = 2 * WINDOW


@dataclass(frozen=True, eq=False)
class FeatureVector:
    event_id: str
    values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.event_id == other.event_id and np.array_equal(self.values, other.values)


def build_feature(event: SuspiciousEvent) -> FeatureVector:
    bins = np.asarray(event.bins, dtype=np.float64)
    if bins.shape != (WINDOW, 2):
        raise ValueError(f"expected {WINDOW} (count, degree) bins, got shape {bins.shape}")
    counts, degrees = bins[:, 0], bins[:, 1]
    freq = np.divide(counts, degrees, out=np.zeros(WINDOW), where=degrees > 0)
    return FeatureVector(event.event_id, np.concatenate([degrees, freq]))


def normalize(raw: FeatureVector) -> FeatureVector:
    """Scale to unit Euclidean norm; all-zero vectors pass through."""
    peak = np.max(raw.values) if raw.values.size else 0.0
    if peak == 0:
        return FeatureVector(raw.event_id, raw.values.copy())
    scaled = raw.values / peak  # keeps the norm clear of under/overflow
    # division by the norm can overshoot 1.0 by an ulp on one-hot inputs
    return FeatureVector(raw.event_id, np.minimum(scaled / np.linalg.norm(scaled), 1.0))


def featurize(events: Iterable[SuspiciousEvent]) -> list[FeatureVector]:
    return [normalize(build_feature(e)) for e in events]


def as_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    if not features:
        return np.zeros((0, FEATURE_DIM))
    return np.vstack([f.values for f in features])


def write_features_csv(features: Sequence[FeatureVector], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["event_id"] + [f"v{i}" for i in range(FEATURE_DIM)])
    for f in features:
        writer.writerow([f.event_id] + [f"{v:.9g}" for v in f.values])


def read_features_csv(stream) -> list[FeatureVector]:
    reader = csv.reader(stream)
    header = next(reader)
    if len(header) != FEATURE_DIM + 1 or header[0] != "event_id":
        raise ValueError("not a feature CSV: unexpected header")
    return [FeatureVector(row[0], np.array([float(v) for v in row[1:]]))
            for row in reader if row]
