"""Dynamic per-host threshold, onset detection and fixed-length event windows."""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .binning import BIN_US, HostBin, HostSequence

THRESHOLD_FLOOR = 128.0
WINDOW_BINS = 60  # 300 s


class EmptySequence(ValueError):
    pass


@dataclass(frozen=True)
class HostThreshold:
    host_mac: str
    threshold: float


@dataclass(frozen=True)
class SuspiciousEvent:
    host_mac: str
    onset_bin: int
    bins: tuple[tuple[int, int], ...]
    source: str = ""

    @property
    def event_id(self) -> str:
        base = f"{self.host_mac}@{self.onset_bin}"
        return f"{self.source}/{base}" if self.source else base

    @property
    def onset_time(self) -> datetime:
        return datetime.fromtimestamp(self.onset_bin * BIN_US / 1e6, tz=timezone.utc)

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "source": self.source,
            "host": self.host_mac,
            "onset_bin": self.onset_bin,
            "onset_time_iso": self.onset_time.isoformat().replace("+00:00", "Z"),
            "bins": [list(b) for b in self.bins],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SuspiciousEvent":
        return cls(obj["host"], int(obj["onset_bin"]),
                   tuple((int(c), int(d)) for c, d in obj["bins"]),
                   obj.get("source", ""))


def _as_arrays(dense_bins) -> tuple[np.ndarray, np.ndarray]:
    """(bin indices, C*D products) for a dense run of bins."""
    if isinstance(dense_bins, np.ndarray):
        arr = dense_bins.astype(np.int64, copy=False)
    else:
        arr = np.array([(b.bin_index, b.count, b.degree) for b in dense_bins],
                       dtype=np.int64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1] * arr[:, 2]


def compute_threshold(dense_bins: Sequence[HostBin] | np.ndarray, host_mac: str = "",
                      floor: float = THRESHOLD_FLOOR) -> HostThreshold:
    """max(floor, mean of count*degree) over every bin, zeros included."""
    _, products = _as_arrays(dense_bins)
    n = len(products)
    if n == 0:
        raise EmptySequence("cannot compute a threshold over zero bins")
    return HostThreshold(host_mac, max(float(floor), int(products.sum()) / n))


def detect_onsets(dense_bins: Sequence[HostBin] | np.ndarray, threshold: float,
                  window: int = WINDOW_BINS) -> list[int]:
    """Bins whose count*degree strictly exceeds ``threshold``.

    A crossing inside the window opened by an earlier onset is suppressed,
    so consecutive onsets are at least ``window`` bins apart.
    """
    indices, products = _as_arrays(dense_bins)
    onsets: list[int] = []
    next_free = None
    for pos in np.flatnonzero(products > threshold):
        idx = int(indices[pos])
        if next_free is None or idx >= next_free:
            onsets.append(idx)
            next_free = idx + window
    return onsets


def extract_events(seq: HostSequence, onsets: Iterable[int], window: int = WINDOW_BINS,
                   source: str = "") -> list[SuspiciousEvent]:
    get = seq.bins.get
    events = []
    for onset in onsets:
        bins = []
        for i in range(onset, onset + window):
            b = get(i)
            bins.append((b.count, b.degree) if b else (0, 0))
        events.append(SuspiciousEvent(seq.host_mac, onset, tuple(bins), source))
    return events


def detect_host(seq: HostSequence, floor: float = THRESHOLD_FLOOR, window: int = WINDOW_BINS,
                source: str = "") -> tuple[HostThreshold, list[SuspiciousEvent]]:
    # zero bins add nothing to the sum and never cross, so the stored bins
    # suffice once N is taken from the full span
    stored = np.array([seq.bins[i] for i in sorted(seq.bins)], dtype=np.int64).reshape(-1, 3)
    _, products = _as_arrays(stored)
    n = seq.last_bin - seq.first_bin + 1
    threshold = HostThreshold(seq.host_mac, max(float(floor), int(products.sum()) / n))
    onsets = detect_onsets(stored, threshold.threshold, window)
    return threshold, extract_events(seq, onsets, window, source)


def detect_all(sequences: dict[str, HostSequence], floor: float = THRESHOLD_FLOOR,
               window: int = WINDOW_BINS, source: str = "") -> list[SuspiciousEvent]:
    """Events for every host, ordered by (host_mac, onset_bin)."""
    events = []
    for mac in sorted(sequences):
        events.extend(detect_host(sequences[mac], floor, window, source)[1])
    return events


def write_events_json(events: Sequence[SuspiciousEvent], stream) -> None:
    json.dump([e.to_json() for e in events], stream, indent=1)
    stream.write("\n")


def read_events_json(stream) -> list[SuspiciousEvent]:
    return [SuspiciousEvent.from_json(obj) for obj in json.load(stream)]
