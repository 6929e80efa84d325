"""Labelled synthetic ARP traffic for the suspicious-pattern archetypes.

Each :class:`PatternSpec` describes one or more *episodes* on one host. An
episode starts at a 5 s bin boundary and lasts at most ``duration`` bins;
within it, bursts fire every ``period`` bins for ``burst_bins`` consecutive
bins, each burst bin carrying ``rate`` requests spread over ``degree``
distinct targets. Every episode yields one ground-truth label.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write
from .binning import BIN_US
from .ingest import ARP_REQUEST, BROADCAST_MAC, ArpObservation, write_pcap, write_records

# family -> (rate, degree, period, burst_bins, duration) per episode
FAMILY_DEFAULTS: dict[str, tuple[int, int, int, int, int]] = {
    "instant_large_boost":    (636, 290, 60, 2, 2),    # A
    "slow_repetitive_probe":  (24, 12, 12, 1, 60),     # B
    "instant_small_boost":    (48, 8, 60, 1, 1),       # D
    "regular_quick_probes":   (30, 20, 3, 1, 60),      # E
    "continuous_high":        (60, 30, 1, 1, 60),      # C1
    "short_one_to_one_spike": (200, 200, 60, 3, 3),    # C4
    "repetitive_high_probe":  (300, 150, 10, 2, 60),   # C5
    "benign_background":      (1, 1, 1, 1, 720),
}
FAMILIES = tuple(FAMILY_DEFAULTS)
ARCHETYPE = {
    "instant_large_boost": "A", "slow_repetitive_probe": "B", "instant_small_boost": "D",
    "regular_quick_probes": "E", "continuous_high": "C1", "short_one_to_one_spike": "C4",
    "repetitive_high_probe": "C5", "benign_background": "-",
}
DEFAULT_GAP_BINS = 120
EPOCH_2020_US = 1_577_836_800_000_000  # 2020-01-01T00:00:00Z


class SpecConflict(ValueError):
    pass


class IoFailure(OSError):
    pass


@dataclass
class PatternSpec:
    family: str
    host_mac: str | None = None
    start_time: float = EPOCH_2020_US / 1e6    # seconds since the epoch
    rate: int | None = None
    degree: int | None = None
    period: int | None = None
    burst_bins: int | None = None
    duration: int | None = None
    episodes: int = 1
    gap_bins: int = DEFAULT_GAP_BINS
    jitter: float = 0.15        # per-episode multiplicative spread of rate/degree
    layer: bool = False         # allow overlapping another spec on the same host

    def __post_init__(self):
        if self.family not in FAMILY_DEFAULTS:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        rate, degree, period, burst, duration = FAMILY_DEFAULTS[self.family]
        self.rate = rate if self.rate is None else int(self.rate)
        self.degree = degree if self.degree is None else int(self.degree)
        self.period = period if self.period is None else int(self.period)
        self.burst_bins = burst if self.burst_bins is None else int(self.burst_bins)
        self.duration = duration if self.duration is None else int(self.duration)
        if self.rate < 0 or self.degree < 0:
            raise ValueError("rate and degree must be non-negative")
        if self.degree > self.rate:
            raise ValueError("degree per bin cannot exceed rate per bin")
        if min(self.period, self.burst_bins, self.duration, self.episodes) < 1:
            raise ValueError("period, burst_bins, duration and episodes must be >= 1")

    @property
    def start_bin(self) -> int:
        return int(round(self.start_time * 1e6)) // BIN_US

    def episode_starts(self) -> list[int]:
        return [self.start_bin + e * self.gap_bins for e in range(self.episodes)]

    def active_span(self) -> tuple[int, int]:
        starts = self.episode_starts()
        return starts[0], starts[-1] + self.duration - 1

    @classmethod
    def from_dict(cls, obj: dict) -> "PatternSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown PatternSpec fields: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class Label:
    host_mac: str
    onset_bin: int
    family: str


def load_specs(stream) -> list[PatternSpec]:
    return [PatternSpec.from_dict(obj) for obj in json.load(stream)]


def dump_specs(specs: Sequence[PatternSpec], stream) -> None:
    json.dump([asdict(s) for s in specs], stream, indent=1)


def _mac_pool(rng: np.random.Generator, taken: set[str]):
    while True:
        raw = rng.integers(0, 256, size=5)
        mac = "02:" + ":".join(f"{b:02x}" for b in raw)
        if mac not in taken:
            taken.add(mac)
            yield mac


def _ip(n: int) -> str:
    return f"10.0.{n >> 8}.{n & 0xFF}"


def _check_overlaps(specs: Sequence[PatternSpec]) -> None:
    by_host: dict[str, list[PatternSpec]] = {}
    for s in specs:
        by_host.setdefault(s.host_mac, []).append(s)
    for host, group in by_host.items():
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                if a.layer or b.layer:
                    continue
                (a0, a1), (b0, b1) = a.active_span(), b.active_span()
                if a0 <= b1 and b0 <= a1:
                    raise SpecConflict(f"specs for {host} overlap in bins "
                                       f"[{max(a0, b0)}, {min(a1, b1)}]")


def generate(specs: Iterable[PatternSpec], seed: int = 0
             ) -> tuple[list[ArpObservation], list[Label]]:
    """Time-ordered observations plus one label per generated episode."""
    rng = np.random.default_rng(seed)
    specs = list(specs)
    taken = {s.host_mac for s in specs if s.host_mac}
    macs = _mac_pool(rng, taken)
    resolved = [s if s.host_mac else PatternSpec(**{**asdict(s), "host_mac": next(macs)})
                for s in specs]
    _check_overlaps(resolved)

    host_ip: dict[str, str] = {}
    ip_numbers = rng.permutation(np.arange(1, 1 << 16))
    observations: list[ArpObservation] = []
    labels: list[Label] = []
    for spec in resolved:
        mac = spec.host_mac
        if mac not in host_ip:
            host_ip[mac] = _ip(int(ip_numbers[len(host_ip)]))
        sender = host_ip[mac]
        for start in spec.episode_starts():
            scale = 1.0 + spec.jitter * rng.uniform(-1.0, 1.0)
            rate = max(1, int(round(spec.rate * scale))) if spec.rate else 0
            degree = min(rate, max(1, int(round(spec.degree * scale)))) if spec.degree else 0
            for offset in range(spec.duration):
                if offset % spec.period >= spec.burst_bins or rate == 0:
                    continue
                observations.extend(_burst(rng, mac, sender, start + offset, rate, degree))
            if spec.family != "benign_background":
                labels.append(Label(mac, start, spec.family))
    observations.sort()
    labels.sort(key=lambda lb: (lb.host_mac, lb.onset_bin))
    return observations, labels


def _burst(rng, mac, sender, bin_idx, rate, degree) -> list[ArpObservation]:
    targets = rng.choice(1 << 16, size=degree, replace=False)
    # every chosen target gets one packet; the rest repeat random targets
    extra = rng.choice(targets, size=rate - degree) if rate > degree else np.empty(0, int)
    per_packet = np.concatenate([targets, extra])
    stamps = bin_idx * BIN_US + rng.integers(0, BIN_US, size=rate)
    return [ArpObservation(int(ts), mac, BROADCAST_MAC, ARP_REQUEST, sender, _ip(int(t)))
            for ts, t in zip(stamps, per_packet)]


def family_corpus(families: Sequence[str], events_per_family: int,
                  start_time: float = EPOCH_2020_US / 1e6, hosts_per_family: int = 4,
                  **overrides) -> list[PatternSpec]:
    """Specs giving roughly ``events_per_family`` episodes of each family."""
    specs = []
    for family in families:
        per_host = [events_per_family // hosts_per_family] * hosts_per_family
        for i in range(events_per_family % hosts_per_family):
            per_host[i] += 1
        for n in per_host:
            if n:
                specs.append(PatternSpec(family, start_time=start_time, episodes=n,
                                         **overrides.get(family, {})))
    return specs


def _write(path, writer, binary: bool) -> None:
    try:
        atomic_write(path, writer, binary=binary)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit(observations: Sequence[ArpObservation], fmt: str, path) -> None:
    """Write observations as a pcap or record file."""
    if fmt == "pcap":
        _write(path, lambda fh: write_pcap(observations, fh), binary=True)
    elif fmt == "records":
        _write(path, lambda fh: write_records(observations, fh), binary=False)
    else:
        raise ValueError(f"unknown output format {fmt!r}")
