"""Per-host aggregation of ARP observations into 5-second count/degree bins."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Collection, Iterable, NamedTuple

from .ingest import ArpObservation

BIN_US = 5_000_000
DEGREE_MODES = ("target_ip", "dst_mac")


class InvalidRange(ValueError):
    pass


class HostBin(NamedTuple):
    bin_index: int
    count: int
    degree: int


@dataclass
class HostSequence:
    """Sparse per-host sequence; bins absent from ``bins`` are zero."""

    host_mac: str
    bins: dict[int, HostBin] = field(default_factory=dict)

    @property
    def first_bin(self) -> int:
        return min(self.bins)

    @property
    def last_bin(self) -> int:
        return max(self.bins)

    def densify(self, from_bin: int | None = None, to_bin: int | None = None) -> list[HostBin]:
        return densify(self, self.first_bin if from_bin is None else from_bin,
                       self.last_bin if to_bin is None else to_bin)


def bin_index(timestamp_us: int) -> int:
    return timestamp_us // BIN_US


def bin_observations(
    observations: Iterable[ArpObservation],
    degree_mode: str = "target_ip",
    opcodes: Collection[int] | None = None,
) -> dict[str, HostSequence]:
    """Group observations by source MAC and 5 s epoch-aligned bin.

    ``count`` is the number of packets in the bin; ``degree`` the number of
    distinct destinations, keyed by target IPv4 address or by Ethernet
    destination depending on ``degree_mode``. ``opcodes`` optionally restricts
    which ARP operations are counted.
    """
    if degree_mode not in DEGREE_MODES:
        raise ValueError(f"degree_mode must be one of {DEGREE_MODES}, got {degree_mode!r}")
    by_dst_mac = degree_mode == "dst_mac"
    counts: dict[tuple[str, int], int] = defaultdict(int)
    targets: dict[tuple[str, int], set] = defaultdict(set)
    for obs in observations:
        if opcodes is not None and obs.opcode not in opcodes:
            continue
        key = (obs.src_mac, obs.timestamp_us // BIN_US)
        counts[key] += 1
        targets[key].add(obs.dst_mac if by_dst_mac else obs.target_ip)

    sequences: dict[str, HostSequence] = {}
    for (mac, idx) in sorted(counts):
        seq = sequences.setdefault(mac, HostSequence(mac))
        seq.bins[idx] = HostBin(idx, counts[(mac, idx)], len(targets[(mac, idx)]))
    return sequences


def densify(seq: HostSequence, from_bin: int, to_bin: int) -> list[HostBin]:
    if from_bin > to_bin:
        raise InvalidRange(f"from_bin {from_bin} > to_bin {to_bin}")
    get = seq.bins.get
    return [get(i) or HostBin(i, 0, 0) for i in range(from_bin, to_bin + 1)]


def write_sequences_csv(sequences: dict[str, HostSequence], stream) -> None:
    """Dense ``host_mac,bin_index,count,degree`` rows for plotting."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["host_mac", "bin_index", "count", "degree"])
    for mac in sorted(sequences):
        for b in sequences[mac].densify():
            writer.writerow([mac, b.bin_index, b.count, b.degree])
