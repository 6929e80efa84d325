"""End-to-end orchestration: ingest -> detect -> featurize -> train -> cluster.

Every stage reads its inputs from, and writes its outputs to, one output
directory, so running the stages one by one produces exactly the files that
a single :func:`run` produces.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autoencoder, binning, clustering, detection, features, ingest
from ._io import atomic_write

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_EVENTS = 2

INGEST_MANIFEST = "ingest.json"
EVENTS = "events.json"
SUMMARY = "summary.json"
SEQUENCES = "sequences.csv"
FEATURES = "features.csv"
MODEL = "model.json"
TRAIN_REPORT = "train_report.csv"
LATENTS = "latents.csv"
CLUSTERS = "clusters.json"
ASSIGNMENTS = "assignments.csv"


class ConfigError(ValueError):
    pass


@dataclass
class InputSource:
    path: str
    format: str = "pcap"
    name: str | None = None


@dataclass
class PipelineConfig:
    inputs: list[InputSource] = field(default_factory=list)
    degree_mode: str = "target_ip"
    opcodes: list[int] | None = None
    min_threshold: float = detection.THRESHOLD_FLOOR
    window: int = detection.WINDOW_BINS
    seed: int = 0
    epochs: int = autoencoder.EPOCHS
    batch_size: int = autoencoder.BATCH_SIZE
    learning_rate: float = autoencoder.LEARNING_RATE
    cross_validate: bool = True
    k: int = clustering.TOP_K
    split: str | int = "auto"
    export_sequences: bool = False
    out: str = "out"

    def __post_init__(self):
        self.inputs = [s if isinstance(s, InputSource) else InputSource(**s) for s in self.inputs]

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc

    def with_overrides(self, **overrides) -> "PipelineConfig":
        merged = asdict(self)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig.from_dict(merged)

    def validate(self, need_inputs: bool = True) -> None:
        if need_inputs and not self.inputs:
            raise ConfigError("no input files given")
        for src in self.inputs:
            if src.format not in ("pcap", "records"):
                raise ConfigError(f"{src.path}: format must be pcap or records")
        if self.degree_mode not in binning.DEGREE_MODES:
            raise ConfigError(f"degree_mode must be one of {binning.DEGREE_MODES}")
        if self.opcodes is not None and not set(self.opcodes) <= {1, 2}:
            raise ConfigError("opcodes may only contain 1 (request) and 2 (reply)")
        if self.window < 1:
            raise ConfigError("window must be at least one bin")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        if self.k < 1:
            raise ConfigError("k must be positive")
        if not (self.split in ("auto", "none") or _is_int(self.split)):
            raise ConfigError("split must be 'auto', 'none' or a cluster index")
        if _is_int(self.split) and not 0 <= int(self.split) < self.k:
            raise ConfigError(f"split index must lie in 0..{self.k - 1}")


def _is_int(value) -> bool:
    try:
        int(value)
    except (TypeError, ValueError):
        return False
    return True


def _source_names(inputs: Sequence[InputSource]) -> list[str]:
    names, seen = [], set()
    for i, src in enumerate(inputs):
        name = src.name or Path(src.path).stem
        if name in seen:
            name = f"{name}-{i}"
        seen.add(name)
        names.append(name)
    return names


def _write_json(path, obj) -> None:
    atomic_write(path, lambda fh: (json.dump(obj, fh, indent=1, sort_keys=True), fh.write("\n")))


# --------------------------------------------------------------------------
# stages


def stage_ingest(config: PipelineConfig) -> dict:
    """Decode every input into a canonical record file under the output directory."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for name, src in zip(_source_names(config.inputs), config.inputs):
        observations, stats = ingest.read_file(src.path, src.format)
        log.info("%s: %d ARP observations (%s)", src.path, len(observations), stats)
        records = f"observations-{name}.txt"
        atomic_write(out / records, lambda fh: ingest.write_records(observations, fh))
        manifest.append({"source": name, "path": str(src.path), "format": src.format,
                         "records": records, "stats": asdict(stats)})
    doc = {"sources": manifest}
    _write_json(out / INGEST_MANIFEST, doc)
    return doc


def summarize(events: Sequence[detection.SuspiciousEvent],
              sequences: dict[str, dict[str, binning.HostSequence]]) -> dict:
    """Per-source host/pattern totals shaped like a data-set profile table."""
    rows = []
    events_per_host: dict[str, int] = {}
    for source, seqs in sequences.items():
        evs = [e for e in events if e.source == source]
        hosts_with_events = sorted({e.host_mac for e in evs})
        for e in evs:
            key = f"{source}/{e.host_mac}"
            events_per_host[key] = events_per_host.get(key, 0) + 1
        rows.append({"source": source, "total_hosts": len(seqs),
                     "suspicious_hosts": len(hosts_with_events), "patterns": len(evs),
                     **_peak_means(evs)})
    totals = {"total_hosts": sum(r["total_hosts"] for r in rows),
              "suspicious_hosts": sum(r["suspicious_hosts"] for r in rows),
              "patterns": len(events), **_peak_means(events)}
    return {"sources": rows, "totals": totals, "events_per_host": events_per_host}


def _peak_means(events) -> dict:
    if not events:
        return {"mean_peak_count": None, "mean_peak_degree": None}
    peaks = np.array([[max(c for c, _ in e.bins), max(d for _, d in e.bins)] for e in events],
                     dtype=np.float64)
    return {"mean_peak_count": float(peaks[:, 0].mean()),
            "mean_peak_degree": float(peaks[:, 1].mean())}


def stage_detect(config: PipelineConfig) -> list[detection.SuspiciousEvent]:
    out = Path(config.out)
    with open(out / INGEST_MANIFEST) as fh:
        manifest = json.load(fh)
    events: list[detection.SuspiciousEvent] = []
    sequences: dict[str, dict[str, binning.HostSequence]] = {}
    for src in manifest["sources"]:
        with open(out / src["records"]) as fh:
            observations, _ = ingest.parse_records(fh)
        seqs = binning.bin_observations(observations, config.degree_mode, config.opcodes)
        sequences[src["source"]] = seqs
        events.extend(detection.detect_all(seqs, config.min_threshold, config.window,
                                           source=src["source"]))
    atomic_write(out / EVENTS, lambda fh: detection.write_events_json(events, fh))
    _write_json(out / SUMMARY, summarize(events, sequences))
    if config.export_sequences:
        def write_all(fh):
            for name, seqs in sequences.items():
                binning.write_sequences_csv(
                    {f"{name}/{mac}": s for mac, s in seqs.items()}, fh)
        atomic_write(out / SEQUENCES, write_all)
    log.info("detected %d suspicious events", len(events))
    return events


def stage_featurize(config: PipelineConfig) -> list[features.FeatureVector]:
    out = Path(config.out)
    with open(out / EVENTS) as fh:
        events = detection.read_events_json(fh)
    if any(len(e.bins) != features.WINDOW for e in events):
        raise ConfigError(f"feature vectors need {features.WINDOW}-bin events")
    vectors = features.featurize(events)
    atomic_write(out / FEATURES, lambda fh: features.write_features_csv(vectors, fh))
    return vectors


def stage_train(config: PipelineConfig) -> list[autoencoder.LatentPoint]:
    out = Path(config.out)
    with open(out / FEATURES) as fh:
        vectors = features.read_features_csv(fh)
    params, report = autoencoder.train(vectors, config.seed, config.epochs, config.batch_size,
                                       config.learning_rate,
                                       cross_validate=config.cross_validate)
    latents = autoencoder.encode_all(params, vectors)
    atomic_write(out / MODEL, lambda fh: autoencoder.save_model(params, fh, report.seed))
    atomic_write(out / TRAIN_REPORT, report.write_csv)
    atomic_write(out / LATENTS, lambda fh: autoencoder.write_latents_csv(latents, fh))
    return latents


def stage_cluster(config: PipelineConfig) -> clustering.ClusterTree:
    out = Path(config.out)
    with open(out / LATENTS) as fh:
        latents = autoencoder.read_latents_csv(fh)
    split = config.split if config.split in ("auto", "none") else int(config.split)
    tree = clustering.progressive_cluster(latents, split, config.seed, k=config.k)
    atomic_write(out / CLUSTERS, lambda fh: clustering.write_cluster_json(tree, fh))
    atomic_write(out / ASSIGNMENTS, lambda fh: clustering.write_assignments_csv(tree, fh))
    return tree


_DOWNSTREAM = (FEATURES, MODEL, TRAIN_REPORT, LATENTS, CLUSTERS, ASSIGNMENTS)


def run(config: PipelineConfig) -> int:
    """Run every stage; returns a process exit status."""
    config.validate()
    stage_ingest(config)
    events = stage_detect(config)
    if not events:
        # stale outputs from an earlier run would contradict the summary
        for name in _DOWNSTREAM:
            path = os.path.join(config.out, name)
            if os.path.exists(path):
                os.unlink(path)
        log.warning("no suspicious events detected; skipping downstream stages")
        return EXIT_NO_EVENTS
    stage_featurize(config)
    stage_train(config)
    stage_cluster(config)
    return EXIT_OK
