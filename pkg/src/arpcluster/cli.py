"""Command-line entry point: ``arpcluster <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline, synth
from .ingest import IngestError
from .pipeline import ConfigError, PipelineConfig


def _opcodes(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError("opcodes must be a comma-separated list like 1,2")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline config; flags override it")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _pipeline_flags(p: argparse.ArgumentParser, stages: set[str]) -> None:
    if "ingest" in stages:
        p.add_argument("--input", action="append", metavar="PATH",
                       help="capture or record file (repeatable)")
        p.add_argument("--format", choices=["pcap", "records"], default=None,
                       help="format of every --input (default: pcap)")
    if "detect" in stages:
        p.add_argument("--degree-mode", choices=["target_ip", "dst_mac"])
        p.add_argument("--opcodes", type=_opcodes, help="ARP opcodes to count, e.g. 1")
        p.add_argument("--min-threshold", type=float, help="threshold floor (default 128)")
        p.add_argument("--window", type=int, help="event length in 5 s bins (default 60)")
        p.add_argument("--export-sequences", action="store_true", default=None)
    if "train" in stages:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", dest="learning_rate", type=float)
        p.add_argument("--no-cv", dest="cross_validate", action="store_false", default=None,
                       help="skip the 5-fold loss report")
    if "cluster" in stages:
        p.add_argument("--k", type=int)
        p.add_argument("--split", help="auto, none, or a top-level cluster index")


STAGES = {
    "ingest": {"ingest"},
    "detect": {"detect"},
    "featurize": set(),
    "train": {"train"},
    "cluster": {"cluster"},
    "run": {"ingest", "detect", "train", "cluster"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arpcluster",
        description="Detect suspicious ARP activity and cluster it with an autoencoder + K-means.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run every stage end to end",
        "ingest": "decode inputs into canonical record files",
        "detect": "bin, threshold and extract 300 s events",
        "featurize": "turn events into normalized 120-item vectors",
        "train": "train the autoencoder and export latents",
        "cluster": "progressive K-means over latents",
    }
    for name, stages in STAGES.items():
        p = sub.add_parser(name, help=helps[name])
        _common(p)
        _pipeline_flags(p, stages)

    p = sub.add_parser("synth", help="generate labelled synthetic ARP traffic")
    p.add_argument("--spec", required=True, help="JSON list of pattern specs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["pcap", "records"], default="pcap")
    p.add_argument("--out", required=True, help="output capture/record file")
    p.add_argument("--labels", help="also write ground-truth labels (JSON) here")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {k: getattr(args, k, None) for k in (
        "out", "seed", "degree_mode", "opcodes", "min_threshold", "window", "export_sequences",
        "epochs", "batch_size", "learning_rate", "cross_validate", "k", "split")}
    if getattr(args, "input", None):
        overrides["inputs"] = [{"path": p, "format": args.format or "pcap"} for p in args.input]
    elif getattr(args, "format", None):
        overrides["inputs"] = [{**vars(s), "format": args.format} for s in config.inputs]
    return config.with_overrides(**overrides)


def _synth(args) -> int:
    with open(args.spec) as fh:
        specs = synth.load_specs(fh)
    observations, labels = synth.generate(specs, args.seed)
    synth.emit(observations, args.format, args.out)
    if args.labels:
        with open(args.labels, "w") as fh:
            json.dump([vars(lb) for lb in labels], fh, indent=1)
    logging.getLogger(__name__).info("wrote %d observations, %d labelled episodes",
                                     len(observations), len(labels))
    return pipeline.EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _synth(args)
        config = _config(args)
        config.validate(need_inputs=args.command in ("run", "ingest"))
        if args.command == "run":
            return pipeline.run(config)
        if args.command == "detect":
            events = pipeline.stage_detect(config)
            return pipeline.EXIT_OK if events else pipeline.EXIT_NO_EVENTS
        stage = {"ingest": pipeline.stage_ingest, "featurize": pipeline.stage_featurize,
                 "train": pipeline.stage_train, "cluster": pipeline.stage_cluster}
        stage[args.command](config)
        return pipeline.EXIT_OK
    except (ConfigError, IngestError, ValueError, OSError) as exc:
        print(f"arpcluster: error: {exc}", file=sys.stderr)
        return pipeline.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
