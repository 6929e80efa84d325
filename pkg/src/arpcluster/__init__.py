"""Suspicious ARP activity detection and clustering.

Pipeline: ARP observations are binned per host into 5 s count/degree
sequences, a per-host dynamic threshold picks out 300 s suspicious events,
each event becomes a 120-item normalized feature vector, a small autoencoder
compresses those to 3-D latents, and progressive K-means groups the latents.
"""
from .autoencoder import AutoencoderParams, LatentPoint, TrainReport, encode_all, train
from .binning import HostBin, HostSequence, bin_observations, densify
from .clustering import ClusterModel, ClusterTree, kmeans, progressive_cluster, representatives
from .detection import SuspiciousEvent, compute_threshold, detect_onsets, extract_events
from .features import FeatureVector, build_feature, normalize
from .ingest import ArpObservation, IngestStats, parse_pcap, parse_records
from .pipeline import PipelineConfig, run

__version__ = "0.1.0"
