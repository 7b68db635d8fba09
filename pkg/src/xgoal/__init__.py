"""Prototypical contrastive learning for multiplex graphs."""

from .cluster import ClusterModel, assign_distribution, kmeans
from .graphdata import MultiplexGraph, SynthSpec, generate_synthetic, load_bundle, save_bundle
from .numkit import Rng
from .objective import LossReport, LossWeights, total_loss
from .trainer import EmbeddingSet, TrainConfig, train, warmup

__all__ = [
    "ClusterModel",
    "EmbeddingSet",
    "LossReport",
    "LossWeights",
    "MultiplexGraph",
    "Rng",
    "SynthSpec",
    "TrainConfig",
    "assign_distribution",
    "generate_synthetic",
    "kmeans",
    "load_bundle",
    "save_bundle",
    "total_loss",
    "train",
    "warmup",
]

__version__ = "0.1.0"
