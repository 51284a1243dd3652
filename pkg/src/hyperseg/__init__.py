"""Hyperbolic representation learning and unsupervised segmentation of 3D volumes."""

from . import cluster, geometry, metrics, model, nn, pipeline, sampler, stats, synthgen
from .model import HyperbolicVAE, ModelConfig
from .training import TrainConfig, train

__all__ = [
    "cluster",
    "geometry",
    "metrics",
    "model",
    "nn",
    "pipeline",
    "sampler",
    "stats",
    "synthgen",
    "HyperbolicVAE",
    "ModelConfig",
    "TrainConfig",
    "train",
]

__version__ = "0.1.0"
