"""Dense per-voxel embedding and clustering-based segmentation."""

from dataclasses import dataclass

import numpy as np
import torch
from numpy.lib.stride_tricks import sliding_window_view

from .cluster import ClusterConfig, kmeans
from .errors import CheckpointMismatchError, ConfigError
from .formats import Checkpoint
from .nn import trilinear_resize
from .training import model_from_checkpoint, standardize


@dataclass
class InferenceConfig:
    p: int = 5
    k: int = 7
    stride: int = 1
    batch: int = 1024
    edge_mode: str = "reflect"
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.p % 2 == 0:
            raise ConfigError(f"inference patch edge p must be odd, got {self.p}")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.edge_mode not in ("reflect", "symmetric", "edge"):
            raise ConfigError(f"unsupported edge_mode {self.edge_mode!r}")


def _model(model_or_ckpt):
    if isinstance(model_or_ckpt, Checkpoint):
        return model_from_checkpoint(model_or_ckpt)
    return model_or_ckpt


def embed_volume(volume, model_or_ckpt, cfg):
    """Encode the ``p^3`` patch around every voxel on the stride grid.

    Returns an array of shape ``(ceil(X/s), ceil(Y/s), ceil(Z/s), d)``.
    """
    model = _model(model_or_ckpt)
    vol = np.asarray(volume)
    if vol.ndim != 3 or model.cfg.in_channels != 1:
        raise CheckpointMismatchError(
            f"model expects {model.cfg.in_channels}-channel input, volume has shape {vol.shape}")
    vol = standardize(vol)
    half = cfg.p // 2
    padded = np.pad(vol, half, mode=cfg.edge_mode)
    s = cfg.stride
    windows = sliding_window_view(padded, (cfg.p,) * 3)[::s, ::s, ::s]
    grid = windows.shape[:3]
    flat = windows.reshape(-1, cfg.p, cfg.p, cfg.p)
    m = model.cfg.m
    out = []
    with torch.no_grad():
        for i in range(0, len(flat), cfg.batch):
            chunk = torch.from_numpy(np.ascontiguousarray(flat[i:i + cfg.batch])).float()
            patches = trilinear_resize(chunk.unsqueeze(1), (m, m, m))
            out.append(model.embed(patches).double().numpy())
    return np.concatenate(out).reshape(grid + (model.cfg.d,))


def fill_from_grid(grid_labels, dims, stride):
    """Give every voxel the label of its nearest stride-grid voxel."""
    if stride == 1:
        return grid_labels
    idx = [np.minimum((np.arange(n) + stride // 2) // stride, g - 1)
           for n, g in zip(dims, grid_labels.shape)]
    return grid_labels[np.ix_(*idx)]


def cluster_embeddings(emb, k, hyperbolic=True, seed=0):
    pts = emb.reshape(-1, emb.shape[-1])
    res = kmeans(pts, ClusterConfig(k=k, seed=seed), "poincare" if hyperbolic else "euclidean")
    return res.labels.reshape(emb.shape[:-1])


def _mask_dtype(k):
    return np.uint8 if k <= 256 else np.uint16


def segment(volume, model_or_ckpt, cfg):
    model = _model(model_or_ckpt)
    emb = embed_volume(volume, model, cfg)
    labels = cluster_embeddings(emb, cfg.k, model.cfg.hyperbolic, cfg.seed)
    return fill_from_grid(labels, np.shape(volume), cfg.stride).astype(_mask_dtype(cfg.k))


def segment_per_level(volume, model_or_ckpt, cfg, ks):
    """One embedding pass, one clustering per requested ``k``."""
    model = _model(model_or_ckpt)
    emb = embed_volume(volume, model, cfg)
    return [fill_from_grid(cluster_embeddings(emb, k, model.cfg.hyperbolic, cfg.seed),
                           np.shape(volume), cfg.stride).astype(_mask_dtype(k)) for k in ks]


def segment_pooled(volumes, model_or_ckpt, cfg):
    """Cluster the embeddings of several volumes jointly; returns one mask per volume."""
    model = _model(model_or_ckpt)
    embs = [embed_volume(v, model, cfg) for v in volumes]
    d = embs[0].shape[-1]
    pts = np.concatenate([e.reshape(-1, d) for e in embs])
    res = kmeans(pts, ClusterConfig(k=cfg.k, seed=cfg.seed),
                 "poincare" if model.cfg.hyperbolic else "euclidean")
    masks, start = [], 0
    for v, e in zip(volumes, embs):
        n = int(np.prod(e.shape[:-1]))
        lab = res.labels[start:start + n].reshape(e.shape[:-1])
        start += n
        masks.append(fill_from_grid(lab, np.shape(v), cfg.stride).astype(_mask_dtype(cfg.k)))
    return masks
