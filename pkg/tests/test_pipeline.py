import math

import numpy as np
import pytest
import torch

from hyperseg import geometry as geo
from hyperseg.errors import ConfigError
from hyperseg.model import HyperbolicVAE, ModelConfig
from hyperseg.nn import AdamState, trilinear_resize
from hyperseg.pipeline import (InferenceConfig, embed_volume, fill_from_grid, segment,
                               segment_per_level, segment_pooled)
from hyperseg.sampler import SamplerConfig
from hyperseg.training import TrainConfig, checkpoint_from_model, standardize


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return HyperbolicVAE(ModelConfig(), generator=torch.Generator().manual_seed(0)).eval()


@pytest.fixture(scope="module")
def volume():
    rng = np.random.default_rng(0)
    vol = rng.normal(size=(11, 12, 13)).astype(np.float32)
    vol[3:8, 3:8, 3:9] += 3.0
    return vol


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_embedding_grid_dims_and_ball(model, volume, stride):
    emb = embed_volume(volume, model, InferenceConfig(stride=stride))
    assert emb.shape == tuple(math.ceil(n / stride) for n in volume.shape) + (2,)
    assert np.linalg.norm(emb, axis=-1).max() < 1 - geo.EPS_BALL


def test_embedding_matches_manual_patch(model, volume):
    cfg = InferenceConfig(p=5, stride=2)
    emb = embed_volume(volume, model, cfg)
    padded = np.pad(standardize(volume), 2, mode="reflect")
    for (i, j, l) in [(0, 0, 0), (4, 2, 6), (10, 10, 12)]:  # voxels on the stride grid
        patch = torch.from_numpy(np.ascontiguousarray(padded[i:i + 5, j:j + 5, l:l + 5]))
        x = trilinear_resize(patch[None, None].float(), (16, 16, 16))
        with torch.no_grad():
            want = model.embed(x)[0].double().numpy()
        assert np.allclose(emb[i // 2, j // 2, l // 2], want, atol=1e-6)


def test_constant_volume_gives_identical_embeddings(model):
    emb = embed_volume(np.full((6, 6, 6), 4.2, np.float32), model, InferenceConfig())
    assert np.all(emb == emb[0, 0, 0])


def test_batch_size_does_not_change_embeddings(model, volume):
    a = embed_volume(volume, model, InferenceConfig(stride=2, batch=7))
    b = embed_volume(volume, model, InferenceConfig(stride=2, batch=4096))
    assert np.allclose(a, b, atol=1e-6)


def test_fill_from_grid_nearest():
    grid = np.arange(3 * 2 * 2).reshape(3, 2, 2)
    full = fill_from_grid(grid, (6, 4, 3), 2)
    assert full.shape == (6, 4, 3)
    for idx in np.ndindex(*full.shape):
        near = tuple(min(int(round(i / 2 + 1e-9)), g - 1) for i, g in zip(idx, grid.shape))
        assert full[idx] == grid[near]
    assert fill_from_grid(grid, grid.shape, 1) is grid


def test_segment_labels_and_dims(model, volume):
    mask = segment(volume, model, InferenceConfig(k=4, stride=2))
    assert mask.shape == volume.shape and mask.dtype == np.uint8
    assert mask.min() >= 0 and mask.max() < 4
    assert set(np.unique(segment(volume, model, InferenceConfig(k=1, stride=2)))) == {0}


def test_segment_deterministic(model, volume):
    cfg = InferenceConfig(k=3, stride=2, seed=5)
    assert np.array_equal(segment(volume, model, cfg), segment(volume, model, cfg))


def test_occupied_labels_bounded_by_k(model, volume):
    masks = segment_per_level(volume, model, InferenceConfig(stride=2), [2, 3, 4, 5])
    for k, m in zip([2, 3, 4, 5], masks):
        assert len(np.unique(m)) <= k


def test_segment_from_checkpoint_matches_model(model, volume):
    ck = checkpoint_from_model(model, AdamState(), TrainConfig(), SamplerConfig(), 0)
    cfg = InferenceConfig(k=3, stride=3)
    assert np.array_equal(segment(volume, ck, cfg), segment(volume, model, cfg))


def test_pooled_segmentation(model, volume):
    masks = segment_pooled([volume, volume[:, :, :9]], model, InferenceConfig(k=3, stride=3))
    assert [m.shape for m in masks] == [volume.shape, volume[:, :, :9].shape]
    twins = segment_pooled([volume, volume.copy()], model, InferenceConfig(k=3, stride=3))
    assert np.array_equal(twins[0], twins[1])


def test_inference_config_validation():
    for bad in (dict(p=4), dict(p=0), dict(stride=0), dict(edge_mode="wrap")):
        with pytest.raises(ConfigError):
            InferenceConfig(**bad)
