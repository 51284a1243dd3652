"""Training loop: triplet patch batches, the VAE + triplet objective, Adam."""

import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from . import sampler as smp
from .errors import CheckpointMismatchError, ConfigError, EmptyDatasetError, NonFiniteError
from .formats import Checkpoint
from .model import HyperbolicVAE, ModelConfig, forward_losses
from .nn import AdamState, adam_step, backward, trilinear_resize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 8
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    kl_samples: int = 1
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.kl_samples < 1:
            raise ConfigError("epochs, batch_size and kl_samples must be >= 1")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def standardize(volume):
    v = np.asarray(volume, dtype=np.float32)
    std = float(v.std())
    return (v - float(v.mean())) / (std if std > 0 else 1.0)


def patch_tensor(volume, specs, m):
    """Extract cubes and resize each to ``m^3``; returns ``(N, 1, m, m, m)`` float32."""
    out = []
    for spec in specs:
        patch = torch.from_numpy(np.ascontiguousarray(smp.extract(volume, spec)))
        out.append(trilinear_resize(patch[None], (m, m, m)))
    return torch.stack(out).float()


def checkpoint_from_model(model, adam, train_cfg, sampler_cfg, seed):
    config = {
        "model": model.cfg.to_dict(),
        "train": asdict(train_cfg),
        "sampler": sampler_cfg.to_dict(),
    }
    params = OrderedDict((k, v.detach().clone()) for k, v in model.named_parameters())
    opt = OrderedDict()
    opt["adam.step"] = torch.tensor(float(adam.step))
    for k in params:
        if k in adam.m:
            opt[f"adam.m.{k}"] = adam.m[k].detach().clone()
            opt[f"adam.v.{k}"] = adam.v[k].detach().clone()
    return Checkpoint(config, params, opt, seed)


def model_from_checkpoint(ckpt):
    try:
        cfg = ModelConfig.from_dict(ckpt.config["model"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointMismatchError(f"checkpoint has no usable model config: {exc}") from exc
    model = HyperbolicVAE(cfg)
    expected = dict(model.named_parameters())
    if set(expected) != set(ckpt.params):
        raise CheckpointMismatchError("checkpoint parameter names do not match the model")
    for name, t in ckpt.params.items():
        if tuple(t.shape) != tuple(expected[name].shape):
            raise CheckpointMismatchError(
                f"{name}: checkpoint shape {tuple(t.shape)} != model shape {tuple(expected[name].shape)}")
    model.load_state_dict(ckpt.params)
    model.eval()
    return model


def adam_from_checkpoint(ckpt):
    t = ckpt.config.get("train", {})
    state = AdamState(lr=t.get("lr", 1e-4), beta1=t.get("beta1", 0.9),
                      beta2=t.get("beta2", 0.999), eps=t.get("adam_eps", 1e-8))
    state.step = int(ckpt.optimizer.get("adam.step", torch.tensor(0.0)).item())
    for k, v in ckpt.optimizer.items():
        if k.startswith("adam.m."):
            state.m[k[len("adam.m."):]] = v.clone()
        elif k.startswith("adam.v."):
            state.v[k[len("adam.v."):]] = v.clone()
    return state


def train(volumes, model_cfg, train_cfg, sampler_cfg=None, loss_log=None):
    """Train a model on a list of 3D arrays.

    ``loss_log`` may be a writable text file receiving JSON-lines records
    ``{epoch, step, elbo, triplet, total}``. Returns ``(checkpoint, history)``
    where ``history`` holds per-epoch mean losses.
    """
    if len(volumes) == 0:
        raise EmptyDatasetError("training needs at least one volume")
    vols = [standardize(v) if train_cfg.standardize else np.asarray(v, np.float32)
            for v in volumes]
    dims = vols[0].shape
    if sampler_cfg is None:
        sampler_cfg = smp.SamplerConfig.for_volume(dims)
    for v in vols:
        sampler_cfg.check_volume(v.shape)

    seed = train_cfg.seed
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = HyperbolicVAE(model_cfg, generator=gen)
    model.train()
    params = OrderedDict(model.named_parameters())
    adam = AdamState(lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                     eps=train_cfg.adam_eps)
    ball = model.ball_parameter_names()
    m, d, cells = model_cfg.m, model_cfg.d, model_cfg.latent_grid**3

    history = []
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        triplets = [(vi,) + smp.sample_triplet(vols[vi].shape, sampler_cfg, rng)
                    for vi in range(len(vols)) for _ in range(sampler_cfg.anchors_per_volume)]
        order = rng.permutation(len(triplets))
        sums = {"elbo": 0.0, "triplet": 0.0, "total": 0.0}
        n_batches = 0
        for b0 in range(0, len(order), train_cfg.batch_size):
            batch = [triplets[i] for i in order[b0:b0 + train_cfg.batch_size]]
            anchor = torch.cat([patch_tensor(vols[vi], [a], m) for vi, a, _, _ in batch])
            pos = torch.cat([patch_tensor(vols[vi], [p], m) for vi, _, p, _ in batch])
            neg = torch.cat([patch_tensor(vols[vi], [n], m) for vi, _, _, n in batch])
            noises = torch.randn((train_cfg.kl_samples, len(batch), cells, d), generator=gen)

            out = forward_losses(model, anchor, pos, neg, noises)
            total = out["total"]
            if not torch.isfinite(total):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"elbo={out['elbo'].item()} triplet={out['triplet'].item()}")
            if model_cfg.latent == "hyperbolic":
                radius = float(out["latent"].mu.detach().norm(dim=-1).max())
                if radius >= 1.0:
                    raise NonFiniteError(f"latent mean left the ball (norm {radius})")
            model.zero_grad(set_to_none=True)
            backward(total)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adam_step(params, grads, adam, ball_params=ball)
            model.enforce_constraints(gen)

            step += 1
            n_batches += 1
            rec = {"epoch": epoch, "step": step, "elbo": out["elbo"].item(),
                   "triplet": out["triplet"].item(), "total": total.item()}
            for k in sums:
                sums[k] += rec[k]
            if loss_log is not None:
                loss_log.write(json.dumps(rec) + "\n")
        means = {k: v / n_batches for k, v in sums.items()}
        means["epoch"] = epoch
        history.append(means)
        log.info("epoch %d: total %.4f elbo %.4f triplet %.4f", epoch, means["total"],
                 means["elbo"], means["triplet"])

    model.eval()
    return checkpoint_from_model(model, adam, train_cfg, sampler_cfg, seed), history
