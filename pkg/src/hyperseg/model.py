"""3D VAE with a Poincaré-ball (or Euclidean, for ablations) latent space."""

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import torch
from torch import nn

from . import geometry as geo
from . import stats
from .cluster import karcher_flow
from .errors import ConfigError, ShapeError
from .nn import GyroConv3d

LATENTS = ("hyperbolic", "euclidean")
DECODER_FIRST = ("gyro", "conv")

# Table-2 style ablations, expressed as ModelConfig overrides.
PRESETS = {
    "euclidean-base": dict(latent="euclidean", decoder_first="conv", beta=0.0),
    "euclidean-triplet": dict(latent="euclidean", decoder_first="conv", beta=1e3),
    "hyperbolic-base": dict(latent="hyperbolic", decoder_first="conv", beta=0.0),
    "hyperbolic-gyroconv": dict(latent="hyperbolic", decoder_first="gyro", beta=0.0),
    "hyperbolic-triplet": dict(latent="hyperbolic", decoder_first="conv", beta=1e3),
    "hyperbolic-gyroconv-triplet": dict(latent="hyperbolic", decoder_first="gyro", beta=1e3),
}


@dataclass
class ModelConfig:
    m: int = 16
    d: int = 2
    filters: tuple = (16, 32, 64, 128)
    kernel: int = 5
    beta: float = 1e3
    alpha: float = 0.2
    latent: str = "hyperbolic"
    decoder_first: str = "gyro"
    gyro_tied: bool = False
    gyro_skip_padding: bool = False
    in_channels: int = 1
    frechet_iters: int = 10

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        self.validate()

    @property
    def latent_grid(self):
        return self.m // 2 ** len(self.filters)

    def validate(self):
        if self.m < 16 or self.m & (self.m - 1):
            raise ConfigError(f"m must be a power of 2 >= 16, got {self.m}")
        if self.d < 2:
            raise ConfigError(f"latent dimension d must be >= 2, got {self.d}")
        if self.beta < 0 or self.alpha < 0:
            raise ConfigError("beta and alpha must be nonnegative")
        if len(self.filters) != 4:
            raise ConfigError("filters must list four encoder depths")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd")
        if self.latent not in LATENTS:
            raise ConfigError(f"latent must be one of {LATENTS}")
        if self.decoder_first not in DECODER_FIRST:
            raise ConfigError(f"decoder_first must be one of {DECODER_FIRST}")
        if self.decoder_first == "gyro" and self.latent != "hyperbolic":
            raise ConfigError("a gyroplane first decoder layer needs a hyperbolic latent")

    @property
    def hyperbolic(self):
        return self.latent == "hyperbolic"

    def to_dict(self):
        out = asdict(self)
        out["filters"] = list(self.filters)
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})


@dataclass
class LatentState:
    """Per-cell posterior parameters; ``mu`` and ``log_sigma`` are ``(N, cells, d)``."""

    mu: torch.Tensor
    log_sigma: torch.Tensor
    z: Optional[torch.Tensor] = field(default=None)

    @property
    def sigma(self):
        return self.log_sigma.exp()


class HyperbolicVAE(nn.Module):
    def __init__(self, cfg: ModelConfig, generator=None):
        super().__init__()
        self.cfg = cfg
        k, pad = cfg.kernel, cfg.kernel // 2
        chans = (cfg.in_channels,) + cfg.filters
        enc = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            enc += [nn.Conv3d(cin, cout, k, stride=2, padding=pad), nn.ReLU()]
        self.encoder = nn.Sequential(*enc)
        self.mu_head = nn.Conv3d(cfg.filters[-1], cfg.d, 1)
        self.log_sigma_head = nn.Conv3d(cfg.filters[-1], cfg.d, 1)

        if cfg.decoder_first == "gyro":
            self.decoder_first = GyroConv3d(1, cfg.filters[-1], 1, cfg.d, tied=cfg.gyro_tied,
                                            skip_padding=cfg.gyro_skip_padding,
                                            generator=generator)
        else:
            self.decoder_first = nn.Conv3d(cfg.d, cfg.filters[-1], 1)
        dec_chans = cfg.filters[::-1] + (cfg.in_channels,)
        dec = []
        for cin, cout in zip(dec_chans[:-1], dec_chans[1:]):
            dec += [nn.ReLU(), nn.ConvTranspose3d(cin, cout, k, stride=2, padding=pad,
                                                  output_padding=1)]
        self.decoder = nn.Sequential(*dec)

    # -- encoder ---------------------------------------------------------
    def encode(self, x):
        cfg = self.cfg
        if x.dim() != 5 or tuple(x.shape[1:]) != (cfg.in_channels, cfg.m, cfg.m, cfg.m):
            raise ShapeError(f"expected (N, {cfg.in_channels}, {cfg.m}, {cfg.m}, {cfg.m}) patches, got {tuple(x.shape)}")
        h = self.encoder(x)
        mu = self._cells(self.mu_head(h))
        log_sigma = self._cells(self.log_sigma_head(h))
        if cfg.hyperbolic:
            mu = geo.exp_map0(mu)
        return LatentState(mu, log_sigma)

    @staticmethod
    def _cells(t):
        n, d = t.shape[:2]
        return t.permute(0, 2, 3, 4, 1).reshape(n, -1, d)

    def embed(self, x):
        """One latent point per patch: the cell mean (Fréchet mean on the ball)."""
        mu = self.encode(x).mu
        return self.patch_embedding(mu)

    def patch_embedding(self, mu):
        if mu.shape[1] == 1:
            return mu[:, 0]
        if self.cfg.hyperbolic:
            return karcher_flow(mu, iters=self.cfg.frechet_iters)
        return mu.mean(1)

    # -- latent ----------------------------------------------------------
    def posterior(self, latent):
        return stats.WrappedNormal(latent.mu, latent.sigma)

    def prior(self, latent):
        return stats.WrappedNormal(torch.zeros_like(latent.mu), torch.ones_like(latent.mu))

    def sample_latent(self, latent, noise):
        if self.cfg.hyperbolic:
            return stats.sample(self.posterior(latent), noise)
        return latent.mu + latent.sigma * noise

    def kl(self, latent, noises):
        """Per-patch Monte-Carlo KL, averaged over latent cells. ``noises`` is ``(S, N, cells, d)``."""
        if self.cfg.hyperbolic:
            per_cell = stats.kl_mc(self.posterior(latent), self.prior(latent), noises)
        else:
            z = latent.mu + latent.sigma * noises
            per_cell = (stats.gaussian_log_prob(z - latent.mu, latent.sigma)
                        - stats.gaussian_log_prob(z, torch.ones_like(latent.sigma))).mean(0)
        return per_cell.mean(-1)

    # -- decoder ---------------------------------------------------------
    def decode(self, z):
        cfg = self.cfg
        g = cfg.latent_grid
        if z.dim() != 3 or z.shape[1] != g**3 or z.shape[2] != cfg.d:
            raise ShapeError(f"expected latent (N, {g ** 3}, {cfg.d}), got {tuple(z.shape)}")
        return self.decoder(self.first_layer(z))

    def first_layer(self, z):
        g = self.cfg.latent_grid
        grid = z.reshape(z.shape[0], g, g, g, self.cfg.d)
        if self.cfg.decoder_first == "gyro":
            return self.decoder_first(grid.unsqueeze(1))
        return self.decoder_first(grid.permute(0, 4, 1, 2, 3))

    # -- parameter bookkeeping ------------------------------------------
    def ball_parameter_names(self):
        if self.cfg.decoder_first == "gyro":
            return {"decoder_first.p"}
        return set()

    @torch.no_grad()
    def enforce_constraints(self, generator=None):
        if isinstance(self.decoder_first, GyroConv3d):
            self.decoder_first.enforce_constraints(generator)


def reconstruction_nll(patch, recon):
    """Unit-variance Gaussian negative log-likelihood without constants, per patch."""
    return 0.5 * ((patch - recon) ** 2).flatten(1).sum(1)


def elbo_loss(patch, latent, recon, kl_noises, model):
    """Negative ELBO averaged over the batch."""
    return (reconstruction_nll(patch, recon) + model.kl(latent, kl_noises)).mean()


def latent_distance(x, y, hyperbolic=True):
    if hyperbolic:
        return geo.distance(x, y)
    return (x - y).norm(dim=-1)


def triplet_loss(mu_p, mu_pos, mu_neg, alpha, hyperbolic=True):
    """Hinge ``max(0, d(anchor, pos) - d(anchor, neg) + alpha)``, averaged over leading axes."""
    d_pos = latent_distance(mu_p, mu_pos, hyperbolic)
    d_neg = latent_distance(mu_p, mu_neg, hyperbolic)
    return torch.clamp(d_pos - d_neg + alpha, min=0).mean()


def total_loss(elbo, triplet, beta):
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    return elbo + beta * triplet


def forward_losses(model, anchor, positive, negative, noises):
    """Full training objective for a batch of triplet patches.

    ``noises`` has shape ``(S, N, cells, d)``; the first draw also feeds the
    reconstruction path. Returns a dict of scalar tensors plus the anchor latent.
    """
    cfg = model.cfg
    latent = model.encode(anchor)
    z = model.sample_latent(latent, noises[0])
    latent.z = z
    recon = model.decode(z)
    elbo = elbo_loss(anchor, latent, recon, noises, model)
    if cfg.beta > 0:
        mu_p = model.patch_embedding(latent.mu)
        mu_pos = model.embed(positive)
        mu_neg = model.embed(negative)
        trip = triplet_loss(mu_p, mu_pos, mu_neg, cfg.alpha, cfg.hyperbolic)
    else:
        trip = elbo.new_zeros(())
    return {
        "elbo": elbo,
        "triplet": trip,
        "total": total_loss(elbo, trip, cfg.beta),
        "latent": latent,
        "recon": recon,
    }
