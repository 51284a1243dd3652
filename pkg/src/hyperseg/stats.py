"""Wrapped normal distribution on the Poincaré ball."""

import math
from dataclasses import dataclass

import torch

from . import geometry as geo


@dataclass
class WrappedNormal:
    """Push-forward of ``N(0, diag(sigma^2))`` through the exponential map at ``mu``.

    ``mu`` and ``sigma`` share a shape ``(..., d)``; leading axes index
    independent distributions.
    """

    mu: torch.Tensor
    sigma: torch.Tensor

    @property
    def dim(self):
        return self.mu.shape[-1]

    @classmethod
    def standard(cls, d, dtype=torch.float64, batch_shape=()):
        shape = tuple(batch_shape) + (d,)
        return cls(torch.zeros(shape, dtype=dtype), torch.ones(shape, dtype=dtype))


def sample(dist, noise):
    """Reparameterized draw; differentiable in ``dist.mu`` and ``dist.sigma``."""
    v = dist.sigma * noise
    u = v / geo.conformal_factor(dist.mu)
    return geo.exp_map(dist.mu, u)


def _log_r_over_sinh(r):
    small = r < 1e-4
    r_safe = torch.where(small, torch.ones_like(r), r)
    return torch.where(small, -r * r / 6.0, torch.log(r_safe) - torch.log(torch.sinh(r_safe)))


def gaussian_log_prob(v, sigma):
    """Log density of ``N(0, diag(sigma^2))`` at ``v``, summed over the last axis."""
    d = v.shape[-1]
    return (
        -0.5 * ((v / sigma) ** 2).sum(-1)
        - torch.log(sigma).sum(-1)
        - 0.5 * d * math.log(2 * math.pi)
    )


def log_prob(dist, z):
    """Log density with respect to the Riemannian volume of the ball."""
    d = dist.dim
    v = geo.conformal_factor(dist.mu) * geo.log_map(dist.mu, z)
    r = geo.distance(dist.mu, z)
    return gaussian_log_prob(v, dist.sigma) + (d - 1) * _log_r_over_sinh(r)


def kl_mc(posterior, prior, noises):
    """Monte-Carlo KL(posterior || prior) averaged over the leading axis of ``noises``."""
    noises = torch.as_tensor(noises, dtype=posterior.mu.dtype)
    if noises.dim() == posterior.mu.dim():
        noises = noises.unsqueeze(0)
    z = sample(posterior, noises)
    return (log_prob(posterior, z) - log_prob(prior, z)).mean(0)
