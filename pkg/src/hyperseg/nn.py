"""Differentiable building blocks: 3D convolutions, gyroplane convolution, resizing, Adam.

Reverse-mode differentiation is delegated to torch autograd; this module adds
the shape contracts, the hyperbolic convolution and an explicit-state Adam
that knows about ball-constrained parameters.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import geometry as geo
from .errors import ShapeError


def set_deterministic(threads=1):
    """Single-threaded, deterministic kernels for bit-reproducible runs."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def backward(loss):
    if loss.numel() != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def _batched(x, spatial_rank):
    if x.dim() == spatial_rank + 1:
        return x.unsqueeze(0), True
    if x.dim() == spatial_rank + 2:
        return x, False
    raise ShapeError(f"expected {spatial_rank + 1}D or {spatial_rank + 2}D input, got {x.dim()}D")


def conv3d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``(C_in, D, H, W)`` or ``(N, C_in, D, H, W)`` input."""
    x, squeeze = _batched(x, 3)
    if weight.dim() != 5 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"weight {tuple(weight.shape)} incompatible with input {tuple(x.shape)}")
    k = weight.shape[2:]
    for n, kk in zip(x.shape[2:], k):
        if _out_size(n, kk, stride, padding) < 1:
            raise ShapeError(f"kernel {tuple(k)} does not fit input {tuple(x.shape[2:])}")
    out = F.conv3d(x, weight, bias, stride=stride, padding=padding)
    return out[0] if squeeze else out


def conv_transpose3d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    x, squeeze = _batched(x, 3)
    if weight.dim() != 5 or weight.shape[0] != x.shape[1]:
        raise ShapeError(f"weight {tuple(weight.shape)} incompatible with input {tuple(x.shape)}")
    out = F.conv_transpose3d(
        x, weight, bias, stride=stride, padding=padding, output_padding=output_padding
    )
    return out[0] if squeeze else out


def gyro_conv(x, a, p, kernel_size=None, stride=1, padding=0, skip_padding=False):
    """Gyroplane convolution of ball-valued input.

    ``x`` has shape ``(N, C_in, D, H, W, d)`` (or without the batch axis); each
    entry along the last axis is a point of the ball. ``a`` and ``p`` have shape
    ``(C_out, C_in, k, k, k, d)``; a kernel extent of 1 broadcasts one shared
    ``(a, p)`` across the window. Padded taps sit at the origin, or contribute
    nothing when ``skip_padding`` is set. Returns ``(N, C_out, D', H', W')``.
    """
    if x.dim() == 5:
        return gyro_conv(x.unsqueeze(0), a, p, kernel_size, stride, padding, skip_padding)[0]
    if x.dim() != 6:
        raise ShapeError(f"gyro_conv input must be (N, C_in, D, H, W, d), got {tuple(x.shape)}")
    if a.dim() != 6 or a.shape != p.shape:
        raise ShapeError("gyro_conv parameters a and p must share shape (C_out, C_in, k, k, k, d)")
    n, c_in, *spatial, d = x.shape
    if a.shape[1] != c_in or a.shape[-1] != d:
        raise ShapeError(f"parameters {tuple(a.shape)} incompatible with input {tuple(x.shape)}")
    k = kernel_size if kernel_size is not None else a.shape[2]
    if a.shape[2:5] not in ((k, k, k), (1, 1, 1)):
        raise ShapeError(f"parameter kernel extent {tuple(a.shape[2:5])} != kernel_size {k}")
    if any(_out_size(s, k, stride, padding) < 1 for s in spatial):
        raise ShapeError(f"kernel {k} does not fit input {tuple(spatial)}")

    valid = None
    if padding:
        x = F.pad(x, (0, 0) + (padding, padding) * 3)
        if skip_padding:
            valid = F.pad(x.new_ones(spatial), (padding, padding) * 3)
    # (N, C_in, D', H', W', d, k, k, k) -> (N, C_in, D', H', W', k, k, k, d)
    win = x.unfold(2, k, stride).unfold(3, k, stride).unfold(4, k, stride)
    win = win.permute(0, 1, 2, 3, 4, 6, 7, 8, 5)
    win = win.unsqueeze(1)  # broadcast over C_out
    ap_shape = (1, a.shape[0], c_in, 1, 1, 1) + tuple(a.shape[2:5]) + (d,)
    f = geo.gyroplane(a.reshape(ap_shape), p.reshape(ap_shape), win)
    if valid is not None:
        vw = valid.unfold(0, k, stride).unfold(1, k, stride).unfold(2, k, stride)
        f = f * vw
    return f.sum(dim=(2, 6, 7, 8))


class GyroConv3d(nn.Module):
    """Module wrapper holding per-(C_out, C_in, tap) gyroplane normals ``a`` and offsets ``p``."""

    def __init__(self, in_channels, out_channels, kernel_size, d, stride=1, padding=0,
                 tied=False, skip_padding=False, generator=None):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.skip_padding = skip_padding
        kk = 1 if tied else kernel_size
        shape = (out_channels, in_channels, kk, kk, kk, d)
        fan_in = in_channels * kernel_size**3
        a = torch.randn(shape, generator=generator) * (2.0 / (fan_in * d)) ** 0.5 / fan_in
        p = geo.exp_map0(0.01 * torch.randn(shape, generator=generator))
        self.a = nn.Parameter(a)
        self.p = nn.Parameter(p.to(a.dtype))

    def forward(self, x):
        return gyro_conv(x, self.a, self.p, self.kernel_size, self.stride, self.padding,
                         self.skip_padding)

    @torch.no_grad()
    def enforce_constraints(self, generator=None):
        self.p.copy_(geo.project_to_ball(self.p))
        small = self.a.norm(dim=-1) < 1e-12
        if bool(small.any()):
            noise = 1e-6 * torch.randn(self.a.shape, generator=generator, dtype=self.a.dtype)
            self.a[small] = self.a[small] + noise[small]


def trilinear_resize(x, target):
    """Corner-aligned trilinear resampling of ``(C, D, H, W)`` or ``(N, C, D, H, W)`` data."""
    is_numpy = isinstance(x, np.ndarray)
    t = torch.from_numpy(x) if is_numpy else x
    t, squeeze = _batched(t, 3)
    target = tuple(int(s) for s in target)
    if any(s < 1 for s in target):
        raise ShapeError(f"target dims must be >= 1, got {target}")
    if tuple(t.shape[2:]) == target:
        out = t.clone()
    else:
        out = F.interpolate(t, size=target, mode="trilinear", align_corners=True)
    out = out[0] if squeeze else out
    return out.numpy() if is_numpy else out


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adam_step(params, grads, state, ball_params=()):
    """Bias-corrected Adam update applied in place to the tensors in ``params``.

    ``params`` and ``grads`` are dicts keyed by parameter name; names listed in
    ``ball_params`` are re-projected into the ball after the update.
    """
    state.step += 1
    bc1 = 1 - state.beta1**state.step
    bc2 = 1 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = torch.zeros_like(p)
            v = torch.zeros_like(p)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p -= state.lr * (m / bc1) / ((v / bc2).sqrt() + state.eps)
        if name in ball_params:
            p.copy_(geo.project_to_ball(p))
    return params, state
