"""Poincaré-ball primitives.

All functions operate on torch tensors whose last axis holds the ball
coordinates; leading axes broadcast. Curvature ``c`` is the magnitude of the
(negative) sectional curvature, so ``c=1`` is the unit ball and ``c=0`` falls
back to Euclidean vector operations.
"""

import torch

from .errors import DimensionError, NonFiniteError, ZeroNormalError

EPS_BALL = 1e-5
ARTANH_CLAMP = 1.0 - 1e-12
MIN_NORM = 1e-15


def as_points(x, dtype=torch.float64):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=dtype)


def _check_dims(*xs):
    d = xs[0].shape[-1]
    for x in xs[1:]:
        if x.shape[-1] != d:
            raise DimensionError(f"latent dimension mismatch: {d} vs {x.shape[-1]}")


def _sqnorm(x):
    return (x * x).sum(dim=-1, keepdim=True)


def _norm(x):
    # clamp keeps the gradient finite (zero) at the origin
    return _sqnorm(x).clamp_min(MIN_NORM**2).sqrt()


def artanh(t):
    t = t.clamp(-ARTANH_CLAMP, ARTANH_CLAMP)
    return 0.5 * (torch.log1p(t) - torch.log1p(-t))


def project_to_ball(x, eps_ball=EPS_BALL, c=1.0):
    """Rescale points whose norm exceeds ``(1 - eps_ball)/sqrt(c)`` onto that sphere."""
    x = as_points(x)
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteError("non-finite coordinates passed to project_to_ball")
    if c == 0:
        return x
    maxnorm = (1.0 - eps_ball) / c**0.5
    norm = _norm(x)
    scale = torch.where(norm > maxnorm, maxnorm / norm, torch.ones_like(norm))
    return x * scale


def conformal_factor(x, c=1.0):
    x = as_points(x)
    return 2.0 / (1.0 - c * _sqnorm(x))


def _mobius_add(x, y, c=1.0):
    xy = (x * y).sum(dim=-1, keepdim=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    den = 1 + 2 * c * xy + c**2 * x2 * y2
    return num / den


def mobius_add(x, y, c=1.0):
    x, y = as_points(x), as_points(y)
    _check_dims(x, y)
    out = _mobius_add(x, y, c)
    return project_to_ball(out, c=c) if c > 0 else out


def mobius_scalar_mul(r, x, c=1.0):
    x = as_points(x)
    r = torch.as_tensor(r, dtype=x.dtype)
    if r.dim() > 0:
        r = r.unsqueeze(-1)
    if c == 0:
        return r * x
    sc = c**0.5
    norm = _norm(x)
    out = torch.tanh(r * artanh(sc * norm)) * x / (sc * norm)
    out = torch.where(_sqnorm(x) < MIN_NORM**2, torch.zeros_like(out), out)
    return project_to_ball(out, c=c)


def distance(x, y, c=1.0):
    """Geodesic distance, returned with the last axis reduced."""
    x, y = as_points(x), as_points(y)
    _check_dims(x, y)
    sc = c**0.5
    sq = _sqnorm(x - y)
    den = ((1 - c * _sqnorm(x)) * (1 - c * _sqnorm(y))).sqrt()
    # arccosh(1 + 2u^2) == 2 asinh(u); the asinh form is exact near zero
    out = 2.0 / sc * torch.asinh(sc * _norm(x - y) / den)
    return torch.where(sq > 0, out, torch.zeros_like(out)).squeeze(-1)


def exp_map(z, v, c=1.0):
    z, v = as_points(z), as_points(v)
    _check_dims(z, v)
    sc = c**0.5
    vnorm = _norm(v)
    step = torch.tanh(sc * conformal_factor(z, c) * vnorm / 2) * v / (sc * vnorm)
    step = torch.where(_sqnorm(v) < MIN_NORM**2, torch.zeros_like(step), step)
    return project_to_ball(_mobius_add(z, step, c), c=c)


def log_map(z, y, c=1.0):
    z, y = as_points(z), as_points(y)
    _check_dims(z, y)
    sc = c**0.5
    w = _mobius_add(-z, y, c)
    wnorm = _norm(w)
    out = 2.0 / (sc * conformal_factor(z, c)) * artanh(sc * wnorm) * w / wnorm
    return torch.where(_sqnorm(w) < MIN_NORM**2, torch.zeros_like(out), out)


def exp_map0(v, c=1.0):
    v = as_points(v)
    return exp_map(torch.zeros_like(v), v, c)


def log_map0(y, c=1.0):
    y = as_points(y)
    return log_map(torch.zeros_like(y), y, c)


def gyroplane(a, p, z, c=1.0):
    """Signed, scaled distance of ``z`` to the hyperbolic hyperplane through ``p`` with normal ``a``.

    The scale is the tangent norm ``lambda_p * ||a||``. The sign follows
    ``<a, log_p(z)>``, which shares its sign with ``<a, (-p) + z>`` because the
    log map is a positive multiple of the Möbius difference.
    """
    a, p, z = as_points(a), as_points(p), as_points(z)
    _check_dims(a, p, z)
    anorm2 = _sqnorm(a)
    with torch.no_grad():
        if bool((anorm2 == 0).any()):
            raise ZeroNormalError("gyroplane normal vector must be nonzero")
    anorm = anorm2.sqrt()
    sc = c**0.5
    w = _mobius_add(-p, z, c)
    wa = (w * a).sum(dim=-1, keepdim=True)
    arg = 2 * sc * wa / ((1 - c * _sqnorm(w)) * anorm)
    return (conformal_factor(p, c) * anorm / sc * torch.asinh(arg)).squeeze(-1)


def hyperplane_distance(a, p, z, c=1.0):
    """Unsigned distance from ``z`` to the gyroplane boundary ``H_{a,p}``."""
    a, p, z = as_points(a), as_points(p), as_points(z)
    sc = c**0.5
    w = _mobius_add(-p, z, c)
    wa = (w * a).sum(dim=-1)
    anorm = a.norm(dim=-1)
    return torch.asinh(2 * sc * wa.abs() / ((1 - c * _sqnorm(w).squeeze(-1)) * anorm)) / sc
