"""Fréchet means and k-means on the Poincaré ball."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from . import geometry as geo
from .errors import InvalidKError, NonConvergenceError


@dataclass
class ClusterConfig:
    k: int = 7
    tol: float = 1e-6
    max_iter: int = 100
    init: str = "kpp"
    frechet_tol: float = 1e-9
    frechet_max_iter: int = 200
    frechet_step: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidKError(f"k must be >= 1, got {self.k}")
        if self.tol <= 0 or self.frechet_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.init not in ("kpp", "random"):
            raise ValueError(f"unknown init {self.init!r}")


def _f64(points):
    return torch.as_tensor(points).to(torch.float64)


def frechet_mean(points, weights=None, tol=1e-9, max_iter=200, step=1.0, init=None,
                 return_residual=False):
    """Weighted Fréchet mean by damped Karcher flow.

    Iterates ``m <- exp_m(h * mean_w log_m(x_i))`` with ``h = step / L`` where
    ``L = mean_w r_i coth r_i`` (``r_i = d(m, x_i)``) bounds the Hessian of half
    the mean squared distance in curvature -1. For tight clusters ``L -> 1`` and
    this is the plain Karcher flow; for spread ones it prevents overshoot.
    ``h`` is halved whenever a trial update would increase the mean squared
    distance beyond rounding. Convergence is declared on the residual
    ``||mean_w log_m(x_i)||``, which need not fall monotonically.
    """
    x = _f64(points)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    n = x.shape[0]
    if n == 0:
        raise ValueError("frechet_mean needs at least one point")
    w = torch.ones(n, dtype=torch.float64) if weights is None else _f64(weights)
    if bool((w < 0).any()) or float(w.sum()) <= 0:
        raise ValueError("weights must be nonnegative and not all zero")
    w = (w / w.sum()).unsqueeze(-1)

    def state_at(m):
        g = (w * geo.log_map(m, x)).sum(0)
        r = geo.distance(m, x).clamp_min(1e-8)
        ws = w.squeeze(-1)
        smooth = float((ws * r / torch.tanh(r)).sum())
        return g, float(g.norm()), smooth, float((ws * r**2).sum())

    m = geo.project_to_ball((w * x).sum(0)) if init is None else _f64(init).clone()
    g, res, smooth, obj = state_at(m)
    slack = 64 * np.finfo(np.float64).eps
    for _ in range(max_iter):
        if res < tol:
            break
        h = step / smooth
        for _ in range(60):
            cand = geo.exp_map(m, h * g)
            g_c, res_c, smooth_c, obj_c = state_at(cand)
            # near the minimum the objective moves by ~res^2, below f64 resolution
            if obj_c <= obj + slack * max(obj, 1.0):
                break
            h /= 2
        else:
            break  # no progress left at working precision
        m, g, res, smooth, obj = cand, g_c, res_c, smooth_c, obj_c
    if res >= tol:
        raise NonConvergenceError(
            f"Fréchet mean did not converge in {max_iter} iterations (residual {res:.3e})",
            residual=res,
        )
    return (m, res) if return_residual else m


def karcher_flow(points, iters=10):
    """Differentiable batched Fréchet mean over axis 1 of ``(N, n, d)`` with a fixed iteration count."""
    m = geo.project_to_ball(points.mean(1))
    for _ in range(iters):
        g = geo.log_map(m.unsqueeze(1), points).mean(1)
        m = geo.exp_map(m, g)
    return m


def euclidean_mean(points, weights=None, **_):
    x = _f64(points)
    if weights is None:
        return x.mean(0)
    w = _f64(weights)
    return (w.unsqueeze(-1) * x).sum(0) / w.sum()


METRICS = {
    "poincare": (geo.distance, frechet_mean),
    "euclidean": (lambda a, b: (a - b).norm(dim=-1), euclidean_mean),
}


def kpp_init(points, k, rng, metric="poincare"):
    """k-means++ seeding with squared-distance weights; returns ``(centroids, indices)``."""
    x = _f64(points)
    n = x.shape[0]
    if k > n or k < 1:
        raise InvalidKError(f"cannot choose k={k} centroids from {n} points")
    dist = METRICS[metric][0]
    idx = [int(rng.integers(n))]
    best = dist(x, x[idx[0]]) ** 2
    for _ in range(1, k):
        wts = best.numpy()
        total = wts.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=wts / total))
        else:
            free = np.setdiff1d(np.arange(n), idx)
            nxt = int(rng.choice(free))
        idx.append(nxt)
        best = torch.minimum(best, dist(x, x[nxt]) ** 2)
    return x[idx].clone(), idx


@dataclass
class KMeansResult:
    centroids: torch.Tensor
    labels: np.ndarray
    objective: list = field(default_factory=list)
    n_iter: int = 0

    def __iter__(self):
        yield self.centroids
        yield self.labels


def _assign(x, c, dist):
    d = dist(x.unsqueeze(1), c.unsqueeze(0))
    labels = torch.argmin(d, dim=1)  # first index wins exact ties
    return labels, d


def kmeans(points, cfg, metric="poincare", init=None):
    """Lloyd iterations with a pluggable distance/mean pair.

    ``init`` optionally fixes the starting centroids. The objective (sum of
    squared distances to assigned centroids) is checked to be non-increasing.
    """
    x = _f64(points)
    n = x.shape[0]
    k = cfg.k
    if k > n:
        raise InvalidKError(f"k={k} exceeds the number of points ({n})")
    dist, mean = METRICS[metric]
    rng = np.random.default_rng(cfg.seed)
    if init is not None:
        c = _f64(init).clone()
    elif cfg.init == "kpp":
        c, _ = kpp_init(x, k, rng, metric)
    else:
        c = x[rng.choice(n, size=k, replace=False)].clone()

    history = []
    prev = np.inf
    labels = None
    it = 0
    for it in range(1, cfg.max_iter + 1):
        labels, d = _assign(x, c, dist)
        own = d[torch.arange(n), labels]
        for j in range(k):
            if bool((labels == j).any()):
                continue
            # reseed an empty cluster with the point farthest from its centroid
            far = int(torch.argmax(own))
            labels[far] = j
            c[j] = x[far]
            own[far] = 0.0
        new_c = c.clone()
        for j in range(k):
            members = x[labels == j]
            new_c[j] = mean(members, tol=cfg.frechet_tol, max_iter=cfg.frechet_max_iter,
                            step=cfg.frechet_step, init=c[j]) if metric == "poincare" else mean(members)
        obj = float((dist(x, new_c[labels]) ** 2).sum())
        if obj > prev * (1 + 1e-9) + 1e-12:
            raise RuntimeError(f"k-means objective increased at iteration {it}: {prev} -> {obj}")
        history.append(obj)
        prev = obj
        shift = float(dist(c, new_c).max())
        c = new_c
        if shift < cfg.tol:
            break
    labels, d = _assign(x, c, dist)
    final = float((d[torch.arange(n), labels] ** 2).sum())
    if final > prev * (1 + 1e-9) + 1e-12:
        raise RuntimeError(f"k-means objective increased on final assignment: {prev} -> {final}")
    history.append(final)
    if k > 1:
        pd = dist(c.unsqueeze(1), c.unsqueeze(0))
        pd.fill_diagonal_(np.inf)
        if float(pd.min()) < 1e-12:
            warnings.warn("k-means produced coincident centroids", RuntimeWarning)
    return KMeansResult(c, labels.numpy(), history, it)


def hyperbolic_kmeans(points, cfg, init=None):
    return kmeans(points, cfg, "poincare", init)


def euclidean_kmeans(points, cfg, init=None):
    return kmeans(points, cfg, "euclidean", init)
