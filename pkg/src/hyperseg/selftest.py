"""Quick built-in property and oracle checks, runnable without the test suite."""

import itertools
import math
import time

import numpy as np
import torch

from . import geometry as geo
from . import stats
from .cluster import ClusterConfig, frechet_mean, kmeans
from .formats import decode_checkpoint, decode_vox, encode_checkpoint, encode_vox, Checkpoint
from .metrics import dice, hungarian
from .nn import gyro_conv


def _ball(rng, n, d, radius=0.7):
    x = rng.normal(size=(n, d))
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return torch.from_numpy(x / np.linalg.norm(x, axis=1, keepdims=True) * r)


def check_metric_axioms(rng):
    x, y, z = (_ball(rng, 2000, 3) for _ in range(3))
    dxy, dyx = geo.distance(x, y), geo.distance(y, x)
    ok = torch.allclose(dxy, dyx, atol=1e-10)
    ok &= bool((dxy >= 0).all()) and bool(geo.distance(x, x).abs().max() < 1e-6)
    ok &= bool((geo.distance(x, z) <= dxy + geo.distance(y, z) + 1e-9).all())
    return ok


def check_exp_log(rng):
    x, y = _ball(rng, 2000, 3, 0.5), _ball(rng, 2000, 3, 0.5)
    back = geo.exp_map(x, geo.log_map(x, y))
    return float((back - y).abs().max()) < 1e-9


def check_gyroplane_example(rng):
    a = torch.tensor([1.0, 0.0], dtype=torch.float64)
    p = torch.zeros(2, dtype=torch.float64)
    z = torch.tensor([0.5, 0.0], dtype=torch.float64)
    return abs(float(geo.gyroplane(a, p, z)) - 2 * math.log(3)) < 1e-7


def check_gyro_conv_grad(rng):
    g = torch.Generator().manual_seed(0)
    x = geo.project_to_ball(0.3 * torch.randn(1, 1, 3, 3, 3, 2, generator=g, dtype=torch.float64))
    a = torch.randn(2, 1, 3, 3, 3, 2, generator=g, dtype=torch.float64).requires_grad_()
    p = (0.1 * torch.randn(2, 1, 3, 3, 3, 2, generator=g, dtype=torch.float64)).requires_grad_()
    return torch.autograd.gradcheck(lambda a_, p_: gyro_conv(x, a_, p_, 3, 1, 1), (a, p),
                                    eps=1e-6, atol=1e-6, rtol=1e-4)


def check_wrapped_normal(rng):
    dist = stats.WrappedNormal(torch.tensor([0.3, -0.2], dtype=torch.float64),
                               torch.tensor([0.5, 0.4], dtype=torch.float64))
    # integrate the density over a fine polar grid of the unit disk
    r = (np.arange(800) + 0.5) / 800 * (1 - 1e-6)
    t = (np.arange(800) + 0.5) / 800 * 2 * np.pi
    rr, tt = np.meshgrid(r, t, indexing="ij")
    pts = torch.from_numpy(np.stack([rr * np.cos(tt), rr * np.sin(tt)], -1))
    dens = stats.log_prob(dist, pts).exp() * geo.conformal_factor(pts).squeeze(-1) ** 2
    total = float((dens.numpy() * rr).sum() * (r[1] - r[0]) * (t[1] - t[0]))
    return abs(total - 1.0) < 0.02


def check_frechet_midpoint(rng):
    x = torch.tensor([[0.3, 0.0], [-0.1, 0.4]], dtype=torch.float64)
    m = frechet_mean(x)
    mid = geo.exp_map(x[0], 0.5 * geo.log_map(x[0], x[1]))
    return float((m - mid).abs().max()) < 1e-6


def check_kmeans_recovery(rng):
    pts = np.concatenate([rng.normal(c, 0.05, size=(60, 2)) for c in ([0.4, 0], [-0.4, 0], [0, 0.4])])
    res = kmeans(pts, ClusterConfig(k=3, seed=1), "poincare")
    return len(np.unique(res.labels)) == 3


def check_hungarian(rng):
    for _ in range(20):
        n = int(rng.integers(1, 6))
        c = rng.normal(size=(n, n))
        perm = hungarian(c)
        best = min(sum(c[i, q[i]] for i in range(n)) for q in itertools.permutations(range(n)))
        if abs(sum(c[i, perm[i]] for i in range(n)) - best) > 1e-12:
            return False
    return True


def check_dice(rng):
    a, b = rng.random((6, 6, 6)) < 0.4, rng.random((6, 6, 6)) < 0.4
    tp = int((a & b).sum())
    return abs(dice(a, b) - 2 * tp / (a.sum() + b.sum())) < 1e-15


def check_formats(rng):
    for dt in (np.float32, np.uint16, np.uint8):
        arr = (rng.random((3, 4, 5)) * 200).astype(dt)
        if not np.array_equal(decode_vox(encode_vox(arr)), arr):
            return False
    ck = Checkpoint({"a": 1}, {"w": torch.randn(2, 3)}, {"adam.step": torch.tensor(3.0)}, 7)
    buf = encode_checkpoint(ck)
    return encode_checkpoint(decode_checkpoint(buf)) == buf


CHECKS = [
    ("metric axioms", check_metric_axioms),
    ("exp/log round trip", check_exp_log),
    ("gyroplane worked example", check_gyroplane_example),
    ("gyro conv gradients", check_gyro_conv_grad),
    ("wrapped normal normalization", check_wrapped_normal),
    ("Frechet midpoint", check_frechet_midpoint),
    ("k-means three clusters", check_kmeans_recovery),
    ("Hungarian vs exhaustive", check_hungarian),
    ("DICE", check_dice),
    ("VOX1/HVC1 round trip", check_formats),
]


def run(verbose=True):
    rng = np.random.default_rng(0)
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok = bool(fn(rng))
            note = ""
        except Exception as exc:  # report and keep going
            ok, note = False, f" ({type(exc).__name__}: {exc})"
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}  [{time.perf_counter() - t0:.2f}s]{note}")
    if verbose:
        print("selftest:", "all checks passed" if all_ok else "FAILURES")
    return all_ok
