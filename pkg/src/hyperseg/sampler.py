"""Multi-scale anchor / positive / negative patch sampling.

A patch is an axis-aligned cube given by integer ``start`` corner and ``edge``;
``center`` is ``start + edge // 2``. All draws come from a caller-owned
``numpy.random.Generator``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import (ChildInfeasibleError, ConfigError, NegativeInfeasibleError,
                     VolumeTooSmallError)

SCHEMES = ("uniform", "log_uniform")


@dataclass
class SamplerConfig:
    r_min: int = 11
    r_max: int = 45
    l_min: int = 5
    r_gap: int = 5
    scheme: str = "uniform"
    anchors_per_volume: int = 32
    max_reject: int = 100
    min_center_distance: float = 0.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.r_min < self.l_min + self.r_gap:
            raise ConfigError("r_min must be >= l_min + r_gap")
        if self.r_max < self.r_min:
            raise ConfigError("r_max must be >= r_min")
        if self.max_reject < 1:
            raise ConfigError("max_reject must be >= 1")

    def check_volume(self, dims):
        if min(dims) < self.r_max:
            raise ConfigError(f"r_max={self.r_max} exceeds the smallest volume edge {min(dims)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def for_volume(cls, dims, **overrides):
        """Defaults with the scheme picked from volume size (log-uniform once every edge is >= 128)."""
        scheme = "log_uniform" if min(dims) >= 128 else "uniform"
        return cls(**{"scheme": scheme, **overrides})


@dataclass(frozen=True)
class PatchSpec:
    start: tuple
    edge: int

    @property
    def center(self):
        return tuple(s + self.edge // 2 for s in self.start)

    @property
    def stop(self):
        return tuple(s + self.edge for s in self.start)

    def slices(self):
        return tuple(slice(s, s + self.edge) for s in self.start)

    def contains(self, other):
        return all(a <= b and b + other.edge <= a + self.edge
                   for a, b in zip(self.start, other.start))

    def overlap_volume(self, other):
        vol = 1
        for a, b in zip(self.start, other.start):
            lo = max(a, b)
            hi = min(a + self.edge, b + other.edge)
            vol *= max(0, hi - lo)
        return vol


def draw_edge(cfg, rng):
    if cfg.scheme == "uniform":
        return int(rng.integers(cfg.r_min, cfg.r_max + 1))
    r = np.exp(rng.uniform(np.log(cfg.r_min), np.log(cfg.r_max)))
    return int(np.clip(np.rint(r), cfg.r_min, cfg.r_max))


def sample_anchor(volume_dims, cfg, rng):
    if min(volume_dims) < cfg.r_min:
        raise VolumeTooSmallError(f"volume {tuple(volume_dims)} smaller than r_min={cfg.r_min}")
    edge = min(draw_edge(cfg, rng), min(volume_dims))
    start = tuple(int(rng.integers(0, n - edge + 1)) for n in volume_dims)
    return PatchSpec(start, edge)


def sample_positive(anchor, cfg, rng):
    hi = anchor.edge - cfg.r_gap
    if hi <= cfg.l_min:
        raise ChildInfeasibleError(
            f"anchor edge {anchor.edge} leaves no room for a child (l_min={cfg.l_min}, r_gap={cfg.r_gap})")
    edge = int(rng.integers(cfg.l_min, hi + 1))
    start = tuple(int(a + rng.integers(0, anchor.edge - edge + 1)) for a in anchor.start)
    return PatchSpec(start, edge)


def sample_negative(anchor, child_edge, volume_dims, cfg, rng):
    """Rejection-sample a ``child_edge`` cube that does not intersect ``anchor``."""
    if any(n < child_edge for n in volume_dims):
        raise NegativeInfeasibleError("child edge exceeds the volume")
    for _ in range(cfg.max_reject):
        start = tuple(int(rng.integers(0, n - child_edge + 1)) for n in volume_dims)
        cand = PatchSpec(start, child_edge)
        if anchor.overlap_volume(cand) > 0:
            continue
        if cfg.min_center_distance > 0:
            gap = np.linalg.norm(np.subtract(cand.center, anchor.center))
            if gap < cfg.min_center_distance:
                continue
        return cand
    raise NegativeInfeasibleError(f"no non-overlapping negative found in {cfg.max_reject} tries")


def sample_triplet(volume_dims, cfg, rng, max_anchor_tries=1000):
    """Anchor, positive, negative; the anchor is redrawn when a child is infeasible."""
    for _ in range(max_anchor_tries):
        anchor = sample_anchor(volume_dims, cfg, rng)
        try:
            pos = sample_positive(anchor, cfg, rng)
            neg = sample_negative(anchor, pos.edge, volume_dims, cfg, rng)
        except (ChildInfeasibleError, NegativeInfeasibleError):
            continue
        return anchor, pos, neg
    raise NegativeInfeasibleError(f"no feasible triplet after {max_anchor_tries} anchors")


def extract(volume, spec):
    return volume[spec.slices()]
