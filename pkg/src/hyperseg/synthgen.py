"""Hierarchical synthetic volumes: a cell, organelles inside it, aggregates inside those.

Volumes are indexed ``[x, y, z]``. Shapes are rendered analytically at a
coordinate field so that the irregular variant can re-render the same scene at
warped coordinates; one warp for every shape keeps the nesting exact.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

LEVEL2_KINDS = ("sphere", "sphere", "cuboid", "cuboid")
KIND_LABEL = {"sphere": 1, "cuboid": 2}


@dataclass
class SynthConfig:
    volume_edge: int = 50
    n_volumes: int = 120
    split: tuple = (80, 20, 20)
    level1_radius: tuple = (25.0, 1.0)
    level2_sphere_radius: tuple = (8.0, 0.5)
    level2_cuboid_half: tuple = (8.0, 0.5)  # side = 2 * N(8, 0.5)
    level3_sphere_radius: tuple = (2.0, 0.2)
    level3_cuboid_half: tuple = (3.0, 0.15)  # side = 2 * N(3, 0.15)
    pink_noise_mag: float = 0.25
    n_level2_spheres: int = 2
    n_level2_cuboids: int = 2
    n_level3_per_parent: int = 2
    texture_amp: float = 0.15
    center_jitter: float = 2.0
    irregular: bool = False
    irregular_amp: float = 2.0
    irregular_points: int = 64
    max_tries: int = 500
    placement_restarts: int = 20
    sibling_gap: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.split = tuple(int(s) for s in self.split)
        if sum(self.split) != self.n_volumes:
            self.split = scaled_split(self.n_volumes)

    def to_dict(self):
        out = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def scaled_split(n):
    """80/20/20 proportions rounded for ``n`` volumes."""
    n_train = int(round(n * 80 / 120))
    n_val = int(round(n * 20 / 120))
    n_val = min(n_val, n - n_train)
    return (n_train, n_val, n - n_train - n_val)


@dataclass
class ShapeInstance:
    level: int
    kind: str
    center: tuple
    size: float  # radius for spheres, half-side for cuboids
    intensity: float
    texture_seed: int
    parent: int = -1

    @property
    def bounding_radius(self):
        return self.size if self.kind == "sphere" else self.size * math.sqrt(3)

    @property
    def volume(self):
        if self.kind == "sphere":
            return 4.0 / 3.0 * math.pi * self.size**3
        return (2 * self.size) ** 3

    def contains(self, other, margin=1e-6):
        c = np.asarray(self.center)
        o = np.asarray(other.center)
        if self.kind == "sphere":
            if other.kind == "sphere":
                return np.linalg.norm(o - c) + other.size <= self.size - margin
            # farthest cube corner
            return np.linalg.norm(np.abs(o - c) + other.size) <= self.size - margin
        # a sphere or cube of radius / half-side s fits an axis-aligned cube iff every axis has room
        return bool(np.all(np.abs(o - c) + other.size <= self.size - margin))

    def overlaps(self, other, gap=0.0):
        """True when the shapes come closer than ``gap``."""
        c = np.asarray(self.center)
        o = np.asarray(other.center)
        if self.kind == "cuboid" and other.kind == "cuboid":
            return bool(np.all(np.abs(o - c) < self.size + other.size + gap))
        if self.kind == "sphere" and other.kind == "sphere":
            return bool(np.linalg.norm(o - c) < self.size + other.size + gap)
        box, ball = (self, other) if self.kind == "cuboid" else (other, self)
        bc, pc = np.asarray(box.center), np.asarray(ball.center)
        nearest = np.clip(pc, bc - box.size, bc + box.size)
        return bool(np.linalg.norm(pc - nearest) < ball.size + gap)

    def inside(self, coords):
        """Boolean mask of coordinates (shape ``(3, ...)``) inside the shape."""
        c = np.asarray(self.center).reshape(3, *([1] * (coords.ndim - 1)))
        diff = coords - c
        if self.kind == "sphere":
            return (diff**2).sum(0) <= self.size**2
        return np.all(np.abs(diff) <= self.size, axis=0)

    def to_dict(self):
        out = asdict(self)
        out["center"] = list(self.center)
        return out


@dataclass
class LabeledVolume:
    intensities: np.ndarray
    labels: list  # three uint8 masks, levels 1..3
    objects: list
    seed: int
    noise_seed: int
    irregular: bool = False
    warnings: list = field(default_factory=list)

    @property
    def dims(self):
        return self.intensities.shape


def _positive_normal(rng, mean, std):
    while True:
        v = rng.normal(mean, std)
        if v > 0:
            return float(v)


def pink_noise(dims, magnitude, seed):
    """Zero-mean field with a 1/f radially averaged power spectrum and std ``magnitude``."""
    dims = tuple(int(d) for d in dims)
    if magnitude == 0:
        return np.zeros(dims)
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(dims)
    spec = np.fft.fftn(white)
    freqs = np.meshgrid(*[np.fft.fftfreq(n) for n in dims], indexing="ij")
    f = np.sqrt(sum(g**2 for g in freqs))
    amp = np.zeros_like(f)
    amp[f > 0] = f[f > 0] ** -0.5
    field_ = np.real(np.fft.ifftn(spec * amp))
    field_ -= field_.mean()
    field_ /= field_.std()
    return magnitude * field_


def _texture(obj, coords):
    """Band-limited value noise in [-1, 1]-ish, seeded per instance and anchored at the shape."""
    rng = np.random.default_rng(obj.texture_seed)
    spacing = max(2.0, obj.size / 2.0)
    n = int(math.ceil(2 * (obj.bounding_radius + 4) / spacing)) + 2
    lattice = rng.uniform(-1.0, 1.0, size=(n, n, n))
    origin = np.asarray(obj.center) - (n - 1) * spacing / 2.0
    grid = (coords - origin.reshape(3, *([1] * (coords.ndim - 1)))) / spacing
    return ndimage.map_coordinates(lattice, grid, order=1, mode="nearest")


def identity_coords(dims):
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims],
                                indexing="ij"))


def render(objects, coords, noise, cfg):
    """Paint objects (parents first) at ``coords``, add ``noise``, and build level masks."""
    dims = coords.shape[1:]
    vol = np.zeros(dims)
    labels = [np.zeros(dims, dtype=np.uint8) for _ in range(3)]
    for obj in sorted(objects, key=lambda o: o.level):
        mask = obj.inside(coords)
        if not mask.any():
            continue
        tex = _texture(obj, coords[:, mask])
        vol[mask] = obj.intensity * (1.0 + cfg.texture_amp * tex)
        labels[obj.level - 1][mask] = 1 if obj.level == 1 else KIND_LABEL[obj.kind]
    vol = vol + noise
    return vol.astype(np.float32), labels


def _place_children(parent_idx, parent, kinds, level, size_params, objects, rng, cfg, warns,
                    seeds):
    # biggest expected shapes first; restart the whole sibling set before giving up on any
    def expected_reach(kind):
        mean = size_params[kind][0]
        return mean if kind == "sphere" else mean * math.sqrt(3)

    order = sorted(kinds, key=expected_reach, reverse=True)
    best = []
    for _ in range(cfg.placement_restarts):
        placed = _try_place(parent_idx, parent, order, level, size_params, rng, cfg)
        if len(placed) > len(best):
            best = placed
        if len(best) == len(order):
            break
    placed_kinds = [o.kind for o in best]
    for kind in order:
        if kind in placed_kinds:
            placed_kinds.remove(kind)
        else:
            warns.append(f"could not place level-{level} {kind} inside object {parent_idx}; skipped")
    for obj in best:
        obj.texture_seed = _fresh_seed(rng, seeds)
        objects.append(obj)


def _try_place(parent_idx, parent, order, level, size_params, rng, cfg):
    placed = []
    for kind in order:
        mean, std = size_params[kind]
        for _ in range(cfg.max_tries):
            size = _positive_normal(rng, mean, std)
            center = tuple(float(c + rng.uniform(-parent.size, parent.size)) for c in parent.center)
            cand = ShapeInstance(level, kind, center, size, float(rng.standard_normal()), -1,
                                 parent_idx)
            if parent.contains(cand) and not any(cand.overlaps(o, cfg.sibling_gap) for o in placed):
                placed.append(cand)
                break
    return placed


def _fresh_seed(rng, seeds):
    while True:
        s = int(rng.integers(0, 2**31 - 1))
        if s not in seeds:
            seeds.add(s)
            return s


def generate_volume(cfg, seed):
    rng = np.random.default_rng(seed)
    edge = cfg.volume_edge
    dims = (edge, edge, edge)
    warns = []
    seeds = set()
    mid = (edge - 1) / 2.0
    center = tuple(float(mid + rng.uniform(-cfg.center_jitter, cfg.center_jitter)) for _ in range(3))
    cell = ShapeInstance(1, "sphere", center, _positive_normal(rng, *cfg.level1_radius),
                         float(rng.standard_normal()), _fresh_seed(rng, seeds))
    objects = [cell]

    kinds2 = ("sphere",) * cfg.n_level2_spheres + ("cuboid",) * cfg.n_level2_cuboids
    sizes2 = {"sphere": cfg.level2_sphere_radius, "cuboid": cfg.level2_cuboid_half}
    _place_children(0, cell, kinds2, 2, sizes2, objects, rng, cfg, warns, seeds)

    sizes3 = {"sphere": cfg.level3_sphere_radius, "cuboid": cfg.level3_cuboid_half}
    for idx in [i for i, o in enumerate(objects) if o.level == 2]:
        parent = objects[idx]
        kinds3 = (parent.kind,) * cfg.n_level3_per_parent
        _place_children(idx, parent, kinds3, 3, sizes3, objects, rng, cfg, warns, seeds)

    noise_seed = int(rng.integers(0, 2**31 - 1))
    noise = pink_noise(dims, cfg.pink_noise_mag, noise_seed)
    vol, labels = render(objects, identity_coords(dims), noise, cfg)
    return LabeledVolume(vol, labels, objects, int(seed), noise_seed, False, warns)


def smooth_displacement(dims, amplitude, n_points, seed):
    """Gaussian values on a coarse control lattice, trilinearly interpolated; shape ``(3, *dims)``."""
    rng = np.random.default_rng(seed)
    g = max(2, int(round(n_points ** (1.0 / 3.0))))
    ctrl = rng.standard_normal((3, g, g, g)) * amplitude
    zoom = [(n - 1) / (g - 1) for n in dims]
    grids = np.meshgrid(*[np.arange(n) / z for n, z in zip(dims, zoom)], indexing="ij")
    pts = np.stack(grids)
    return np.stack([ndimage.map_coordinates(c, pts, order=1) for c in ctrl])


def irregularize(vol, cfg, seed):
    """Warp the interior of the three largest shapes by a smooth random displacement."""
    dims = vol.dims
    coords = identity_coords(dims)
    largest = sorted(vol.objects, key=lambda o: o.volume, reverse=True)[:3]
    if cfg.irregular_amp == 0 or not largest:
        disp = np.zeros_like(coords)
    else:
        disp = smooth_displacement(dims, cfg.irregular_amp, cfg.irregular_points, seed)
        region = np.zeros(dims, dtype=bool)
        for obj in largest:
            region |= obj.inside(coords)
        reach = int(math.ceil(np.abs(disp).max())) + 1
        region = ndimage.binary_dilation(region, iterations=reach)
        disp = disp * region
    noise = pink_noise(dims, cfg.pink_noise_mag, vol.noise_seed)
    intens, labels = render(vol.objects, coords + disp, noise, cfg)
    return LabeledVolume(intens, labels, vol.objects, vol.seed, vol.noise_seed, True,
                         list(vol.warnings))


def volume_seeds(cfg):
    return [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(cfg.n_volumes)]


def split_of(index, split):
    n_train, n_val, _ = split
    if index < n_train:
        return "train"
    if index < n_train + n_val:
        return "val"
    return "test"


def generate_dataset(cfg):
    """Yield ``(index, split_name, LabeledVolume)`` for every volume of the dataset."""
    for i, s in enumerate(volume_seeds(cfg)):
        vol = generate_volume(cfg, s)
        if cfg.irregular:
            vol = irregularize(vol, cfg, s + 1)
        yield i, split_of(i, cfg.split), vol
