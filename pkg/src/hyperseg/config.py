"""``key = value`` run configuration files.

One assignment per line, ``#`` starts a comment. Values are parsed as JSON
when possible (numbers, ``true``/``false``, ``[16, 32, 64, 128]``) and kept as
bare strings otherwise. Keys are the field names of ``ModelConfig``,
``TrainConfig``, ``SamplerConfig`` and ``InferenceConfig``; ``preset`` selects
an ablation preset whose values explicit keys override. Sampler keys are
optional; without them the sampler defaults follow the training volume size.
"""

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import PRESETS, ModelConfig
from .pipeline import InferenceConfig
from .sampler import SamplerConfig
from .training import TrainConfig

SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "inference": InferenceConfig,
}


def parse_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = None  # None: chosen from the training volume size
    inference: InferenceConfig = field(default_factory=InferenceConfig)


def _route(values):
    # the first section declaring a field owns it; "seed" is shared on purpose
    owners = {}
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            owners.setdefault(f.name, []).append(section)
    routed = {s: {} for s in SECTIONS}
    for key, value in values.items():
        if key not in owners:
            raise ConfigError(f"unknown configuration key {key!r}")
        for section in owners[key]:
            routed[section][key] = value
    return routed


def build(values):
    values = dict(values)
    preset = values.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values = {**PRESETS[preset], **values}
    routed = _route(values)
    try:
        built = {s: SECTIONS[s](**routed[s]) for s in SECTIONS if s != "sampler"}
        built["sampler"] = SamplerConfig(**routed["sampler"]) if routed["sampler"] else None
        return RunConfig(**built)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load(path):
    return build(parse_text(Path(path).read_text(encoding="utf-8")))
