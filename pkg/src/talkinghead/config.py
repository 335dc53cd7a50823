"""Pipeline configuration: JSON file + dotted --set overrides, strict keys.

One master seed drives every stochastic stage (per-stage seeds are derived
from it with fixed offsets); the REALTALK_SEED environment variable, when
set, overrides it. Dataset identity knobs (field_seed, topology_seed) are
not run seeds and stay put.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .core import ValidationError

SEED_ENV_VAR = "REALTALK_SEED"
DEFAULT_DELTA = 0.15
DEFAULT_DELTA_SWEEP = (0.0, 0.15, 0.2, 0.3, 0.4, 0.5, 1.0)


class ConfigError(ValidationError):
    pass


@dataclass
class DataConfig:
    clips_per_emotion: int = 1
    frames: int = 16
    resolution: int = 64
    content_dim: int = 16
    pitch_dim: int = 4
    blendshape_dim: int = 8
    mouth_amplitude: float = 0.45
    emotion_norm: float = 0.2
    emotion_max_norm: float = 0.3
    emotion_separation: float = 0.05
    field_seed: int = 777
    topology_seed: int = 11


@dataclass
class VaeConfig:
    steps: int = 2000
    lr: float = 5e-4
    latent_dim: int = 16
    channels: int = 64
    width: int = 128
    flow_steps: int = 4
    sync_window: int = 5
    sync_pairs: int = 16
    kl_weight: float = 1.0
    sync_weight: float = 1.0
    clip: str | None = None  # dataset clip to fit; first clip when unset


@dataclass
class LdmConfig:
    steps: int = 3000
    lr: float = 5e-4
    batch: int = 16
    hidden: int = 256
    window: int = 8
    noise_scale: float = 1e-3


@dataclass
class NerfConfig:
    steps: int = 20000
    stage2_fraction: float = 0.2
    rays_per_step: int = 512
    samples: int = 24
    patch_size: int = 32
    lr: float = 5e-4
    levels: int = 14
    features_per_level: int = 2
    log2_table: int = 14
    base_resolution: int = 16
    finest_resolution: int = 512
    width: int = 64
    geo_features: int = 15
    dir_freqs: int = 4
    attention_channels: int = 32
    eval_every: int = 500
    target_psnr: float | None = 30.05
    background: tuple = (0.12, 0.12, 0.15)
    clip: str | None = None


@dataclass
class InferConfig:
    emotion: str = "neutral"
    audio: str | None = None        # clip directory holding the RTAF blobs
    pose_source: str | None = None  # clip directory holding poses + blendshapes
    samples: int = 24
    window: int = 8


@dataclass
class EvalConfig:
    clip: str | None = None   # ground-truth clip directory
    pred: str | None = None   # run directory produced by infer
    method: str = "pipeline"


@dataclass
class AcceptConfig:
    suite: str = "invariants"


@dataclass
class PathsConfig:
    workdir: str = "runs"
    dataset: str | None = None
    vae_checkpoint: str | None = None
    ldm_checkpoint: str | None = None
    nerf_checkpoint: str | None = None
    out: str | None = None


@dataclass
class PipelineConfig:
    seed: int = 0
    delta: float = DEFAULT_DELTA
    delta_sweep: tuple = DEFAULT_DELTA_SWEEP
    perceptual_weight: float = 0.1
    resolution: int = 64
    data: DataConfig = dc_field(default_factory=DataConfig)
    vae: VaeConfig = dc_field(default_factory=VaeConfig)
    ldm: LdmConfig = dc_field(default_factory=LdmConfig)
    nerf: NerfConfig = dc_field(default_factory=NerfConfig)
    infer: InferConfig = dc_field(default_factory=InferConfig)
    eval: EvalConfig = dc_field(default_factory=EvalConfig)
    accept: AcceptConfig = dc_field(default_factory=AcceptConfig)
    paths: PathsConfig = dc_field(default_factory=PathsConfig)

    def validate(self):
        if self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if any(d < 0 for d in self.delta_sweep):
            raise ConfigError("delta_sweep values must be >= 0")
        if self.perceptual_weight < 0:
            raise ConfigError(f"perceptual_weight must be >= 0, got {self.perceptual_weight}")
        for name in ("workdir",):
            value = getattr(self.paths, name)
            if not isinstance(value, str) or not value:
                raise ConfigError(f"paths.{name} must be a non-empty path string")
        return self

    # seeds for individual stages all derive from the master seed
    def stage_seed(self, stage: str) -> int:
        offsets = {"synth": 0, "vae": 101, "ldm": 202, "nerf": 303, "infer": 404}
        if stage not in offsets:
            raise ConfigError(f"unknown stage {stage!r}")
        return int(self.seed) + offsets[stage]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTION_TYPES = {
    "data": DataConfig, "vae": VaeConfig, "ldm": LdmConfig, "nerf": NerfConfig,
    "infer": InferConfig, "eval": EvalConfig, "accept": AcceptConfig, "paths": PathsConfig,
}


def _build(cls, doc: dict, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - fields
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in doc.items():
        if cls is PipelineConfig and name in _SECTION_TYPES:
            kwargs[name] = _build(_SECTION_TYPES[name], value, name)
        else:
            kwargs[name] = tuple(value) if isinstance(value, list) else value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, doc, "")
    if SEED_ENV_VAR in os.environ:
        try:
            cfg.seed = int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, "
                              f"got {os.environ[SEED_ENV_VAR]!r}") from None
    return cfg.validate()


def parse_set_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, dotted_key: str, value):
    parts = dotted_key.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object key {part!r} in {dotted_key}")
    node[parts[-1]] = value
    return doc


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Config file (optional) plus `key=value` overrides; strict key checking."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        apply_override(doc, key.strip(), parse_set_value(raw))
    return config_from_dict(doc)
