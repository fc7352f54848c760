"""Run configuration shared by every pipeline command.

A config file is JSON with one section per stage. Unknown keys are errors
and every seed is explicit, so a config plus its inputs fully determines
the outputs. ``digest`` fingerprints the effective config; artifacts carry
it so mismatched runs can be detected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class IngestSection:
    stop_speed: float = 0.5
    min_duration: int = 34


@dataclass
class ClusterSection:
    k: int = 4
    seed: int = 0
    train_frac: float = 0.8
    split_seed: int = 0


@dataclass
class MarkovSection:
    delta_v: float = 0.5
    alpha: float = 0.0
    smooth: bool = True


@dataclass
class ModelSection:
    """Architecture, schedule and optimiser settings for one diffusion engine."""

    architecture: dict = field(default_factory=dict)
    schedule: str = "cosine"
    diffusion_steps: int = 200
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    cond_dropout: float = 0.1
    physics_min_alpha_bar: float = 0.5
    seed: int = 0


@dataclass
class GenerationSection:
    seed: int = 0
    n: int = 0
    boost_speed: float | None = None
    boost_duration: float | None = None
    guidance_scale: float | None = None
    corr_sigma: float = 0.0
    batch_size: int = 64


@dataclass
class MetricsSection:
    seed: int = 0
    bandwidth: float = 1.0


def _default_unet():
    return ModelSection(
        architecture={"variant": "unet"}, schedule="linear", diffusion_steps=1000, physics_min_alpha_bar=0.0
    )


def _default_csdi():
    return ModelSection(architecture={"variant": "transformer"}, schedule="cosine", diffusion_steps=200)


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    ingest: IngestSection = field(default_factory=IngestSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    markov: MarkovSection = field(default_factory=MarkovSection)
    unet: ModelSection = field(default_factory=_default_unet)
    csdi: ModelSection = field(default_factory=_default_csdi)
    generation: GenerationSection = field(default_factory=GenerationSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def to_dict(self):
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def engine(self, name) -> ModelSection:
        if name not in ("unet", "csdi"):
            raise ConfigError(f"unknown diffusion engine {name!r}")
        return getattr(self, name)


def _overlay(base, data, path):
    """Apply ``data`` onto the defaults in ``base``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    known = {f.name for f in fields(base)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    for name, value in data.items():
        cur = getattr(base, name)
        if is_dataclass(cur):
            _overlay(cur, value, f"{path}.{name}" if path else name)
        else:
            setattr(base, name, value)
    return base


def config_from_dict(data) -> RunConfig:
    cfg = _overlay(RunConfig(), data, "")
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema version {cfg.schema_version}")
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(data)
