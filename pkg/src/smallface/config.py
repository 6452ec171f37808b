"""Declarative run configuration.

A config file is a YAML document with nested sections mirroring the module
configs (anchors, match, ohem, him, augment, model, train, infer, eval,
synth) plus a top-level seed. Unknown sections or keys are rejected, and the
effective config is echoed into every run directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import __version__
from .augment import AugmentConfig
from .datasets import SynthConfig
from .evaluate import EvalConfig
from .geometry import AnchorConfig
from .inference import InferConfig
from .mining import HimConfig
from .targets import MatchConfig, OhemConfig
from .tensornet import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    anchors: AnchorConfig = dataclasses.field(default_factory=AnchorConfig)
    match: MatchConfig = dataclasses.field(default_factory=MatchConfig)
    ohem: OhemConfig = dataclasses.field(default_factory=OhemConfig)
    him: HimConfig = dataclasses.field(default_factory=HimConfig)
    augment: AugmentConfig = dataclasses.field(default_factory=AugmentConfig)
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    infer: InferConfig = dataclasses.field(default_factory=InferConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)


_SECTION_TYPES = {
    "anchors": AnchorConfig,
    "match": MatchConfig,
    "ohem": OhemConfig,
    "him": HimConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "infer": InferConfig,
    "eval": EvalConfig,
    "synth": SynthConfig,
}


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build_section(name: str, cls, overrides: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(overrides) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{name}': {sorted(unknown)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in overrides.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{name}': {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc or {})
    seed = doc.pop("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        overrides = doc.pop(name, {}) or {}
        if not isinstance(overrides, dict):
            raise ConfigError(f"section '{name}' must be a mapping, got {overrides!r}")
        sections[name] = _build_section(name, cls, overrides)
    if doc:
        raise ConfigError(f"unknown top-level key(s): {sorted(doc)}")
    return RunConfig(seed=seed, **sections)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    raw = Path(path).read_text()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        return value

    doc = {"seed": cfg.seed}
    for name in _SECTION_TYPES:
        section = getattr(cfg, name)
        doc[name] = {f.name: plain(getattr(section, f.name))
                     for f in dataclasses.fields(section)}
    return doc


def echo_config(cfg: RunConfig, path) -> None:
    doc = {"tool_version": __version__}
    doc.update(config_to_dict(cfg))
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=True))


def builtin_config_path(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.cfg"
