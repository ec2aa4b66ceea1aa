"""Run configuration: parsing, validation and defaults.

Config files are YAML or JSON. Every field has a default, so ``{}`` is a
valid config describing the baseline-plus-OSSA toy run on the default fog
pair. Validation happens before any work starts and errors name the field.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .backbone import INSERTION_POINTS, ArchConfig, BackboneConfigError
from .domains import DomainSpecError, StyleSpec

MODES = ("ossa", "noise_perturbation")
PROTOTYPE_SOURCES = ("target", "source")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OssaConfig:
    enabled: bool = True
    layers: tuple[str, ...] = ("post_stem", "post_stage1")
    prob: float = 0.5
    noise_std: float = 0.75
    eps: float = 1e-5
    mode: str = "ossa"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not isinstance(self.prob, (int, float)) or not 0.0 <= self.prob <= 1.0:
            raise ConfigError(f"ossa.prob must lie in [0, 1], got {self.prob!r}")
        if not self.noise_std >= 0:
            raise ConfigError(f"ossa.noise_std must be >= 0, got {self.noise_std!r}")
        if not self.eps > 0:
            raise ConfigError(f"ossa.eps must be > 0, got {self.eps!r}")
        if self.mode not in MODES:
            raise ConfigError(f"ossa.mode must be one of {MODES}, got {self.mode!r}")
        bad = [n for n in self.layers if n not in INSERTION_POINTS]
        if bad:
            raise ConfigError(f"ossa.layers has unknown insertion points {bad}; valid: {INSERTION_POINTS}")
        if len(set(self.layers)) != len(self.layers):
            raise ConfigError("ossa.layers has duplicates")
        if self.enabled and not self.layers:
            raise ConfigError("ossa.layers must be non-empty when ossa.enabled is true")


@dataclass(frozen=True)
class DataConfig:
    n_classes: int = 4
    image_size: int = 32
    train_per_class: int = 1000
    test_per_class: int = 100
    seed: int = 1234
    source_style: StyleSpec = field(default_factory=StyleSpec)
    target_style: StyleSpec = field(default_factory=lambda: StyleSpec(fog_intensity=0.6))
    # Directories with a manifest override the generated datasets.
    source_train_dir: str | None = None
    source_test_dir: str | None = None
    target_train_dir: str | None = None
    target_test_dir: str | None = None

    def __post_init__(self):
        for name in ("n_classes", "image_size", "train_per_class", "test_per_class"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"data.{name} must be positive")


@dataclass(frozen=True)
class PrototypeConfig:
    path: str | None = None
    source: str = "target"
    count: int = 1
    selection_seed: int | None = None

    def __post_init__(self):
        if self.source not in PROTOTYPE_SOURCES:
            raise ConfigError(f"prototype.source must be one of {PROTOTYPE_SOURCES}, got {self.source!r}")
        if int(self.count) < 1:
            raise ConfigError(f"prototype.count must be >= 1, got {self.count!r}")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.03
    momentum: float = 0.9
    steps: int = 4000
    batch_size: int = 32
    decay_steps: tuple[int, ...] = (3200,)
    decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "decay_steps", tuple(int(s) for s in self.decay_steps))
        if not self.lr > 0:
            raise ConfigError(f"optim.lr must be > 0, got {self.lr!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"optim.momentum must lie in [0, 1), got {self.momentum!r}")
        if int(self.steps) < 1:
            raise ConfigError(f"optim.steps must be >= 1, got {self.steps!r}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"optim.batch_size must be >= 1, got {self.batch_size!r}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"optim.decay_factor must lie in (0, 1], got {self.decay_factor!r}")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    init_seed: int | None = None
    ossa: OssaConfig = field(default_factory=OssaConfig)
    prototype: PrototypeConfig = field(default_factory=PrototypeConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    output_dir: str | None = None

    @property
    def model_seed(self) -> int:
        return self.seed if self.init_seed is None else self.init_seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        return _listify(d)

    def with_overrides(self, overrides: dict[str, Any]) -> "TrainConfig":
        """Apply dotted-path overrides such as ``{"ossa.noise_std": 0.0}``."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config field {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config field {key!r}")
            node[parts[-1]] = value
        return parse_config(d)


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _build(cls, raw, prefix: str):
    if raw is None:
        return cls()
    if isinstance(raw, cls):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown fields in {prefix}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, DomainSpecError, BackboneConfigError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def parse_config(raw: dict | None) -> TrainConfig:
    raw = dict(raw or {})
    unknown = set(raw) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise ConfigError(f"unknown top-level config fields: {sorted(unknown)}")
    data_raw = dict(raw.get("data") or {})
    for key in ("source_style", "target_style"):
        if key in data_raw:
            data_raw[key] = _build(StyleSpec, data_raw[key], f"data.{key}")
    cfg = TrainConfig(
        seed=int(raw.get("seed", 0)),
        data=_build(DataConfig, data_raw, "data"),
        arch=_build(ArchConfig, raw.get("arch"), "arch"),
        init_seed=raw.get("init_seed"),
        ossa=_build(OssaConfig, raw.get("ossa"), "ossa"),
        prototype=_build(PrototypeConfig, raw.get("prototype"), "prototype"),
        optim=_build(OptimConfig, raw.get("optim"), "optim"),
        output_dir=raw.get("output_dir"),
    )
    if cfg.data.n_classes != cfg.arch.n_classes:
        raise ConfigError(
            f"data.n_classes ({cfg.data.n_classes}) must equal arch.n_classes ({cfg.arch.n_classes})"
        )
    if cfg.data.image_size != cfg.arch.image_size:
        raise ConfigError(
            f"data.image_size ({cfg.data.image_size}) must equal arch.image_size ({cfg.arch.image_size})"
        )
    return cfg


def load_yaml(path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def load_config(path) -> TrainConfig:
    return parse_config(load_yaml(path))


def with_seed(cfg: TrainConfig, seed: int | None) -> TrainConfig:
    return cfg if seed is None else replace(cfg, seed=int(seed))
