"""One structured run configuration shared by every command.

A YAML (or JSON) file with optional sections; anything omitted takes the
module defaults, and command-line flags override file values. Cross-field
constraints (notably the allowed FFT window / segment length pairs) are
enforced while loading, before any work starts.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .errors import ConfigError
from .net import NetworkConfig
from .segmentation import SegmentationConfig
from .train import TrainingConfig

PATH_KEYS = ("manifest", "cache_dir", "checkpoint_dir", "log", "predictions",
             "judgments")
# num_classes comes from the manifest, never from the config file.
NETWORK_KEYS = tuple(f.name for f in fields(NetworkConfig)
                     if f.name != "num_classes")
FULL_SPLIT = "full"


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    train_split: float | str = 0.9  # fraction of each species kept for training
    paths: dict[str, str] = field(default_factory=dict)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    network: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed {self.seed} outside [0, 2^64)")
        if self.threads < 1:
            raise ConfigError(f"threads {self.threads} must be >= 1")
        self.validate_split(self.train_split)
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown path keys {sorted(unknown)}")
        bad = set(self.network) - set(NETWORK_KEYS)
        if bad:
            raise ConfigError(f"unknown network options {sorted(bad)}")

    @staticmethod
    def validate_split(value) -> None:
        if value == FULL_SPLIT:
            return
        try:
            fraction = float(value)
        except (TypeError, ValueError):
            raise ConfigError(
                f"train_split must be {FULL_SPLIT!r} or a fraction, got {value!r}")
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"train_split {fraction} outside (0, 1]")

    @property
    def val_fraction(self) -> float:
        if self.train_split == FULL_SPLIT:
            return 0.0
        return 1.0 - float(self.train_split)

    def path(self, key: str) -> str | None:
        return self.paths.get(key)

    def network_config(self, num_classes: int) -> NetworkConfig:
        options = dict(self.network)
        for key in ("conv_filters", "input_shape"):
            if key in options:
                options[key] = tuple(options[key])
        try:
            return NetworkConfig(num_classes=num_classes, **options)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad network options: {exc}") from exc

    def override(self, **changes) -> "RunConfig":
        """A copy with the given non-None fields replaced."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)


def _build_section(cls, section: dict, name: str):
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    if cls is AugmentConfig and "same_class_damp_range" in section:
        section = dict(section)
        section["same_class_damp_range"] = tuple(section["same_class_damp_range"])
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad key in config section {name!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid {name} config: {exc}") from exc


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML/JSON run configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    known = {"seed", "threads", "train_split", "paths", "segmentation",
             "augment", "training", "network"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    kwargs: dict = {}
    for key in ("seed", "threads", "train_split"):
        if key in raw:
            kwargs[key] = raw[key]
    if "paths" in raw:
        if not isinstance(raw["paths"], dict):
            raise ConfigError(f"{path}: paths must be a mapping")
        kwargs["paths"] = {k: str(v) for k, v in raw["paths"].items()}
    if "network" in raw:
        if not isinstance(raw["network"], dict):
            raise ConfigError(f"{path}: network must be a mapping")
        kwargs["network"] = raw["network"]
    for key, cls in (("segmentation", SegmentationConfig),
                     ("augment", AugmentConfig),
                     ("training", TrainingConfig)):
        if key in raw:
            kwargs[key] = _build_section(cls, raw[key], key)
    return RunConfig(**kwargs)
