#!/usr/bin/env python3
"""
Run configuration management utilities.

Finds and loads YAML run configuration files, layers command-line flags on
top of them and writes the resolved configuration next to each command's
outputs.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from cough_counter.audio_io import ChannelRole
from cough_counter.detector import DetectionConfig
from cough_counter.errors import ConfigurationError, ValidationError
from cough_counter.evaluation import DEFAULT_THRESHOLDS, PipelineConfig
from cough_counter.features import N_PER_CHANNEL, order_roles
from cough_counter.mlp import Task, TrainConfig

CONFIG_FILENAME = "cough.yml"
SIDECAR_FILENAME = "run_config.yml"

# TrainConfig fields that can be set from a config file; the seed is top-level
TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "seed"]


@dataclass
class RunConfig:
    manifest: Optional[str] = None
    features_dir: Optional[str] = None
    models_dir: Optional[str] = None
    audio: List[str] = field(default_factory=list)
    task: str = Task.ACTIVITY.value
    with_csv: bool = False
    channels: List[str] = field(default_factory=lambda: [ChannelRole.AUDIO.value])
    n_selected: int = 50
    n_bins: int = 32
    threshold: float = 0.5
    thresholds: List[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    median_frames: int = 5
    merge_gap_s: float = 0.120
    min_event_frames: int = 2
    onset_tolerance_s: float = 0.100
    pseudo_event_s: float = 1.0
    train: Dict[str, Any] = field(default_factory=lambda: {k: getattr(TrainConfig(), k) for k in TRAIN_KEYS})
    seed: Optional[int] = None
    jobs: int = 1
    output_dir: Optional[str] = None
    subjects: int = 8
    sessions: int = 3

    @property
    def channel_roles(self) -> List[ChannelRole]:
        try:
            return order_roles([ChannelRole(c) for c in self.channels])
        except ValueError as e:
            raise ConfigurationError(f"Invalid channel list {self.channels}: {e}") from e

    def validate(self) -> None:
        """
        Check value ranges.

        Raises:
            ConfigurationError: If any value is out of range
        """
        total = N_PER_CHANNEL * len(self.channel_roles)
        if not 1 <= self.n_selected <= total:
            raise ConfigurationError(f"Selection size must be in [1, {total}], got {self.n_selected}")
        if self.subjects < 1 or self.sessions < 1:
            raise ConfigurationError(f"Subject and session counts must be positive, got {self.subjects} and {self.sessions}")
        if self.task not in [t.value for t in Task]:
            raise ConfigurationError(f"Unknown task '{self.task}', expected one of: {', '.join(t.value for t in Task)}")
        if self.n_bins < 2:
            raise ConfigurationError(f"Bin count must be at least 2, got {self.n_bins}")
        for t in [self.threshold, *self.thresholds]:
            if not 0.0 < t < 1.0:
                raise ConfigurationError(f"Thresholds must lie in (0, 1), got {t}")
        if sorted(set(self.thresholds)) != list(self.thresholds):
            raise ConfigurationError("Sweep thresholds must be sorted ascending without repeats")
        if self.jobs < 1 and self.jobs != -1:
            raise ConfigurationError(f"Worker count must be positive (or -1 for all cores), got {self.jobs}")
        for name in ("onset_tolerance_s", "pseudo_event_s"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"'{name}' must be positive")
        try:
            self.train_config()
            self.detection_config()
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train, seed=self.seed if self.seed is not None else 0)

    def detection_config(self, threshold: Optional[float] = None) -> DetectionConfig:
        return DetectionConfig(
            threshold=self.threshold if threshold is None else threshold,
            median_frames=self.median_frames,
            merge_gap_s=self.merge_gap_s,
            min_event_frames=self.min_event_frames,
        )

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            train=self.train_config(),
            detection=self.detection_config(),
            n_selected=self.n_selected,
            n_bins=self.n_bins,
            onset_tolerance_s=self.onset_tolerance_s,
            pseudo_event_s=self.pseudo_event_s,
            channels=self.channel_roles,
            jobs=self.jobs,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def find_run_config_file(filename: str = CONFIG_FILENAME) -> Optional[Path]:
    """Find a run config file by searching up from the current directory."""
    cwd = Path.cwd()

    for path in [cwd, *cwd.parents]:
        config_path = path / filename
        if config_path.exists():
            return config_path

    return None


def load_run_config(config_path: Union[str, Path]) -> Dict:
    """
    Load and parse a run config file.

    Args:
        config_path: Path to the YAML config file

    Returns:
        Parsed configuration dictionary (empty for an empty file)

    Raises:
        ConfigurationError: If the file cannot be parsed as a YAML mapping
    """
    with open(config_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Failed to parse run config file: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Run config file {config_path} must contain a mapping")
    return data


def _merge(values: Dict[str, Any], source: Dict[str, Any]) -> None:
    for key, value in source.items():
        if key not in values:
            raise ConfigurationError(f"Unknown configuration key '{key}'")
        if key == "train":
            if not isinstance(value, dict):
                raise ConfigurationError("'train' must be a mapping of training parameters")
            unknown = sorted(set(value) - set(TRAIN_KEYS))
            if unknown:
                raise ConfigurationError(f"Unknown training parameter(s): {', '.join(unknown)}")
            values["train"] = {**values["train"], **{k: v for k, v in value.items() if v is not None}}
        else:
            values[key] = value


def resolve_run_config(
    file_values: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Layer defaults, config file values and command-line overrides.

    Overrides that are None count as not given.

    Raises:
        ConfigurationError: On unknown keys or out-of-range values
    """
    values = RunConfig().to_dict()
    _merge(values, file_values or {})
    _merge(values, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = RunConfig(**values)
        cfg.channels = [ChannelRole(c).value for c in cfg.channels]
        cfg.thresholds = [float(t) for t in cfg.thresholds]
        cfg.audio = [str(p) for p in cfg.audio]
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e
    cfg.validate()
    return cfg


def write_run_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    """Write the resolved configuration as YAML that --config accepts again."""
    path = Path(path)
    if path.is_dir():
        path = path / SIDECAR_FILENAME
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.to_dict(), f, default_flow_style=False, sort_keys=False)
    return path
