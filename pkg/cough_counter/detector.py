#!/usr/bin/env python3
"""
Cough detector

Runs the two-network cascade on a recording: fuses the frame posteriors by
multiplication, median-smooths them, thresholds and turns runs of frames
into detected cough events.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from cough_counter.audio_io import AnnotatedRecording, ChannelRole
from cough_counter.errors import ConfigurationError, ValidationError
from cough_counter.features import FeatureMatrix, extract_features, order_roles
from cough_counter.framing import FrameGrid
from cough_counter.mlp import MlpModel, Task, TrainConfig, forward, load_model, save_model, task_dataset, task_rng, train
from cough_counter.selection import (
    DEFAULT_N_BINS,
    DEFAULT_N_SELECTED,
    SelectedFeatureSet,
    load_selection,
    save_selection,
    select_features,
)

logger = logging.getLogger(__name__)

DETECTION_COLUMNS = ["onset_s", "offset_s", "peak_posterior"]


@dataclass
class DetectionConfig:
    threshold: float = 0.5
    median_frames: int = 5
    merge_gap_s: float = 0.120
    min_event_frames: int = 2

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValidationError(f"Threshold must be in (0, 1], got {self.threshold}")
        if self.median_frames < 1 or self.median_frames % 2 == 0:
            raise ValidationError(f"Median length must be a positive odd frame count, got {self.median_frames}")
        if self.merge_gap_s < 0 or self.min_event_frames < 1:
            raise ValidationError("Merge gap must be >= 0 and minimum event length >= 1 frame")


@dataclass
class PosteriorTrack:
    values: np.ndarray
    grid: Optional[FrameGrid] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.grid is None:
            self.grid = FrameGrid(self.values.size)
        if self.grid.n_frames != self.values.size:
            raise ValidationError(f"Track has {self.values.size} values for {self.grid.n_frames} frames")
        if np.any((self.values < 0.0) | (self.values > 1.0)) or not np.all(np.isfinite(self.values)):
            raise ValidationError("Posteriors must lie in [0, 1]")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class DetectionEvent:
    onset_s: float
    offset_s: float
    peak_posterior: float

    @property
    def midpoint_s(self) -> float:
        return 0.5 * (self.onset_s + self.offset_s)


def fuse_posteriors(p_activity: Sequence[float], p_explosive: Sequence[float], grid: Optional[FrameGrid] = None) -> PosteriorTrack:
    """Elementwise product of the two networks' posteriors."""
    a = np.asarray(p_activity, dtype=np.float64).ravel()
    b = np.asarray(p_explosive, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"Posterior lengths differ: {a.size} vs {b.size}")
    return PosteriorTrack(a * b, grid)


def median_smooth(track: PosteriorTrack, width: int = 5) -> PosteriorTrack:
    """Centered running median; windows shrink at the edges."""
    if track.values.size == 0 or width <= 1:
        return PosteriorTrack(track.values.copy(), track.grid)
    half = width // 2
    padded = np.pad(track.values, half, constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return PosteriorTrack(np.nanmedian(windows, axis=1), track.grid)


def _runs(active: np.ndarray) -> np.ndarray:
    """(start, end) frame pairs of runs of True, end exclusive."""
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    return np.column_stack([np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)])


def segment_events(
    track: PosteriorTrack,
    threshold: float = 0.5,
    merge_gap_s: float = 0.120,
    min_event_frames: int = 2,
) -> List[DetectionEvent]:
    """
    Events from the frames at or above the threshold.

    Runs closer than merge_gap_s are merged, then runs shorter than
    min_event_frames are dropped. An event spans from the start of its first
    frame window to the end of its last.
    """
    grid = track.grid
    runs = _runs(track.values >= threshold)
    if runs.size == 0:
        return []

    merged = [list(runs[0])]
    for start, end in runs[1:]:
        if (start - merged[-1][1]) * grid.hop_s < merge_gap_s - 1e-9:
            merged[-1][1] = end
        else:
            merged.append([start, end])

    events = []
    for start, end in merged:
        if end - start < min_event_frames:
            continue
        events.append(
            DetectionEvent(
                onset_s=round(float(start * grid.hop_s), 6),
                offset_s=round(float((end - 1) * grid.hop_s + grid.window_s), 6),
                peak_posterior=float(track.values[start:end].max()),
            )
        )
    return events


@dataclass
class Cascade:
    """The two trained networks and their feature selections."""

    activity_model: MlpModel
    explosive_model: MlpModel
    activity_selection: SelectedFeatureSet
    explosive_selection: SelectedFeatureSet
    channels: List[ChannelRole] = field(default_factory=lambda: [ChannelRole.AUDIO])

    def __post_init__(self):
        self.channels = order_roles(self.channels)
        hashes = {
            "activity model": self.activity_model.catalog_hash,
            "explosive model": self.explosive_model.catalog_hash,
            "activity selection": self.activity_selection.catalog_hash,
            "explosive selection": self.explosive_selection.catalog_hash,
        }
        if len(set(hashes.values())) != 1:
            listed = ", ".join(f"{k}={v}" for k, v in hashes.items())
            raise ConfigurationError(f"Cascade components reference different feature catalogs: {listed}")

    @property
    def catalog_hash(self) -> str:
        return self.activity_model.catalog_hash

    def check_catalog(self, matrix: FeatureMatrix) -> None:
        if matrix.catalog.catalog_hash != self.catalog_hash:
            raise ConfigurationError(
                f"Feature catalog mismatch for '{matrix.recording}': "
                f"features {matrix.catalog.catalog_hash}, models {self.catalog_hash}"
            )

    def posteriors(self, matrix: FeatureMatrix, median_frames: int = 5) -> PosteriorTrack:
        """Fused, smoothed posterior track of a feature matrix."""
        self.check_catalog(matrix)
        p_activity = forward(self.activity_model, self.activity_selection.columns(matrix.values))
        p_explosive = forward(self.explosive_model, self.explosive_selection.columns(matrix.values))
        return median_smooth(fuse_posteriors(p_activity, p_explosive, matrix.grid), median_frames)


def _check_catalogs(matrices: Sequence[FeatureMatrix]) -> str:
    if not matrices:
        raise ValidationError("No training feature matrices")
    hashes = {m.catalog.catalog_hash for m in matrices}
    if len(hashes) != 1:
        raise ConfigurationError(f"Training matrices use different feature catalogs: {sorted(hashes)}")
    return hashes.pop()


def train_cascade(
    matrices: Sequence[FeatureMatrix],
    config: TrainConfig,
    n_selected: int = DEFAULT_N_SELECTED,
    n_bins: int = DEFAULT_N_BINS,
) -> Cascade:
    """
    Select features and train a network for each subtask.

    Selection for a task runs on the same class-balanced frames its network
    is trained on.
    """
    catalog_hash = _check_catalogs(matrices)
    catalog = matrices[0].catalog
    selections: Dict[Task, SelectedFeatureSet] = {}
    models: Dict[Task, MlpModel] = {}
    for task in Task:
        values, targets = task_dataset(matrices, task, config.negative_ratio, task_rng(config.seed, task))
        selections[task] = select_features(
            values, targets.astype(int), catalog.names, n_selected, n_bins, task.value, catalog_hash
        )
        models[task] = train(matrices, selections[task], task, config)
    return Cascade(
        models[Task.ACTIVITY],
        models[Task.EXPLOSIVE],
        selections[Task.ACTIVITY],
        selections[Task.EXPLOSIVE],
        list(catalog.channel_roles),
    )


def detect_matrix(matrix: FeatureMatrix, cascade: Cascade, config: Optional[DetectionConfig] = None) -> List[DetectionEvent]:
    config = config or DetectionConfig()
    track = cascade.posteriors(matrix, config.median_frames)
    return segment_events(track, config.threshold, config.merge_gap_s, config.min_event_frames)


def detect(
    rec: AnnotatedRecording,
    cascade: Cascade,
    threshold: Optional[float] = None,
    config: Optional[DetectionConfig] = None,
) -> List[DetectionEvent]:
    """
    Detect cough events in a recording: normalize, extract, select columns,
    run both networks, fuse, smooth and segment.

    A threshold given alongside a config replaces the config's threshold.

    Raises:
        ConfigurationError: If the extracted features do not match the models' catalog
    """
    config = config or DetectionConfig()
    if threshold is not None:
        config = replace(config, threshold=threshold)
    matrix = extract_features(rec.normalized(), cascade.channels)
    events = detect_matrix(matrix, cascade, config)
    logger.info("%s: %d cough events at threshold %.2f", rec.name, len(events), config.threshold)
    return events


CASCADE_FILES = {
    "activity_model": "activity.model",
    "explosive_model": "explosive.model",
    "activity_selection": "activity_selection.json",
    "explosive_selection": "explosive_selection.json",
    "manifest": "cascade.json",
}


def save_cascade(cascade: Cascade, directory: Union[str, Path]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_model(cascade.activity_model, directory / CASCADE_FILES["activity_model"])
    save_model(cascade.explosive_model, directory / CASCADE_FILES["explosive_model"])
    save_selection(cascade.activity_selection, directory / CASCADE_FILES["activity_selection"])
    save_selection(cascade.explosive_selection, directory / CASCADE_FILES["explosive_selection"])
    with open(directory / CASCADE_FILES["manifest"], "w", encoding="utf-8") as f:
        json.dump({"catalog_hash": cascade.catalog_hash, "channels": [r.value for r in cascade.channels]}, f, indent=2)
        f.write("\n")


def load_cascade(directory: Union[str, Path]) -> Cascade:
    directory = Path(directory)
    path = directory / CASCADE_FILES["manifest"]
    if not path.exists():
        raise FileNotFoundError(f"No trained models found in {directory}")
    with open(path, "r", encoding="utf-8") as f:
        info = json.load(f)
    return Cascade(
        load_model(directory / CASCADE_FILES["activity_model"]),
        load_model(directory / CASCADE_FILES["explosive_model"]),
        load_selection(directory / CASCADE_FILES["activity_selection"]),
        load_selection(directory / CASCADE_FILES["explosive_selection"]),
        [ChannelRole(r) for r in info["channels"]],
    )


def write_detections(events: Sequence[DetectionEvent], path: Union[str, Path]) -> None:
    """Detections CSV; header only when there are no events."""
    frame = pd.DataFrame(
        [[e.onset_s, e.offset_s, e.peak_posterior] for e in events],
        columns=DETECTION_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def read_detections(path: Union[str, Path]) -> List[DetectionEvent]:
    frame = pd.read_csv(path)
    if list(frame.columns) != DETECTION_COLUMNS:
        raise ValidationError(f"{path}: expected columns {DETECTION_COLUMNS}")
    return [DetectionEvent(float(a), float(b), float(c)) for a, b, c in frame.itertuples(index=False)]


def summarize_detections(results: Dict[str, List[DetectionEvent]], threshold: float) -> Dict:
    """Batch summary: event count and detected duration per recording."""
    recordings = [
        {
            "recording": name,
            "n_events": len(events),
            "detected_s": round(sum(e.offset_s - e.onset_s for e in events), 6),
        }
        for name, events in sorted(results.items())
    ]
    return {
        "threshold": threshold,
        "total_events": sum(r["n_events"] for r in recordings),
        "recordings": recordings,
    }
