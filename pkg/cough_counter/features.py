#!/usr/bin/env python3
"""
Feature extraction

Builds the 222-column per-frame feature matrix of each channel (74 base
descriptors with first and second derivatives), labels frames from the
annotations and reads/writes the columnar feature file format.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from cough_counter import descriptors as d
from cough_counter.audio_io import (
    CHANNEL_ORDER,
    CODE_EVENTS,
    EVENT_CODES,
    AnnotatedRecording,
    ChannelRole,
    EventClass,
    LabeledEvent,
    SessionCondition,
    Waveform,
)
from cough_counter.errors import ConfigurationError, ValidationError
from cough_counter.framing import FrameGrid, frame_signal, magnitude_spectrum

logger = logging.getLogger(__name__)

EXPLOSIVE_PHASE_S = 0.060
SRH_CONTEXT_S = 0.060
CHUNK_FRAMES = 1024

FEATURE_FILE_MAGIC = b"CFMX"
FEATURE_FILE_VERSION = 1

BASE_DESCRIPTORS: List[str] = (
    [f"mfcc_{i}" for i in range(d.N_MFCC)]
    + [f"bark_loudness_{i + 1}" for i in range(len(d.BARK_EDGES_HZ) - 1)]
    + [f"subband_energy_{i + 1}" for i in range(d.N_SUBBANDS)]
    + ["spectral_centroid", "spectral_spread", "spectral_decrease", "spectral_variation", "spectral_flux"]
    + ["log_energy", "total_loudness"]
    + [f"hnr_{i + 1}" for i in range(len(d.NOISE_BANDS_HZ))]
    + [f"flatness_{i + 1}" for i in range(len(d.NOISE_BANDS_HZ))]
    + ["zero_crossing_rate", "f0", "periodicity", "chirp_group_delay"]
)
N_BASE = 74
N_PER_CHANNEL = 3 * N_BASE


def _band_definitions() -> Dict[str, List[List[float]]]:
    subband_edges = np.linspace(0.0, d.MAX_FREQ_HZ, d.N_SUBBANDS + 1).tolist()
    return {
        "bark_loudness": [list(p) for p in zip(d.BARK_EDGES_HZ[:-1], d.BARK_EDGES_HZ[1:])],
        "subband_energy": [list(p) for p in zip(subband_edges[:-1], subband_edges[1:])],
        "hnr": [list(b) for b in d.NOISE_BANDS_HZ],
        "flatness": [list(b) for b in d.NOISE_BANDS_HZ],
        "mfcc": [[0.0, d.MAX_FREQ_HZ]],
    }


@dataclass
class FeatureCatalog:
    """Ordered column names of a feature matrix, with band definitions and channel roles."""

    names: List[str]
    channel_roles: List[ChannelRole]
    bands: Dict[str, List[List[float]]] = field(default_factory=_band_definitions)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("Feature catalog names must be unique")
        self.channel_roles = [ChannelRole(r) for r in self.channel_roles]

    @classmethod
    def for_channels(cls, roles: Sequence[ChannelRole]) -> "FeatureCatalog":
        """Standard catalog: 222 columns per channel, channels in canonical role order."""
        roles = order_roles(roles)
        assert len(BASE_DESCRIPTORS) == N_BASE, "descriptor bank must have 74 base features"
        per_channel = BASE_DESCRIPTORS + [f"d_{n}" for n in BASE_DESCRIPTORS] + [f"dd_{n}" for n in BASE_DESCRIPTORS]
        assert len(per_channel) == N_PER_CHANNEL
        names = [f"{role.value}:{name}" for role in roles for name in per_channel]
        return cls(names, list(roles))

    def __len__(self) -> int:
        return len(self.names)

    @property
    def catalog_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def columns_for(self, roles: Sequence[ChannelRole]) -> List[int]:
        prefixes = tuple(f"{ChannelRole(r).value}:" for r in roles)
        return [i for i, name in enumerate(self.names) if name.startswith(prefixes)]

    def to_dict(self) -> Dict:
        return {
            "names": list(self.names),
            "channel_roles": [r.value for r in self.channel_roles],
            "bands": self.bands,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureCatalog":
        return cls(list(data["names"]), [ChannelRole(r) for r in data["channel_roles"]], data.get("bands") or {})


def order_roles(roles: Sequence[ChannelRole]) -> List[ChannelRole]:
    """Canonical channel order (audio first); duplicates rejected."""
    roles = [ChannelRole(r) for r in roles]
    if not roles:
        raise ConfigurationError("At least one channel role is required")
    if len(set(roles)) != len(roles):
        raise ConfigurationError(f"Duplicate channel roles: {[r.value for r in roles]}")
    return sorted(roles, key=CHANNEL_ORDER.index)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    labels: np.ndarray
    explosive: np.ndarray
    catalog: FeatureCatalog
    grid: FrameGrid
    subject_id: str
    session_condition: SessionCondition = SessionCondition.QUIET_SITTING
    recording: str = ""
    events: List[LabeledEvent] = field(default_factory=list)
    duration_s: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.explosive = np.asarray(self.explosive, dtype=bool)
        n = self.values.shape[0]
        if self.labels.shape != (n,) or self.explosive.shape != (n,):
            raise ValidationError("Label and explosive-flag counts must equal the frame count")
        if self.values.shape[1] != len(self.catalog):
            raise ValidationError(
                f"Feature matrix has {self.values.shape[1]} columns but catalog lists {len(self.catalog)}"
            )
        if np.any(self.explosive & (self.labels != EVENT_CODES[EventClass.COUGH])):
            raise ValidationError("Explosive-phase frames must be labeled cough")
        self.session_condition = SessionCondition(self.session_condition)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def class_labels(self) -> List[EventClass]:
        return [CODE_EVENTS[int(c)] for c in self.labels]

    def is_class(self, *classes: EventClass) -> np.ndarray:
        codes = [EVENT_CODES[EventClass(c)] for c in classes]
        return np.isin(self.labels, codes)

    def select_channels(self, roles: Sequence[ChannelRole]) -> "FeatureMatrix":
        """Matrix restricted to the columns of the given channel roles."""
        roles = order_roles(roles)
        missing = [r.value for r in roles if r not in self.catalog.channel_roles]
        if missing:
            raise ConfigurationError(f"Feature matrix '{self.recording}' has no columns for {missing}")
        columns = self.catalog.columns_for(roles)
        catalog = FeatureCatalog([self.catalog.names[i] for i in columns], roles, self.catalog.bands)
        return FeatureMatrix(
            self.values[:, columns], self.labels, self.explosive, catalog, self.grid,
            self.subject_id, self.session_condition, self.recording, list(self.events), self.duration_s,
        )


def frame_labels(
    grid: FrameGrid, events: Sequence[LabeledEvent], explosive_s: float = EXPLOSIVE_PHASE_S
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-frame class codes and explosive-phase flags.

    A frame takes the class that covers most of its window (ties go to the
    annotated class, unlabeled time is background). It is flagged explosive
    when its window midpoint lies within the first 60 ms of a cough.
    """
    starts = grid.frame_starts_s
    window = grid.window_s
    centers = grid.frame_centers_s
    background = EVENT_CODES[EventClass.BACKGROUND]
    labels = np.full(grid.n_frames, background, dtype=np.int64)
    best = np.zeros(grid.n_frames)
    covered = np.zeros(grid.n_frames)
    explosive = np.zeros(grid.n_frames, dtype=bool)

    for event in events:
        overlap = np.minimum(starts + window, event.end_s) - np.maximum(starts, event.start_s)
        overlap = np.maximum(overlap, 0.0)
        covered += overlap
        better = overlap > best
        best[better] = overlap[better]
        labels[better] = EVENT_CODES[event.event_class]
        if event.event_class == EventClass.COUGH:
            explosive |= (centers >= event.start_s) & (centers < event.start_s + explosive_s)

    labels[best < (window - covered) - 1e-12] = background
    labels[best <= 0.0] = background
    labels[explosive] = EVENT_CODES[EventClass.COUGH]
    return labels, explosive


def _srh_contexts(samples: np.ndarray, grid: FrameGrid, rows: slice) -> np.ndarray:
    half = int(round(SRH_CONTEXT_S * grid.sample_rate / 2))
    padded = np.pad(samples, half)
    centers = grid.frame_starts[rows] + grid.window // 2
    view = np.lib.stride_tricks.sliding_window_view(padded, 2 * half)
    # padded index of (center - half) is center
    return view[centers]


def extract_channel(w: Waveform) -> Tuple[FrameGrid, np.ndarray]:
    """
    The 222 per-frame features of one channel.

    Returns:
        (FrameGrid, array of shape (n_frames, 222))
    """
    grid, frames = frame_signal(w)
    if grid.n_frames < 5:
        raise ValidationError(f"Need at least 5 frames for derivatives, got {grid.n_frames}")
    base = np.empty((grid.n_frames, N_BASE))
    last_magnitudes: Optional[np.ndarray] = None

    for start in range(0, grid.n_frames, CHUNK_FRAMES):
        rows = slice(start, min(start + CHUNK_FRAMES, grid.n_frames))
        chunk = frames[rows]
        spec = magnitude_spectrum(chunk, w.sample_rate)
        previous = spec.previous()
        if last_magnitudes is not None:
            previous.magnitudes[0] = last_magnitudes
        last_magnitudes = spec.magnitudes[-1].copy()

        bark = d.bark_loudness(spec)
        base[rows] = np.concatenate(
            [
                d.mfcc(spec),
                bark,
                d.relative_subband_energy(spec),
                d.spectral_shape(spec, previous),
                d.energy_and_total_loudness(chunk, bark),
                d.hnr_bands(chunk, w.sample_rate),
                d.spectral_flatness_bands(spec),
                d.zero_crossing_rate(chunk)[:, None],
                d.srh_f0_and_periodicity(_srh_contexts(w.samples, grid, rows), w.sample_rate),
                d.chirp_group_delay(chunk, w.sample_rate)[:, None],
            ],
            axis=1,
        )

    values = d.add_derivatives(base)
    bad = ~np.isfinite(values)
    if np.any(bad):
        logger.warning("Sanitized %d non-finite feature values", int(bad.sum()))
        values = np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0)
    return grid, values


def extract_features(
    rec: AnnotatedRecording, channels: Sequence[ChannelRole] = (ChannelRole.AUDIO,)
) -> FeatureMatrix:
    """
    Feature matrix of a recording for the requested channel roles.

    Channels are concatenated in canonical role order (audio first), 222
    columns each.

    Raises:
        ConfigurationError: If a requested channel is missing from the recording
    """
    roles = order_roles(channels)
    blocks = []
    grid = None
    for role in roles:
        grid, values = extract_channel(rec.channel(role))
        blocks.append(values)
    labels, explosive = frame_labels(grid, rec.events)
    logger.info("Extracted %s: %d frames x %d features", rec.name, grid.n_frames, len(roles) * N_PER_CHANNEL)
    return FeatureMatrix(
        values=np.concatenate(blocks, axis=1),
        labels=labels,
        explosive=explosive,
        catalog=FeatureCatalog.for_channels(roles),
        grid=grid,
        subject_id=rec.subject_id,
        session_condition=rec.session_condition,
        recording=rec.name,
        events=list(rec.events),
        duration_s=rec.duration_s,
    )


def extract_corpus(
    recordings: Sequence[AnnotatedRecording],
    channels: Sequence[ChannelRole] = (ChannelRole.AUDIO,),
    n_jobs: int = 1,
) -> List[FeatureMatrix]:
    """Extract every recording, in input order, with up to n_jobs workers."""
    for rec in recordings:
        for role in channels:
            rec.channel(role)
    return Parallel(n_jobs=n_jobs)(delayed(extract_features)(rec, channels) for rec in recordings)


def write_feature_matrix(matrix: FeatureMatrix, path: Union[str, Path]) -> None:
    """
    Write a feature file: magic, header length, JSON header, then column-major
    little-endian float32 values followed by uint8 labels and explosive flags.
    """
    header = {
        "version": FEATURE_FILE_VERSION,
        "catalog": matrix.catalog.to_dict(),
        "catalog_hash": matrix.catalog.catalog_hash,
        "subject": matrix.subject_id,
        "condition": matrix.session_condition.value,
        "recording": matrix.recording,
        "sample_rate": matrix.grid.sample_rate,
        "hop_s": matrix.grid.hop_s,
        "window_s": matrix.grid.window_s,
        "n_frames": matrix.n_frames,
        "n_columns": matrix.values.shape[1],
        "duration_s": matrix.duration_s,
        "events": [[e.start_s, e.end_s, e.event_class.value] for e in matrix.events],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(FEATURE_FILE_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(np.asfortranarray(matrix.values, dtype="<f4").tobytes(order="F"))
        f.write(matrix.labels.astype(np.uint8).tobytes())
        f.write(matrix.explosive.astype(np.uint8).tobytes())


def read_feature_matrix(path: Union[str, Path]) -> FeatureMatrix:
    """Read a file written by write_feature_matrix."""
    path = Path(path)
    with open(path, "rb") as f:
        payload = f.read()
    if payload[:4] != FEATURE_FILE_MAGIC:
        raise ValidationError(f"{path} is not a feature file")
    (header_len,) = struct.unpack("<I", payload[4:8])
    try:
        header = json.loads(payload[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"Corrupt feature file header in {path}: {e}") from e
    n, m = header["n_frames"], header["n_columns"]
    offset = 8 + header_len
    values = np.frombuffer(payload, dtype="<f4", count=n * m, offset=offset).reshape((n, m), order="F")
    offset += 4 * n * m
    labels = np.frombuffer(payload, dtype=np.uint8, count=n, offset=offset)
    explosive = np.frombuffer(payload, dtype=np.uint8, count=n, offset=offset + n)
    return FeatureMatrix(
        values=values.astype(np.float64),
        labels=labels.astype(np.int64),
        explosive=explosive.astype(bool),
        catalog=FeatureCatalog.from_dict(header["catalog"]),
        grid=FrameGrid(n, header["sample_rate"], header["hop_s"], header["window_s"]),
        subject_id=header["subject"],
        session_condition=SessionCondition(header["condition"]),
        recording=header["recording"],
        events=[LabeledEvent(float(s), float(e), EventClass(c)) for s, e, c in header["events"]],
        duration_s=float(header["duration_s"]),
    )


def export_csv(matrix: FeatureMatrix, path: Union[str, Path]) -> None:
    """Debug export: one row per frame with timing, label, explosive flag and every feature."""
    frame = pd.DataFrame(matrix.values, columns=matrix.catalog.names)
    frame.insert(0, "explosive", matrix.explosive.astype(int))
    frame.insert(0, "label", [c.value for c in matrix.class_labels])
    frame.insert(0, "time_s", matrix.grid.frame_centers_s)
    frame.to_csv(path, index=False, float_format="%.6g")


def write_catalog(catalog: FeatureCatalog, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({**catalog.to_dict(), "catalog_hash": catalog.catalog_hash}, f, indent=2)
        f.write("\n")


def read_feature_directory(directory: Union[str, Path]) -> List[FeatureMatrix]:
    """Every `*.features` file of a directory, sorted by file name."""
    paths = sorted(Path(directory).glob("*.features"))
    if not paths:
        raise FileNotFoundError(f"No feature files found in {directory}")
    return [read_feature_matrix(p) for p in paths]
