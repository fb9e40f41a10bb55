#!/usr/bin/env python3
"""
Audio and annotation I/O

Loads WAV recordings and their CSV annotations, validates them, brings every
channel to 10 kHz and reads/writes the JSON corpus manifest.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from math import gcd
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import soundfile as sf
from scipy.signal import resample_poly

from cough_counter.errors import (
    AnnotationError,
    AudioFormatError,
    ConfigurationError,
    NumericError,
    UnsupportedRateError,
    ValidationError,
)

logger = logging.getLogger(__name__)

TARGET_SAMPLE_RATE = 10000
MIN_SOURCE_SAMPLE_RATE = 8000
ANNOTATION_COLUMNS = ["start_s", "end_s", "class"]
SUPPORTED_SUBTYPES = {"PCM_16", "PCM_24", "FLOAT"}

PathLike = Union[str, Path]


class ChannelRole(str, Enum):
    AUDIO = "audio"
    CONTACT_TRACHEA = "contact_trachea"
    CONTACT_THORAX = "contact_thorax"


# Column order of multi-channel feature matrices
CHANNEL_ORDER = [ChannelRole.AUDIO, ChannelRole.CONTACT_TRACHEA, ChannelRole.CONTACT_THORAX]


class EventClass(str, Enum):
    COUGH = "cough"
    FORCED_EXPIRATION = "forced_expiration"
    THROAT_CLEARING = "throat_clearing"
    LAUGH = "laugh"
    SPEECH = "speech"
    BACKGROUND = "background"


# Stable integer codes used in feature files
EVENT_CODES: Dict[EventClass, int] = {c: i for i, c in enumerate(EventClass)}
CODE_EVENTS: Dict[int, EventClass] = {i: c for c, i in EVENT_CODES.items()}


class SessionCondition(str, Enum):
    QUIET_SITTING = "quiet_sitting"
    TV_NOISE_SITTING = "tv_noise_sitting"
    STAIRS = "stairs"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int
    channel_role: ChannelRole = ChannelRole.AUDIO

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValidationError("Waveform samples must be a non-empty 1-D sequence")
        if int(self.sample_rate) <= 0:
            raise ValidationError(f"Invalid sample rate: {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise NumericError("Waveform contains non-finite samples")
        self.sample_rate = int(self.sample_rate)
        self.channel_role = ChannelRole(self.channel_role)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class LabeledEvent:
    start_s: float
    end_s: float
    event_class: EventClass

    @property
    def midpoint_s(self) -> float:
        return 0.5 * (self.start_s + self.end_s)

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class AnnotatedRecording:
    subject_id: str
    session_condition: SessionCondition
    channels: List[Waveform]
    events: List[LabeledEvent] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if not self.subject_id:
            raise ValidationError("subject_id must be non-empty")
        if not self.channels:
            raise ValidationError("A recording needs at least one channel")
        self.session_condition = SessionCondition(self.session_condition)
        first = self.channels[0]
        for channel in self.channels[1:]:
            if channel.sample_rate != first.sample_rate or channel.samples.size != first.samples.size:
                raise ValidationError("All channels must share sample rate and length")
        roles = [c.channel_role for c in self.channels]
        if len(set(roles)) != len(roles):
            raise ValidationError(f"Duplicate channel roles: {[r.value for r in roles]}")
        if not self.name:
            self.name = f"{self.subject_id}_{self.session_condition.value}"

    @property
    def sample_rate(self) -> int:
        return self.channels[0].sample_rate

    @property
    def duration_s(self) -> float:
        return self.channels[0].duration_s

    @property
    def roles(self) -> List[ChannelRole]:
        return [c.channel_role for c in self.channels]

    def channel(self, role: ChannelRole) -> Waveform:
        """Return the waveform for a channel role, or raise ConfigurationError."""
        role = ChannelRole(role)
        for channel in self.channels:
            if channel.channel_role == role:
                return channel
        raise ConfigurationError(f"Recording '{self.name}' has no '{role.value}' channel")

    def scaled(self, gain: float) -> "AnnotatedRecording":
        """Copy of the recording with every channel multiplied by gain."""
        channels = [Waveform(c.samples * gain, c.sample_rate, c.channel_role) for c in self.channels]
        return AnnotatedRecording(self.subject_id, self.session_condition, channels, list(self.events), self.name)

    def normalized(self) -> "AnnotatedRecording":
        """Copy with every channel scaled to unit peak, as load_recording does."""
        channels = [Waveform(normalize_peak(c.samples), c.sample_rate, c.channel_role) for c in self.channels]
        return AnnotatedRecording(self.subject_id, self.session_condition, channels, list(self.events), self.name)


@dataclass
class ManifestEntry:
    audio: Path
    labels: Path
    subject: str
    condition: SessionCondition
    channels: List[ChannelRole]


@dataclass
class CorpusManifest:
    entries: List[ManifestEntry]

    @property
    def subjects(self) -> List[str]:
        return sorted({e.subject for e in self.entries})


def resample_to_10khz(w: Waveform) -> Waveform:
    """
    Bring a waveform to 10 kHz with polyphase band-limited interpolation.

    Args:
        w: Source waveform, sampled at 8 kHz or more

    Returns:
        The same object when already at 10 kHz, otherwise a new Waveform

    Raises:
        UnsupportedRateError: If the source rate is below 8 kHz
    """
    if w.sample_rate == TARGET_SAMPLE_RATE:
        return w
    if w.sample_rate < MIN_SOURCE_SAMPLE_RATE:
        raise UnsupportedRateError(
            f"Sample rate {w.sample_rate} Hz is below {MIN_SOURCE_SAMPLE_RATE} Hz; "
            "content above 4 kHz cannot be synthesized"
        )
    g = gcd(TARGET_SAMPLE_RATE, w.sample_rate)
    up, down = TARGET_SAMPLE_RATE // g, w.sample_rate // g
    samples = resample_poly(w.samples, up, down)
    return Waveform(samples, TARGET_SAMPLE_RATE, w.channel_role)


def normalize_peak(samples: np.ndarray) -> np.ndarray:
    """Scale samples by their maximum absolute value; silence is left untouched."""
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak <= 0.0:
        return samples.astype(np.float64)
    return samples / peak


def read_wav(audio_path: PathLike) -> tuple:
    """
    Read a PCM 16/24-bit or float32 WAV file.

    Returns:
        (samples as float64 array of shape (n_samples, n_channels), sample_rate)

    Raises:
        AudioFormatError: If the file is not a readable WAV of a supported subtype
    """
    audio_path = Path(audio_path)
    try:
        info = sf.info(str(audio_path))
    except (RuntimeError, sf.LibsndfileError) as e:
        raise AudioFormatError(f"Malformed WAV file {audio_path}: {e}") from e
    if info.format != "WAV" or info.subtype not in SUPPORTED_SUBTYPES:
        raise AudioFormatError(
            f"Unsupported audio format in {audio_path}: {info.format}/{info.subtype}"
        )
    try:
        data, sample_rate = sf.read(str(audio_path), dtype="float64", always_2d=True)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise AudioFormatError(f"Malformed WAV file {audio_path}: {e}") from e
    if data.shape[0] == 0:
        raise AudioFormatError(f"WAV file {audio_path} contains no samples")
    return data, int(sample_rate)


def write_wav(path: PathLike, recording: AnnotatedRecording) -> None:
    """Write every channel of a recording as 16-bit PCM, channel order preserved."""
    data = np.stack([c.samples for c in recording.channels], axis=1)
    sf.write(str(path), np.clip(data, -1.0, 1.0), recording.sample_rate, subtype="PCM_16")


def validate_events(events: Sequence[LabeledEvent], duration_s: float) -> None:
    """
    Check range and non-overlap of annotated events.

    Rows are reported 1-based in the order given (the header is not a row).

    Raises:
        AnnotationError: Listing every offending row
    """
    bad_rows = []
    tolerance = 1e-9
    for row, event in enumerate(events, start=1):
        if not (0.0 <= event.start_s < event.end_s <= duration_s + tolerance):
            bad_rows.append(row)
    if bad_rows:
        raise AnnotationError("Annotation out of range or end before start", bad_rows)

    order = sorted(range(len(events)), key=lambda i: (events[i].start_s, events[i].end_s))
    overlapping = set()
    for a, b in zip(order, order[1:]):
        if events[b].start_s < events[a].end_s - tolerance:
            overlapping.update((a + 1, b + 1))
    if overlapping:
        raise AnnotationError("Overlapping annotations", sorted(overlapping))


def _format_seconds(value: float) -> str:
    return np.format_float_positional(float(value), unique=True, min_digits=3, trim="k")


def load_annotations(annotation_path: PathLike) -> List[LabeledEvent]:
    """
    Parse an annotation CSV with header `start_s,end_s,class`.

    An empty file (or a header without rows) yields no events.

    Raises:
        AnnotationError: On a wrong header, unparsable numbers or unknown classes
    """
    annotation_path = Path(annotation_path)
    try:
        frame = pd.read_csv(annotation_path, dtype=str, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        return []
    columns = [c.strip() for c in frame.columns]
    if columns != ANNOTATION_COLUMNS:
        raise AnnotationError(
            f"Annotation file {annotation_path} must have header {','.join(ANNOTATION_COLUMNS)}"
        )

    events = []
    bad_rows = []
    for row, (start, end, label) in enumerate(frame.itertuples(index=False, name=None), start=1):
        try:
            events.append(LabeledEvent(float(start), float(end), EventClass(str(label).strip())))
        except (TypeError, ValueError):
            bad_rows.append(row)
    if bad_rows:
        raise AnnotationError(f"Unparsable annotation rows in {annotation_path}", bad_rows)
    return events


def write_annotations(events: Sequence[LabeledEvent], annotation_path: PathLike) -> None:
    """Write events as UTF-8 CSV with at least three fractional digits."""
    frame = pd.DataFrame(
        {
            "start_s": [_format_seconds(e.start_s) for e in events],
            "end_s": [_format_seconds(e.end_s) for e in events],
            "class": [e.event_class.value for e in events],
        },
        columns=ANNOTATION_COLUMNS,
    )
    frame.to_csv(annotation_path, index=False, encoding="utf-8", lineterminator="\n")


def load_recording(
    audio_path: PathLike,
    annotation_path: Optional[PathLike] = None,
    subject_id: Optional[str] = None,
    session_condition: SessionCondition = SessionCondition.QUIET_SITTING,
    channel_roles: Optional[Sequence[ChannelRole]] = None,
) -> AnnotatedRecording:
    """
    Load a recording, resample it to 10 kHz and attach validated annotations.

    Args:
        audio_path: WAV file, mono or multi-channel
        annotation_path: Annotation CSV; None means no events
        subject_id: Subject identifier (defaults to the audio file stem)
        session_condition: Recording condition
        channel_roles: Role of each WAV channel, audio first by default

    Returns:
        AnnotatedRecording with each channel peak-normalized to [-1, 1]
    """
    audio_path = Path(audio_path)
    data, sample_rate = read_wav(audio_path)
    n_channels = data.shape[1]
    if channel_roles is None:
        channel_roles = CHANNEL_ORDER[:n_channels]
    channel_roles = [ChannelRole(r) for r in channel_roles]
    if len(channel_roles) != n_channels:
        raise ConfigurationError(
            f"{audio_path} has {n_channels} channel(s) but {len(channel_roles)} role(s) were declared"
        )

    channels = []
    for index, role in enumerate(channel_roles):
        waveform = resample_to_10khz(Waveform(data[:, index], sample_rate, role))
        channels.append(Waveform(normalize_peak(waveform.samples), waveform.sample_rate, role))

    events: List[LabeledEvent] = []
    if annotation_path is not None:
        events = load_annotations(annotation_path)
        validate_events(events, channels[0].duration_s)
    logger.debug("Loaded %s: %d channel(s), %d event(s)", audio_path, len(channels), len(events))

    return AnnotatedRecording(
        subject_id=subject_id or audio_path.stem,
        session_condition=session_condition,
        channels=channels,
        events=sorted(events, key=lambda e: e.start_s),
        name=audio_path.stem,
    )


def load_manifest(manifest_path: PathLike, check_files: bool = True) -> CorpusManifest:
    """
    Load a corpus manifest: a JSON array of objects with keys
    `audio`, `labels`, `subject`, `condition`, `channels`.

    Relative paths are resolved against the manifest's directory.

    Raises:
        ConfigurationError: On malformed JSON, missing keys or missing files
    """
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Failed to parse manifest {manifest_path}: {e}") from e
    if not isinstance(raw, list):
        raise ConfigurationError(f"Manifest {manifest_path} must be a JSON array")

    base = manifest_path.parent
    entries = []
    for index, item in enumerate(raw, start=1):
        try:
            entry = ManifestEntry(
                audio=base / item["audio"],
                labels=base / item["labels"],
                subject=str(item["subject"]),
                condition=SessionCondition(item["condition"]),
                channels=[ChannelRole(c) for c in item["channels"]],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid manifest entry {index} in {manifest_path}: {e}") from e
        if not entry.subject:
            raise ConfigurationError(f"Manifest entry {index} has an empty subject")
        if check_files:
            for path in (entry.audio, entry.labels):
                if not path.exists():
                    raise FileNotFoundError(f"Manifest entry {index} references missing file {path}")
        entries.append(entry)
    return CorpusManifest(entries)


def write_manifest(manifest: CorpusManifest, manifest_path: PathLike) -> None:
    """Write a manifest with paths relative to its own directory when possible."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent

    def _rel(path: Path) -> str:
        try:
            return Path(path).relative_to(base).as_posix()
        except ValueError:
            return str(path)

    payload = [
        {
            "audio": _rel(e.audio),
            "labels": _rel(e.labels),
            "subject": e.subject,
            "condition": e.condition.value,
            "channels": [c.value for c in e.channels],
        }
        for e in manifest.entries
    ]
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def load_manifest_recordings(manifest: CorpusManifest) -> List[AnnotatedRecording]:
    """Load every recording listed in a manifest, in manifest order."""
    return [
        load_recording(e.audio, e.labels, e.subject, e.condition, e.channels)
        for e in manifest.entries
    ]
