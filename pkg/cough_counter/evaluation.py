#!/usr/bin/env python3
"""
Evaluation

Event matching, sensitivity/specificity scoring, leave-one-subject-out
cross-validation, threshold sweeps and the per-class confusion table.
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from cough_counter.audio_io import AnnotatedRecording, ChannelRole, EventClass, LabeledEvent, SessionCondition
from cough_counter.detector import (
    Cascade,
    DetectionConfig,
    DetectionEvent,
    PosteriorTrack,
    segment_events,
    train_cascade,
)
from cough_counter.errors import ValidationError
from cough_counter.features import FeatureMatrix, extract_corpus
from cough_counter.mlp import TrainConfig
from cough_counter.selection import DEFAULT_N_BINS, DEFAULT_N_SELECTED

logger = logging.getLogger(__name__)

ONSET_TOLERANCE_S = 0.100
PSEUDO_EVENT_S = 1.0
NEGATIVE_EVENT_CLASSES = (EventClass.FORCED_EXPIRATION, EventClass.THROAT_CLEARING, EventClass.LAUGH)
SPAN_CLASSES = (EventClass.SPEECH, EventClass.BACKGROUND)
DEFAULT_THRESHOLDS = [round(0.05 * i, 2) for i in range(1, 20)]


@dataclass
class PipelineConfig:
    """Everything a cross-validation run needs besides the data."""

    train: TrainConfig = field(default_factory=TrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    n_selected: int = DEFAULT_N_SELECTED
    n_bins: int = DEFAULT_N_BINS
    onset_tolerance_s: float = ONSET_TOLERANCE_S
    pseudo_event_s: float = PSEUDO_EVENT_S
    channels: List[ChannelRole] = field(default_factory=lambda: [ChannelRole.AUDIO])
    jobs: int = 1


@dataclass
class EventMatchResult:
    true_positives: int
    misses: int
    false_alarms: int
    false_alarm_classes: List[EventClass]
    matched: List[Tuple[DetectionEvent, LabeledEvent]]
    unmatched_detections: List[DetectionEvent]
    missed_coughs: List[LabeledEvent]


def _covering_class(t: float, truth: Sequence[LabeledEvent]) -> EventClass:
    for event in truth:
        if event.start_s <= t < event.end_s:
            return event.event_class
    return EventClass.BACKGROUND


def match_events(
    detections: Sequence[DetectionEvent],
    truth: Sequence[LabeledEvent],
    onset_tolerance_s: float = ONSET_TOLERANCE_S,
) -> EventMatchResult:
    """
    Greedy one-to-one matching of detections to annotated coughs in onset order.

    A detection matches the first unmatched cough it overlaps or whose onset
    lies within the tolerance of its own. Unmatched detections are false alarms
    attributed to the class annotated at their midpoint.
    """
    detections = sorted(detections, key=lambda e: (e.onset_s, e.offset_s, e.peak_posterior))
    truth = sorted(truth, key=lambda e: (e.start_s, e.end_s))
    coughs = [e for e in truth if e.event_class == EventClass.COUGH]
    taken = [False] * len(coughs)
    matched, unmatched = [], []

    for det in detections:
        for i, cough in enumerate(coughs):
            if taken[i]:
                continue
            overlaps = det.onset_s < cough.end_s and det.offset_s > cough.start_s
            if overlaps or abs(det.onset_s - cough.start_s) <= onset_tolerance_s + 1e-9:
                taken[i] = True
                matched.append((det, cough))
                break
        else:
            unmatched.append(det)

    return EventMatchResult(
        true_positives=len(matched),
        misses=len(coughs) - len(matched),
        false_alarms=len(unmatched),
        false_alarm_classes=[_covering_class(d.midpoint_s, truth) for d in unmatched],
        matched=matched,
        unmatched_detections=unmatched,
        missed_coughs=[c for c, t in zip(coughs, taken) if not t],
    )


def _chop(start: float, end: float, unit_s: float) -> List[Tuple[float, float]]:
    """Split a span into pseudo-events of about unit_s; spans under half a unit are dropped."""
    length = end - start
    if length < 0.5 * unit_s:
        return []
    n = max(1, int(round(length / unit_s)))
    bounds = np.linspace(start, end, n + 1)
    return list(zip(bounds[:-1], bounds[1:]))


def negative_units(
    truth: Sequence[LabeledEvent], duration_s: float, pseudo_event_s: float = PSEUDO_EVENT_S
) -> List[Tuple[float, float, EventClass]]:
    """Annotated non-cough events plus speech and background spans chopped into pseudo-events."""
    truth = sorted(truth, key=lambda e: e.start_s)
    units = []
    cursor = 0.0
    for event in truth:
        if event.start_s > cursor:
            units += [(s, e, EventClass.BACKGROUND) for s, e in _chop(cursor, event.start_s, pseudo_event_s)]
        if event.event_class in NEGATIVE_EVENT_CLASSES:
            units.append((event.start_s, event.end_s, event.event_class))
        elif event.event_class == EventClass.SPEECH:
            units += [(s, e, EventClass.SPEECH) for s, e in _chop(event.start_s, event.end_s, pseudo_event_s)]
        cursor = max(cursor, event.end_s)
    if duration_s > cursor:
        units += [(s, e, EventClass.BACKGROUND) for s, e in _chop(cursor, duration_s, pseudo_event_s)]
    return units


@dataclass
class RecordingScore:
    recording: str
    subject_id: str
    condition: SessionCondition
    true_positives: int
    misses: int
    false_alarms: int
    negatives: int
    flagged_negatives: int
    false_alarm_classes: Dict[str, int]
    event_counts: Dict[str, int]
    class_seconds: Dict[str, float]

    @property
    def coughs(self) -> int:
        return self.true_positives + self.misses


def score_recording(
    match: EventMatchResult,
    truth: Sequence[LabeledEvent],
    duration_s: Optional[float] = None,
    pseudo_event_s: float = PSEUDO_EVENT_S,
    recording: str = "",
    subject_id: str = "",
    condition: SessionCondition = SessionCondition.QUIET_SITTING,
) -> RecordingScore:
    """Raw counts of one recording; a negative unit is flagged if a false alarm's midpoint falls inside it."""
    if duration_s is None:
        ends = [e.end_s for e in truth] + [d.offset_s for d, _ in match.matched]
        ends += [d.offset_s for d in match.unmatched_detections]
        duration_s = max(ends, default=0.0)
    units = negative_units(truth, duration_s, pseudo_event_s)
    midpoints = np.array([d.midpoint_s for d in match.unmatched_detections])
    flagged = sum(1 for s, e, _ in units if midpoints.size and np.any((midpoints >= s) & (midpoints < e)))

    event_counts = Counter(e.event_class.value for e in truth)
    seconds = defaultdict(float)
    for e in truth:
        seconds[e.event_class.value] += e.duration_s
    seconds[EventClass.BACKGROUND.value] = max(0.0, duration_s - sum(e.duration_s for e in truth))

    return RecordingScore(
        recording=recording,
        subject_id=subject_id,
        condition=SessionCondition(condition),
        true_positives=match.true_positives,
        misses=match.misses,
        false_alarms=match.false_alarms,
        negatives=len(units),
        flagged_negatives=flagged,
        false_alarm_classes=dict(Counter(c.value for c in match.false_alarm_classes)),
        event_counts=dict(event_counts),
        class_seconds=dict(seconds),
    )


def _percent(numerator: int, denominator: int) -> Optional[float]:
    return 100.0 * numerator / denominator if denominator else None


def _rates(scores: Sequence[RecordingScore]) -> Tuple[Optional[float], Optional[float]]:
    tp = sum(s.true_positives for s in scores)
    coughs = sum(s.coughs for s in scores)
    negatives = sum(s.negatives for s in scores)
    flagged = sum(s.flagged_negatives for s in scores)
    return _percent(tp, coughs), _percent(negatives - flagged, negatives)


@dataclass
class ConfusionRow:
    event_class: str
    total: float
    unit: str
    detected_as_cough: int


def confusion_table(scores: Sequence[RecordingScore]) -> List[ConfusionRow]:
    """
    Per-class repartition of detections: matched coughs against annotated
    coughs, false alarms against event counts for the parasitic event
    classes and against total seconds for speech and background.
    """
    rows = [
        ConfusionRow(
            EventClass.COUGH.value,
            sum(s.coughs for s in scores),
            "events",
            sum(s.true_positives for s in scores),
        )
    ]
    for cls in NEGATIVE_EVENT_CLASSES:
        rows.append(
            ConfusionRow(
                cls.value,
                sum(s.event_counts.get(cls.value, 0) for s in scores),
                "events",
                sum(s.false_alarm_classes.get(cls.value, 0) for s in scores),
            )
        )
    for cls in SPAN_CLASSES:
        rows.append(
            ConfusionRow(
                cls.value,
                round(sum(s.class_seconds.get(cls.value, 0.0) for s in scores), 3),
                "s",
                sum(s.false_alarm_classes.get(cls.value, 0) for s in scores),
            )
        )
    return rows


@dataclass
class SubjectRow:
    subject_id: str
    sensitivity: Optional[float]
    specificity: Optional[float]
    coughs: int
    negatives: int


def _mean_std(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    return float(np.mean(present)), float(np.std(present))


@dataclass
class EvaluationReport:
    threshold: float
    scores: List[RecordingScore]
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    subjects: List[SubjectRow] = field(default_factory=list)
    mean_sensitivity: Optional[float] = None
    std_sensitivity: Optional[float] = None
    mean_specificity: Optional[float] = None
    std_specificity: Optional[float] = None
    confusion: List[ConfusionRow] = field(default_factory=list)

    @classmethod
    def from_scores(cls, scores: Sequence[RecordingScore], threshold: float) -> "EvaluationReport":
        """Event-pooled rates plus per-subject rows with their mean and standard deviation."""
        scores = sorted(scores, key=lambda s: (s.subject_id, s.recording))
        by_subject: Dict[str, List[RecordingScore]] = defaultdict(list)
        for s in scores:
            by_subject[s.subject_id].append(s)
        subjects = []
        for subject in sorted(by_subject):
            sens, spec = _rates(by_subject[subject])
            subjects.append(
                SubjectRow(
                    subject, sens, spec,
                    sum(s.coughs for s in by_subject[subject]),
                    sum(s.negatives for s in by_subject[subject]),
                )
            )
        sensitivity, specificity = _rates(scores)
        mean_sens, std_sens = _mean_std([r.sensitivity for r in subjects])
        mean_spec, std_spec = _mean_std([r.specificity for r in subjects])
        return cls(
            threshold=threshold,
            scores=list(scores),
            sensitivity=sensitivity,
            specificity=specificity,
            subjects=subjects,
            mean_sensitivity=mean_sens,
            std_sensitivity=std_sens,
            mean_specificity=mean_spec,
            std_specificity=std_spec,
            confusion=confusion_table(scores),
        )

    def to_dict(self) -> Dict:
        def rounded(v):
            return None if v is None else round(v, 4)

        return {
            "threshold": self.threshold,
            "sensitivity": rounded(self.sensitivity),
            "specificity": rounded(self.specificity),
            "mean_sensitivity": rounded(self.mean_sensitivity),
            "std_sensitivity": rounded(self.std_sensitivity),
            "mean_specificity": rounded(self.mean_specificity),
            "std_specificity": rounded(self.std_specificity),
            "subjects": [
                {**asdict(r), "sensitivity": rounded(r.sensitivity), "specificity": rounded(r.specificity)}
                for r in self.subjects
            ],
            "confusion": [asdict(r) for r in self.confusion],
            "recordings": [
                {**asdict(s), "condition": s.condition.value,
                 "class_seconds": {k: round(v, 4) for k, v in sorted(s.class_seconds.items())}}
                for s in self.scores
            ],
        }

    def to_text(self) -> str:
        """Aligned plain-text table: one row per subject, then average, deviation and pooled rows."""

        def cell(v):
            return "-" if v is None else f"{v:.1f}"

        lines = [f"Threshold: {self.threshold:.2f}", "", f"{'Subject':<10}{'Sensitivity (%)':>18}{'Specificity (%)':>18}"]
        for r in self.subjects:
            lines.append(f"{r.subject_id:<10}{cell(r.sensitivity):>18}{cell(r.specificity):>18}")
        lines.append(f"{'Avg.':<10}{cell(self.mean_sensitivity):>18}{cell(self.mean_specificity):>18}")
        lines.append(f"{'Std.':<10}{cell(self.std_sensitivity):>18}{cell(self.std_specificity):>18}")
        lines.append(f"{'Pooled':<10}{cell(self.sensitivity):>18}{cell(self.specificity):>18}")
        lines += ["", f"{'Class':<20}{'Total':>12}{'Detected as cough':>20}"]
        for r in self.confusion:
            total = f"{int(r.total)}" if r.unit == "events" else f"{r.total:.0f} s"
            lines.append(f"{r.event_class:<20}{total:>12}{r.detected_as_cough:>20}")
        return "\n".join(lines) + "\n"


def score(
    match: EventMatchResult,
    truth: Sequence[LabeledEvent],
    duration_s: Optional[float] = None,
    threshold: float = 0.5,
    pseudo_event_s: float = PSEUDO_EVENT_S,
) -> EvaluationReport:
    """Sensitivity and specificity of one recording's matches; sensitivity is None without coughs."""
    return EvaluationReport.from_scores([score_recording(match, truth, duration_s, pseudo_event_s)], threshold)


@dataclass
class TrackResult:
    """Smoothed posterior track of a held-out recording and what is needed to score it."""

    recording: str
    subject_id: str
    condition: SessionCondition
    events: List[LabeledEvent]
    duration_s: float
    track: PosteriorTrack


def _track_results(matrices: Sequence[FeatureMatrix], cascade: Cascade, config: PipelineConfig) -> List[TrackResult]:
    return [
        TrackResult(
            m.recording, m.subject_id, m.session_condition, list(m.events), m.duration_s,
            cascade.posteriors(m, config.detection.median_frames),
        )
        for m in matrices
    ]


def _run_fold(subject: str, matrices: Sequence[FeatureMatrix], config: PipelineConfig) -> List[TrackResult]:
    train = [m for m in matrices if m.subject_id != subject]
    test = [m for m in matrices if m.subject_id == subject]
    logger.info("Fold %s: training on %d recordings, testing on %d", subject, len(train), len(test))
    cascade = train_cascade(train, config.train, config.n_selected, config.n_bins)
    return _track_results(test, cascade, config)


def _as_matrices(corpus: Sequence, config: PipelineConfig) -> List[FeatureMatrix]:
    if corpus and isinstance(corpus[0], AnnotatedRecording):
        return extract_corpus(corpus, config.channels, config.jobs)
    return list(corpus)


def fold_tracks(corpus: Sequence, config: PipelineConfig) -> List[TrackResult]:
    """
    Train once per held-out subject and collect the test tracks.

    Raises:
        ValidationError: If the corpus has fewer than two subjects
    """
    matrices = _as_matrices(corpus, config)
    subjects = sorted({m.subject_id for m in matrices})
    if len(subjects) < 2:
        raise ValidationError(f"Leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    folds = Parallel(n_jobs=config.jobs)(delayed(_run_fold)(s, matrices, config) for s in subjects)
    return [result for fold in folds for result in fold]


def evaluate_tracks(results: Sequence[TrackResult], threshold: float, config: PipelineConfig) -> EvaluationReport:
    scores = []
    for r in results:
        detections = segment_events(r.track, threshold, config.detection.merge_gap_s, config.detection.min_event_frames)
        match = match_events(detections, r.events, config.onset_tolerance_s)
        scores.append(
            score_recording(match, r.events, r.duration_s, config.pseudo_event_s, r.recording, r.subject_id, r.condition)
        )
    return EvaluationReport.from_scores(scores, threshold)


def loso_cross_validate(corpus: Sequence, config: Optional[PipelineConfig] = None) -> EvaluationReport:
    """Leave-one-subject-out evaluation at the configured threshold."""
    config = config or PipelineConfig()
    return evaluate_tracks(fold_tracks(corpus, config), config.detection.threshold, config)


@dataclass
class SweepPoint:
    threshold: float
    sensitivity: Optional[float]
    specificity: Optional[float]


def _check_thresholds(thresholds: Sequence[float]) -> List[float]:
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValidationError("At least one threshold is required")
    if any(not 0.0 < t < 1.0 for t in thresholds):
        raise ValidationError(f"Thresholds must lie in (0, 1): {thresholds}")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValidationError("Thresholds must be sorted ascending without repeats")
    return thresholds


def sweep_tracks(results: Sequence[TrackResult], thresholds: Sequence[float], config: PipelineConfig) -> List[SweepPoint]:
    points = []
    for t in _check_thresholds(thresholds):
        report = evaluate_tracks(results, t, config)
        points.append(SweepPoint(t, report.sensitivity, report.specificity))
    return points


def threshold_sweep(
    corpus: Sequence, config: Optional[PipelineConfig] = None, thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> List[SweepPoint]:
    """LOSO rates per threshold, training each fold once."""
    config = config or PipelineConfig()
    thresholds = _check_thresholds(thresholds)
    return sweep_tracks(fold_tracks(corpus, config), thresholds, config)


def operating_point(points: Sequence[SweepPoint]) -> SweepPoint:
    """The point where sensitivity and specificity are closest; ties go to the lower threshold."""
    candidates = [p for p in points if p.sensitivity is not None and p.specificity is not None]
    if not candidates:
        raise ValidationError("No sweep point has both sensitivity and specificity")
    return min(candidates, key=lambda p: (abs(p.sensitivity - p.specificity), p.threshold))


def cross_corpus_evaluate(train_corpus: Sequence, test_corpus: Sequence, config: Optional[PipelineConfig] = None) -> EvaluationReport:
    """Train on one corpus and score every recording of a subject-disjoint one."""
    config = config or PipelineConfig()
    train = _as_matrices(train_corpus, config)
    test = _as_matrices(test_corpus, config)
    shared = sorted({m.subject_id for m in train} & {m.subject_id for m in test})
    if shared:
        raise ValidationError(f"Training and test corpora share subjects: {shared}")
    cascade = train_cascade(train, config.train, config.n_selected, config.n_bins)
    return evaluate_tracks(_track_results(test, cascade, config), config.detection.threshold, config)


def compare_channel_configurations(
    corpus: Sequence[FeatureMatrix],
    config: Optional[PipelineConfig] = None,
    configurations: Optional[Dict[str, Sequence[ChannelRole]]] = None,
) -> List[Dict]:
    """
    LOSO rates per sensor configuration, each using the matching column
    subset of multi-channel feature matrices.
    """
    config = config or PipelineConfig()
    matrices = _as_matrices(corpus, config)
    roles = list(matrices[0].catalog.channel_roles)
    if configurations is None:
        configurations = {r.value: [r] for r in roles}
        if len(roles) > 1:
            configurations["combined"] = roles
    rows = []
    for name, channels in configurations.items():
        subset = [m.select_channels(channels) for m in matrices]
        report = evaluate_tracks(fold_tracks(subset, config), config.detection.threshold, config)
        rows.append(
            {
                "configuration": name,
                "channels": [ChannelRole(c).value for c in channels],
                "sensitivity": report.sensitivity,
                "specificity": report.specificity,
            }
        )
        logger.info("Configuration %s: sensitivity %s, specificity %s", name, report.sensitivity, report.specificity)
    return rows


def condition_breakdown(report: EvaluationReport) -> Dict[str, Dict[str, Optional[float]]]:
    """Pooled sensitivity and specificity per recording condition."""
    grouped: Dict[str, List[RecordingScore]] = defaultdict(list)
    for s in report.scores:
        grouped[s.condition.value].append(s)
    breakdown = {}
    for condition in sorted(grouped):
        sens, spec = _rates(grouped[condition])
        breakdown[condition] = {"sensitivity": sens, "specificity": spec, "recordings": len(grouped[condition])}
    return breakdown


def write_report(report: EvaluationReport, directory: Union[str, Path], stem: str = "report") -> Tuple[Path, Path]:
    """Write the JSON and plain-text renderings of a report."""
    directory = Path(directory)
    json_path = directory / f"{stem}.json"
    text_path = directory / f"{stem}.txt"
    payload = {**report.to_dict(), "conditions": condition_breakdown(report)}
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(report.to_text())
    return json_path, text_path


def write_sweep_csv(points: Sequence[SweepPoint], path: Union[str, Path]) -> None:
    frame = pd.DataFrame([asdict(p) for p in points], columns=["threshold", "sensitivity", "specificity"])
    frame.to_csv(path, index=False, float_format="%.4f", lineterminator="\n")
