"""Tests for posterior fusion, smoothing, segmentation and the trained cascade."""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cough_counter.audio_io import ChannelRole
from cough_counter.detector import (
    DetectionConfig,
    DetectionEvent,
    PosteriorTrack,
    detect,
    detect_matrix,
    fuse_posteriors,
    load_cascade,
    median_smooth,
    read_detections,
    save_cascade,
    segment_events,
    summarize_detections,
    train_cascade,
    write_detections,
)
from cough_counter.errors import ConfigurationError, ValidationError
from cough_counter.features import extract_features
from cough_counter.mlp import TrainConfig
from tests.conftest import make_grid


@pytest.fixture(scope="module")
def cascade(small_matrices):
    return train_cascade(small_matrices, TrainConfig(epochs=30, patience=6, seed=0), n_selected=12, n_bins=16)


def _track(values) -> PosteriorTrack:
    return PosteriorTrack(np.asarray(values, dtype=float))


def test_fuse_examples():
    """Products of posterior pairs."""
    fused = fuse_posteriors([1.0, 0.9, 0.8], [1.0, 0.0, 0.5])
    assert np.allclose(fused.values, [1.0, 0.0, 0.4])


def test_fuse_length_mismatch():
    """Tracks of different lengths cannot be fused."""
    with pytest.raises(ValidationError):
        fuse_posteriors([0.1, 0.2], [0.3])


def test_posterior_range_checked():
    """Values outside [0, 1] are rejected."""
    with pytest.raises(ValidationError):
        _track([0.2, 1.5])


def test_median_examples():
    """Constant tracks are kept, isolated spikes removed, plateaus kept."""
    assert np.allclose(median_smooth(_track([0.3] * 9)).values, 0.3)
    spike = np.zeros(11)
    spike[5] = 1.0
    assert median_smooth(_track(spike)).values[5] == 0.0
    plateau = np.zeros(11)
    plateau[4:7] = 1.0
    assert median_smooth(_track(plateau)).values[5] == 1.0


def test_median_width_one_is_identity():
    """A one-frame median changes nothing."""
    values = np.random.default_rng(0).random(20)
    assert np.array_equal(median_smooth(_track(values), 1).values, values)


def test_median_idempotent_on_long_runs():
    """Binary tracks whose runs and gaps span at least three frames are fixed points."""
    values = np.zeros(40)
    values[4:7] = 1.0
    values[10:18] = 1.0
    values[21:25] = 1.0
    track = PosteriorTrack(values, make_grid(40))
    once = median_smooth(track, 5)
    assert np.array_equal(once.values, values)
    assert np.array_equal(median_smooth(once, 5).values, once.values)


def test_segment_empty_track():
    """Nothing above threshold, no events."""
    assert segment_events(_track(np.zeros(50))) == []


def test_segment_single_run():
    """A 4-frame run spans from its first window start to its last window end."""
    values = np.zeros(50)
    values[10:14] = 0.9
    events = segment_events(_track(values), 0.5)
    assert events == [DetectionEvent(0.12, 0.186, 0.9)]


def test_segment_merges_short_gap():
    """Two 3-frame runs one frame apart become one event."""
    values = np.zeros(50)
    values[10:13] = 0.7
    values[14:17] = 0.8
    events = segment_events(_track(values), 0.5)
    assert len(events) == 1
    assert events[0].onset_s == pytest.approx(0.12)
    assert events[0].offset_s == pytest.approx(16 * 0.012 + 0.030)
    assert events[0].peak_posterior == pytest.approx(0.8)


def test_segment_keeps_distant_runs_and_drops_short_ones():
    """Runs 240 ms apart stay separate; a single frame is too short."""
    values = np.zeros(80)
    values[5:8] = 0.9
    values[28:31] = 0.9
    values[60] = 0.9
    events = segment_events(_track(values), 0.5)
    assert [e.onset_s for e in events] == pytest.approx([0.06, 0.336])


def test_threshold_one():
    """At threshold 1 only frames exactly at 1 survive."""
    values = np.full(30, 0.999)
    assert segment_events(_track(values), 1.0) == []


def test_higher_threshold_events_nest():
    """Every event at a higher threshold lies within an event at a lower one."""
    rng = np.random.default_rng(1)
    track = median_smooth(_track(rng.random(400) ** 2))
    low = segment_events(track, 0.3)
    for threshold in (0.5, 0.7, 0.9):
        for event in segment_events(track, threshold):
            assert any(e.onset_s <= event.onset_s and event.offset_s <= e.offset_s for e in low)


def test_detection_config_validation():
    """Even median lengths and zero thresholds are rejected."""
    with pytest.raises(ValidationError):
        DetectionConfig(median_frames=4)
    with pytest.raises(ValidationError):
        DetectionConfig(threshold=0.0)


def test_cascade_selections(cascade, small_matrices):
    """Both networks use the requested number of selected columns from one catalog."""
    assert len(cascade.activity_selection) == 12
    assert len(cascade.explosive_selection) == 12
    assert cascade.activity_model.input_dim == 12
    assert cascade.catalog_hash == small_matrices[0].catalog.catalog_hash


def test_cascade_detects_on_training_data(cascade, small_matrices):
    """Posteriors are valid and detection is deterministic."""
    matrix = small_matrices[0]
    track = cascade.posteriors(matrix)
    assert track.values.shape == (matrix.n_frames,)
    assert np.all((track.values >= 0) & (track.values <= 1))
    assert detect_matrix(matrix, cascade) == detect_matrix(matrix, cascade)


def test_catalog_mismatch(cascade, two_channel_recording):
    """Features from another channel configuration are refused."""
    matrix = extract_features(two_channel_recording, [ChannelRole.AUDIO, ChannelRole.CONTACT_TRACHEA])
    with pytest.raises(ConfigurationError) as excinfo:
        detect_matrix(matrix, cascade)
    assert cascade.catalog_hash in str(excinfo.value)


def test_detect_recording(cascade, small_corpus):
    """detect extracts features itself and agrees with detect_matrix."""
    rec = small_corpus[1]
    events = detect(rec, cascade, threshold=0.5)
    assert events == detect_matrix(extract_features(rec), cascade, DetectionConfig(threshold=0.5))


def test_detect_gain_invariance(cascade, small_corpus):
    """Halving every channel leaves the detected event count unchanged."""
    rec = small_corpus[1]
    assert len(detect(rec, cascade)) == len(detect(rec.scaled(0.5), cascade))


def test_detect_threshold_overrides_config(cascade, small_corpus):
    """An explicit threshold wins over the one in a passed configuration."""
    rec = small_corpus[1]
    events = detect(rec, cascade, threshold=0.9, config=DetectionConfig(threshold=0.3))
    assert events == detect(rec, cascade, config=DetectionConfig(threshold=0.9))


def test_cascade_round_trip(cascade, small_matrices):
    """A saved cascade reloads and produces the same posteriors."""
    with tempfile.TemporaryDirectory() as tmpdir:
        save_cascade(cascade, tmpdir)
        loaded = load_cascade(tmpdir)
    matrix = small_matrices[1]
    assert np.array_equal(loaded.posteriors(matrix).values, cascade.posteriors(matrix).values)


def test_load_cascade_missing():
    """A directory without models is an I/O error."""
    with tempfile.TemporaryDirectory() as tmpdir:
        with pytest.raises(FileNotFoundError):
            load_cascade(tmpdir)


def test_mismatched_components_rejected(cascade):
    """Components trained on different catalogs cannot form a cascade."""
    other = replace(cascade.explosive_selection, catalog_hash="ffffffffffffffff")
    with pytest.raises(ConfigurationError):
        type(cascade)(
            cascade.activity_model, cascade.explosive_model, cascade.activity_selection, other, cascade.channels
        )


def test_detections_csv_header_only():
    """An empty detection list writes just the header."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "silence.csv"
        write_detections([], path)
        assert path.read_text() == "onset_s,offset_s,peak_posterior\n"
        assert read_detections(path) == []


def test_detections_csv_round_trip():
    """Detections reload at microsecond precision."""
    events = [DetectionEvent(0.12, 0.186, 0.91), DetectionEvent(3.6, 3.75, 0.6)]
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "a.csv"
        write_detections(events, path)
        assert read_detections(path) == events
    summary = summarize_detections({"a": events, "b": []}, 0.5)
    assert summary["total_events"] == 2
    assert summary["recordings"][0]["detected_s"] == pytest.approx(0.216)
