"""
End-to-end runs on the full synthetic corpus.

These train many networks and take minutes; run them with `pytest -m slow`.
"""

from unittest.mock import patch

import numpy as np
import pytest
from click.testing import CliRunner

from cough_counter.audio_io import AnnotatedRecording, ChannelRole, SessionCondition, Waveform
from cough_counter.detector import detect, train_cascade
from cough_counter.evaluation import PipelineConfig, evaluate_tracks, fold_tracks, sweep_tracks
from cough_counter.features import extract_corpus
from cough_counter.main import cli
from cough_counter.mlp import TrainConfig
from cough_counter.synthetic import generate_synthetic_corpus

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def full_matrices():
    corpus = generate_synthetic_corpus(seed=7, n_subjects=8, sessions_per_subject=3)
    return extract_corpus(corpus, [ChannelRole.AUDIO], n_jobs=-1)


@pytest.fixture(scope="module")
def pipeline():
    return PipelineConfig(train=TrainConfig(seed=7), jobs=-1)


@pytest.fixture(scope="module")
def tracks(full_matrices, pipeline):
    return fold_tracks(full_matrices, pipeline)


def test_loso_benchmark(tracks, pipeline):
    """Eight synthetic subjects reach 90% sensitivity and specificity at threshold 0.5."""
    report = evaluate_tracks(tracks, 0.5, pipeline)
    assert len(report.subjects) == 8
    assert report.sensitivity >= 90.0
    assert report.specificity >= 90.0


def test_sweep_direction(tracks, pipeline):
    """Raising the threshold trades sensitivity for specificity."""
    points = sweep_tracks(tracks, [0.05, 0.25, 0.5, 0.75, 0.95], pipeline)
    sens = [p.sensitivity for p in points]
    spec = [p.specificity for p in points]
    assert sens[-1] <= sens[0]
    assert spec[-1] >= spec[0]


def test_rerun_is_identical(full_matrices, pipeline, tracks):
    """A second cross-validation with the same seed yields identical posteriors."""
    subset = [m for m in full_matrices if m.subject_id in ("S01", "S02", "S03")]
    first = fold_tracks(subset, pipeline)
    second = fold_tracks(subset, pipeline)
    for a, b in zip(first, second):
        assert a.recording == b.recording
        assert np.array_equal(a.track.values, b.track.values)


def test_silence_has_no_detections(full_matrices):
    """A cascade trained on the corpus finds nothing in pure silence."""
    cascade = train_cascade(full_matrices, TrainConfig(seed=7))
    silence = AnnotatedRecording("S99", SessionCondition.QUIET_SITTING, [Waveform(np.zeros(50000), 10000)])
    assert detect(silence, cascade, threshold=0.5) == []


def test_two_channel_run():
    """Audio plus tracheal contact features train and evaluate over 444 columns."""
    corpus = generate_synthetic_corpus(
        seed=11, n_subjects=3, sessions_per_subject=1,
        channel_roles=(ChannelRole.AUDIO, ChannelRole.CONTACT_TRACHEA),
    )
    config = PipelineConfig(
        train=TrainConfig(epochs=60, seed=11),
        channels=[ChannelRole.AUDIO, ChannelRole.CONTACT_TRACHEA],
    )
    matrices = extract_corpus(corpus, config.channels)
    assert matrices[0].values.shape[1] == 444
    report = evaluate_tracks(fold_tracks(matrices, config), 0.5, config)
    assert len(report.subjects) == 3
    assert report.sensitivity is not None


def _run_cli_pipeline(base):
    """synth, extract, train and evaluate with seed 7 through the command line."""
    commands = [
        ['synth', '--seed', '7', '--subjects', '3', '--sessions', '1', '--out-dir', str(base / "corpus")],
        ['extract', '--manifest', str(base / "corpus" / "manifest.json"), '--out-dir', str(base / "features")],
        ['train', '--features', str(base / "features"), '--seed', '7', '--out-dir', str(base / "models")],
        ['evaluate', '--features', str(base / "features"), '--seed', '7', '--out-dir', str(base / "report")],
    ]
    with patch('cough_counter.main.find_run_config_file', return_value=None):
        for args in commands:
            result = CliRunner().invoke(cli, args)
            assert result.exit_code == 0, result.output


def test_cli_pipeline_byte_identical(tmp_path):
    """Two full command-line runs with seed 7 write byte-identical models and reports."""
    first, second = tmp_path / "first", tmp_path / "second"
    _run_cli_pipeline(first)
    _run_cli_pipeline(second)
    for name in ("report/report.json", "report/report.txt", "models/activity.model", "models/explosive.model"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
