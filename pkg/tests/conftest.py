"""Shared fixtures: a small synthetic corpus and its feature matrices."""

import numpy as np
import pytest

from cough_counter.audio_io import ChannelRole
from cough_counter.features import extract_features
from cough_counter.framing import FrameGrid
from cough_counter.mlp import TrainConfig
from cough_counter.synthetic import generate_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """Two subjects, one quiet session each."""
    return generate_synthetic_corpus(seed=3, n_subjects=2, sessions_per_subject=1)


@pytest.fixture(scope="session")
def small_matrices(small_corpus):
    return [extract_features(rec) for rec in small_corpus]


@pytest.fixture(scope="session")
def two_channel_recording():
    return generate_synthetic_corpus(
        seed=5, n_subjects=1, sessions_per_subject=1,
        channel_roles=(ChannelRole.AUDIO, ChannelRole.CONTACT_TRACHEA),
    )[0]


@pytest.fixture
def fast_train_config():
    return TrainConfig(epochs=40, patience=8, seed=0)


def make_grid(n_frames: int) -> FrameGrid:
    return FrameGrid(n_frames)


def sine(freq_hz: float, n: int, sample_rate: int = 10000, phase: float = 0.0) -> np.ndarray:
    return np.sin(2 * np.pi * freq_hz * np.arange(n) / sample_rate + phase)
