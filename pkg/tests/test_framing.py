"""Tests for framing and magnitude spectra."""

import numpy as np
import pytest

from cough_counter.audio_io import Waveform
from cough_counter.errors import NumericError, ValidationError
from cough_counter.framing import frame_signal, magnitude_spectrum
from tests.conftest import sine


@pytest.mark.parametrize("n_samples, n_frames", [(300, 1), (420, 2), (100000, 831)])
def test_frame_counts(n_samples, n_frames):
    """Frame count is floor((len - 300) / 120) + 1."""
    grid, frames = frame_signal(Waveform(np.ones(n_samples), 10000))
    assert grid.n_frames == n_frames
    assert frames.shape == (n_frames, 300)


def test_frame_starts():
    """Frame k starts at sample 120 k and the partial frame is dropped."""
    samples = np.arange(500, dtype=float) / 1000.0
    grid, frames = frame_signal(Waveform(samples, 10000))
    assert list(grid.frame_starts) == [0, 120]
    assert frames[1][0] == samples[120]
    assert grid.frame_centers_s[0] == pytest.approx(0.015)


def test_too_short_waveform():
    """Fewer than 300 samples cannot form a frame."""
    with pytest.raises(ValidationError) as excinfo:
        frame_signal(Waveform(np.ones(299), 10000))
    assert "300" in str(excinfo.value)


def test_spectrum_shape_and_zero_frame():
    """257 bins 19.53125 Hz apart; silence gives zeros."""
    spec = magnitude_spectrum(np.zeros(300))
    assert spec.n_bins == 257
    assert spec.bin_hz == pytest.approx(19.53125)
    assert np.all(spec.magnitudes == 0.0)


def test_tone_peak_bin():
    """A 1 kHz sine peaks at bin 51."""
    spec = magnitude_spectrum(sine(1000.0, 300))
    peak = int(np.argmax(spec.magnitudes))
    assert peak == 51
    assert spec.magnitudes[50] < spec.magnitudes[51]
    assert spec.magnitudes[52] < spec.magnitudes[51]


def test_parseval():
    """Windowed-frame energy equals the one-sided spectral energy sum."""
    rng = np.random.default_rng(0)
    frame = rng.standard_normal(300)
    spec = magnitude_spectrum(frame)
    energy = np.sum((frame * np.hamming(300)) ** 2)
    m = spec.magnitudes
    spectral = (m[0] ** 2 + 2 * np.sum(m[1:256] ** 2) + m[256] ** 2) / 512
    assert spectral == pytest.approx(energy, rel=1e-9)


def test_sign_flip_magnitude():
    """Flipping the sign leaves magnitudes unchanged."""
    frame = np.random.default_rng(1).standard_normal(300)
    assert np.allclose(magnitude_spectrum(frame).magnitudes, magnitude_spectrum(-frame).magnitudes)


def test_time_shift_covariance():
    """Shifting the input by one hop shifts the frames by one."""
    samples = np.random.default_rng(2).standard_normal(2000)
    _, frames = frame_signal(Waveform(samples, 10000))
    _, shifted = frame_signal(Waveform(samples[120:], 10000))
    a = magnitude_spectrum(frames[1:]).magnitudes
    b = magnitude_spectrum(shifted[: a.shape[0]]).magnitudes
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_non_finite_frame():
    """NaN samples raise NumericError."""
    frame = np.zeros(300)
    frame[10] = np.inf
    with pytest.raises(NumericError):
        magnitude_spectrum(frame)


def test_previous_spectrum():
    """Previous spectra lag one frame, with a zero spectrum before the first."""
    frames = np.random.default_rng(2).standard_normal((4, 300))
    spec = magnitude_spectrum(frames)
    previous = spec.previous()
    assert previous.bin_hz == spec.bin_hz
    assert np.all(previous.magnitudes[0] == 0.0)
    assert np.array_equal(previous.magnitudes[1:], spec.magnitudes[:-1])
