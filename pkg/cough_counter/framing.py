"""Frame segmentation and windowed magnitude spectra."""

from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import fft

from cough_counter.audio_io import TARGET_SAMPLE_RATE, Waveform
from cough_counter.errors import NumericError, ValidationError

HOP_S = 0.012
WINDOW_S = 0.030
FFT_SIZE = 512


@dataclass(frozen=True)
class FrameGrid:
    n_frames: int
    sample_rate: int = TARGET_SAMPLE_RATE
    hop_s: float = HOP_S
    window_s: float = WINDOW_S

    @property
    def hop(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def window(self) -> int:
        return int(round(self.window_s * self.sample_rate))

    @property
    def frame_starts(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.hop

    @property
    def frame_starts_s(self) -> np.ndarray:
        return self.frame_starts / self.sample_rate

    @property
    def frame_centers_s(self) -> np.ndarray:
        return (self.frame_starts + self.window / 2.0) / self.sample_rate


@dataclass(frozen=True)
class Spectrum:
    """Magnitude spectrum; `magnitudes` may stack several frames on leading axes."""

    magnitudes: np.ndarray
    bin_hz: float

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[-1]

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz

    @property
    def power(self) -> np.ndarray:
        return self.magnitudes ** 2

    def previous(self) -> "Spectrum":
        """Spectra shifted one frame later along axis 0, zero spectrum first."""
        shifted = np.zeros_like(self.magnitudes)
        shifted[1:] = self.magnitudes[:-1]
        return Spectrum(shifted, self.bin_hz)


def frame_signal(w: Waveform, hop_s: float = HOP_S, window_s: float = WINDOW_S) -> Tuple[FrameGrid, np.ndarray]:
    """
    Cut a waveform into overlapping analysis frames.

    Frame k covers samples [k*hop, k*hop + window); a trailing partial frame
    is dropped.

    Returns:
        (FrameGrid, frames array of shape (n_frames, window))

    Raises:
        ValidationError: If the waveform is shorter than one window
    """
    grid = FrameGrid(0, w.sample_rate, hop_s, window_s)
    window, hop = grid.window, grid.hop
    if w.samples.size < window:
        raise ValidationError(
            f"Waveform has {w.samples.size} samples; at least {window} are needed for one frame"
        )
    n_frames = (w.samples.size - window) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, window)[::hop][:n_frames]
    return FrameGrid(n_frames, w.sample_rate, hop_s, window_s), np.ascontiguousarray(frames)


@lru_cache(maxsize=8)
def _hamming(length: int) -> np.ndarray:
    window = np.hamming(length)
    window.setflags(write=False)
    return window


def magnitude_spectrum(
    frame: np.ndarray, sample_rate: int = TARGET_SAMPLE_RATE, fft_size: int = FFT_SIZE
) -> Spectrum:
    """
    Hamming-windowed, zero-padded magnitude spectrum.

    Accepts a single frame or a stack of frames along the last axis; with the
    defaults a 300-sample frame yields 257 bins 19.53125 Hz apart.

    Raises:
        NumericError: If any sample is NaN or infinite
    """
    frame = np.asarray(frame, dtype=np.float64)
    if not np.all(np.isfinite(frame)):
        raise NumericError("Frame contains non-finite samples")
    windowed = frame * _hamming(frame.shape[-1])
    magnitudes = np.abs(fft.rfft(windowed, n=fft_size, axis=-1))
    return Spectrum(magnitudes, sample_rate / fft_size)
