#!/usr/bin/env python3
"""
Per-frame audio descriptors

Spectral descriptors take a `Spectrum`, noise measures take raw frames. Every
function works on a single frame or on a stack of frames (frames along the
leading axes, samples or bins along the last axis) and returns values along a
new last axis.

Silent input never produces NaN or infinity: energies are floored at
ENERGY_FLOOR before logarithms and zero-energy frames follow fixed
conventions.
"""

from functools import lru_cache
from typing import Optional, Tuple

import librosa
import numpy as np
from scipy import fft

from cough_counter.audio_io import TARGET_SAMPLE_RATE
from cough_counter.framing import FFT_SIZE, Spectrum

ENERGY_FLOOR = 1e-10

N_MEL_FILTERS = 26
N_MFCC = 21
MAX_FREQ_HZ = 5000.0

# Zwicker critical-band edges up to 3700 Hz, the last band closed at 5000 Hz
BARK_EDGES_HZ = (
    0.0, 100.0, 200.0, 300.0, 400.0, 510.0, 630.0, 770.0, 920.0, 1080.0,
    1270.0, 1480.0, 1720.0, 2000.0, 2320.0, 2700.0, 3150.0, 3700.0, 5000.0,
)
LOUDNESS_EXPONENT = 0.23

N_SUBBANDS = 16
NOISE_BANDS_HZ = ((0.0, 500.0), (500.0, 1500.0), (1500.0, 2500.0), (2500.0, 5000.0))

HNR_CLAMP_DB = 40.0
F0_MIN_HZ = 60.0
F0_MAX_HZ = 400.0

LPC_ORDER = 12
SRH_HARMONICS = 5
SRH_FFT_SIZE = 2048
# Normalized SRH peaks mapped to periodicity 0 and 1
SRH_NOISE_LEVEL = 0.12
SRH_VOICED_LEVEL = 0.28
# Lower candidates within this share of the maximum win over octave errors
SRH_PEAK_TOLERANCE = 0.9

CGD_RADIUS = 1.01


def _band_masks(frequencies: np.ndarray, edges) -> np.ndarray:
    """Boolean (n_bands, n_bins) masks; bands are [lo, hi) except the last, which is closed."""
    edges = list(edges)
    masks = []
    for index, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        upper = frequencies <= hi if index == len(edges) - 2 else frequencies < hi
        masks.append((frequencies >= lo) & upper)
    return np.array(masks)


def _pair_edges(bands) -> Tuple[float, ...]:
    return tuple(lo for lo, _ in bands) + (bands[-1][1],)


@lru_cache(maxsize=4)
def mel_filterbank(sample_rate: int = TARGET_SAMPLE_RATE, fft_size: int = FFT_SIZE) -> np.ndarray:
    """Area-normalized triangular mel filters, shape (26, fft_size // 2 + 1)."""
    bank = librosa.filters.mel(
        sr=sample_rate, n_fft=fft_size, n_mels=N_MEL_FILTERS, fmin=0.0, fmax=MAX_FREQ_HZ, htk=True
    )
    bank.setflags(write=False)
    return bank


def mfcc(spec: Spectrum) -> np.ndarray:
    """Log mel-filterbank energies followed by an orthonormal DCT-II, coefficients 0..20."""
    bank = mel_filterbank(int(round(spec.bin_hz * (spec.n_bins - 1) * 2)), 2 * (spec.n_bins - 1))
    energies = spec.power @ bank.T
    log_energies = np.log(np.maximum(energies, ENERGY_FLOOR))
    return fft.dct(log_energies, type=2, norm="ortho", axis=-1)[..., :N_MFCC]


def bark_loudness(spec: Spectrum) -> np.ndarray:
    """Specific loudness (band energy ** 0.23) in 18 Bark bands over 0-5000 Hz."""
    masks = _band_masks(spec.frequencies, BARK_EDGES_HZ)
    band_energy = spec.power @ masks.T.astype(np.float64)
    return band_energy ** LOUDNESS_EXPONENT


def relative_subband_energy(spec: Spectrum) -> np.ndarray:
    """Energy share of 16 equal-width bands; silent frames get 1/16 everywhere."""
    edges = np.linspace(0.0, MAX_FREQ_HZ, N_SUBBANDS + 1)
    masks = _band_masks(spec.frequencies, edges)
    band_energy = spec.power @ masks.T.astype(np.float64)
    total = band_energy.sum(axis=-1, keepdims=True)
    uniform = np.full_like(band_energy, 1.0 / N_SUBBANDS)
    return np.where(total > 0.0, band_energy / np.where(total > 0.0, total, 1.0), uniform)


def spectral_shape(spec: Spectrum, previous: Optional[Spectrum] = None) -> np.ndarray:
    """
    Centroid (Hz), spread (Hz), decrease, variation and flux of the amplitude spectrum.

    Args:
        spec: Current spectrum (or stack of spectra)
        previous: Spectrum of the preceding frame; zero spectrum when omitted

    Returns:
        Array with last axis [centroid, spread, decrease, variation, flux]
    """
    a = spec.magnitudes
    prev = np.zeros_like(a) if previous is None else previous.magnitudes
    f = spec.frequencies
    total = a.sum(axis=-1)
    safe_total = np.where(total > 0.0, total, 1.0)

    centroid = np.where(total > 0.0, (a * f).sum(axis=-1) / safe_total, 0.0)
    spread_sq = ((f - centroid[..., None]) ** 2 * a).sum(axis=-1) / safe_total
    spread = np.where(total > 0.0, np.sqrt(np.maximum(spread_sq, 0.0)), 0.0)

    k = np.arange(1, a.shape[-1])
    tail = a[..., 1:]
    tail_total = tail.sum(axis=-1)
    decrease_num = ((tail - a[..., :1]) / k).sum(axis=-1)
    decrease = np.where(tail_total > 0.0, decrease_num / np.where(tail_total > 0.0, tail_total, 1.0), 0.0)

    norm = np.sqrt((a ** 2).sum(axis=-1))
    prev_norm = np.sqrt((prev ** 2).sum(axis=-1))
    both = (norm > 0.0) & (prev_norm > 0.0)
    denom = np.where(both, norm * prev_norm, 1.0)
    correlation = (a * prev).sum(axis=-1) / denom
    variation = np.where(both, 1.0 - correlation, np.where((norm > 0.0) | (prev_norm > 0.0), 1.0, 0.0))

    unit = a / np.where(norm > 0.0, norm, 1.0)[..., None]
    prev_unit = prev / np.where(prev_norm > 0.0, prev_norm, 1.0)[..., None]
    flux = np.sqrt(((unit - prev_unit) ** 2).sum(axis=-1))

    return np.stack([centroid, spread, decrease, variation, flux], axis=-1)


def energy_and_total_loudness(frame: np.ndarray, bark: np.ndarray) -> np.ndarray:
    """[log frame energy (floored), sum of the Bark loudness values]."""
    frame = np.asarray(frame, dtype=np.float64)
    energy = (frame ** 2).sum(axis=-1)
    return np.stack([np.log(np.maximum(energy, ENERGY_FLOOR)), np.asarray(bark).sum(axis=-1)], axis=-1)


def hnr_from_correlation(r) -> np.ndarray:
    """HNR in dB from a normalized autocorrelation peak, clamped to +/-40 dB."""
    r = np.asarray(r, dtype=np.float64)
    limit = 10.0 ** (HNR_CLAMP_DB / 10.0)
    clipped = np.clip(r, 1.0 / (1.0 + limit), limit / (1.0 + limit))
    return np.clip(10.0 * np.log10(clipped / (1.0 - clipped)), -HNR_CLAMP_DB, HNR_CLAMP_DB)


def _lag_range(sample_rate: int) -> Tuple[int, int]:
    return int(round(sample_rate / F0_MAX_HZ)), int(round(sample_rate / F0_MIN_HZ))


def _periodicity_peak(y: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Max over lags of the overlap-normalized autocorrelation of each row of y."""
    n = y.shape[-1]
    max_lag = min(max_lag, n - 1)
    n_fft = fft.next_fast_len(2 * n)
    spectrum = fft.rfft(y, n=n_fft, axis=-1)
    acf = fft.irfft(spectrum * np.conj(spectrum), n=n_fft, axis=-1)[..., : max_lag + 1]
    cum = np.cumsum(y ** 2, axis=-1)
    total = cum[..., -1:]
    lags = np.arange(min_lag, max_lag + 1)
    head = cum[..., n - 1 - lags]
    tail = total - np.concatenate([np.zeros(y.shape[:-1] + (1,)), cum], axis=-1)[..., lags]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    valid = denom > ENERGY_FLOOR
    r = np.where(valid, acf[..., lags] / np.where(valid, denom, 1.0), 0.0)
    return r.max(axis=-1)


def hnr_bands(frame: np.ndarray, sample_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """
    Harmonic-to-noise ratio (dB) in four bands.

    Each band is isolated by masking the frame's DFT; the periodic share r is
    the largest normalized autocorrelation over lags of 60-400 Hz periods and
    HNR = 10*log10(r / (1 - r)).
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    spectrum = fft.rfft(frame, axis=-1)
    frequencies = fft.rfftfreq(n, d=1.0 / sample_rate)
    masks = _band_masks(frequencies, _pair_edges(NOISE_BANDS_HZ))
    min_lag, max_lag = _lag_range(sample_rate)
    values = []
    for mask in masks:
        band = fft.irfft(spectrum * mask, n=n, axis=-1)
        values.append(hnr_from_correlation(_periodicity_peak(band, min_lag, max_lag)))
    return np.stack(values, axis=-1)


def spectral_flatness_bands(spec: Spectrum) -> np.ndarray:
    """Geometric over arithmetic mean of floored power in the four noise bands; in (0, 1]."""
    power = np.maximum(spec.power, ENERGY_FLOOR)
    masks = _band_masks(spec.frequencies, _pair_edges(NOISE_BANDS_HZ))
    values = []
    for mask in masks:
        band = power[..., mask]
        geometric = np.exp(np.log(band).mean(axis=-1))
        arithmetic = band.mean(axis=-1)
        values.append(np.minimum(geometric / arithmetic, 1.0))
    return np.stack(values, axis=-1)


def zero_crossing_rate(frame: np.ndarray) -> np.ndarray:
    """Sign changes divided by (frame length - 1); zero counts as positive."""
    signs = np.asarray(frame) >= 0.0
    changes = np.count_nonzero(signs[..., 1:] != signs[..., :-1], axis=-1)
    return changes / (signs.shape[-1] - 1)


def lpc_coefficients(frames: np.ndarray, order: int = LPC_ORDER) -> np.ndarray:
    """
    Autocorrelation-method LPC by Levinson-Durbin, vectorized over frames.

    Returns inverse-filter coefficients [1, a1, ..., a_order] per frame.
    Rows with no energy get the identity filter.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n = frames.shape[-1]
    n_fft = fft.next_fast_len(2 * n)
    spectrum = fft.rfft(frames, n=n_fft, axis=-1)
    r = fft.irfft(np.abs(spectrum) ** 2, n=n_fft, axis=-1)[:, : order + 1]
    # White-noise correction
    r[:, 0] = r[:, 0] * (1.0 + 1e-9) + ENERGY_FLOOR

    a = np.zeros((frames.shape[0], order + 1))
    a[:, 0] = 1.0
    error = r[:, 0].copy()
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("fj,fj->f", a[:, 1:i], r[:, i - 1:0:-1])
        k = -acc / error
        a_prev = a.copy()
        a[:, 1:i] = a_prev[:, 1:i] + k[:, None] * a_prev[:, i - 1:0:-1]
        a[:, i] = k
        error = error * (1.0 - k ** 2)
    return a


def lpc_residual(context: np.ndarray, order: int = LPC_ORDER) -> np.ndarray:
    """Inverse-filter each Hamming-windowed row with its own LPC polynomial."""
    context = np.atleast_2d(np.asarray(context, dtype=np.float64))
    windowed = context * np.hamming(context.shape[-1])
    a = lpc_coefficients(windowed, order)
    residual = np.zeros_like(windowed)
    for lag in range(order + 1):
        residual[:, lag:] += a[:, lag:lag + 1] * windowed[:, : windowed.shape[-1] - lag]
    return residual


def srh_f0_and_periodicity(context: np.ndarray, sample_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """
    F0 and periodicity by Summation of Residual Harmonics.

    SRH(f) = E(f) + sum_{k=2..5} [E(k f) - E((k - 1/2) f)] over the LPC
    residual amplitude spectrum E, for f from 60 to 400 Hz in 1 Hz steps.
    E is scaled to unit L2 norm per frame. F0 is the lowest local maximum
    within SRH_PEAK_TOLERANCE of the global one; periodicity maps the global
    maximum linearly from SRH_NOISE_LEVEL (0) to SRH_VOICED_LEVEL (1).

    Args:
        context: 60 ms of signal centered on the frame (or a stack of them)

    Returns:
        Last axis [F0 in Hz, periodicity in [0, 1]]; silent contexts give [0, 0]
    """
    context = np.asarray(context, dtype=np.float64)
    lead_shape = context.shape[:-1]
    flat = context.reshape(-1, context.shape[-1])
    energy = (flat ** 2).sum(axis=-1)
    active = energy > ENERGY_FLOOR

    f0 = np.zeros(flat.shape[0])
    periodicity = np.zeros(flat.shape[0])
    if np.any(active):
        residual = lpc_residual(flat[active])
        amplitude = np.abs(fft.rfft(residual * np.hanning(residual.shape[-1]), n=SRH_FFT_SIZE, axis=-1))
        norm = np.sqrt((amplitude ** 2).sum(axis=-1, keepdims=True))
        amplitude = amplitude / np.maximum(norm, ENERGY_FLOOR)
        bin_hz = sample_rate / SRH_FFT_SIZE
        candidates = np.arange(F0_MIN_HZ, F0_MAX_HZ + 1.0)
        plus = candidates[:, None] * np.arange(1, SRH_HARMONICS + 1)
        minus = candidates[:, None] * (np.arange(2, SRH_HARMONICS + 1) - 0.5)

        def _at(freqs: np.ndarray) -> np.ndarray:
            pos = np.clip(freqs / bin_hz, 0.0, amplitude.shape[-1] - 1.000001)
            lo = np.floor(pos).astype(int)
            frac = pos - lo
            return amplitude[:, lo] * (1.0 - frac) + amplitude[:, lo + 1] * frac

        srh = _at(plus).sum(axis=-1) - _at(minus).sum(axis=-1)
        peak = srh.max(axis=-1)
        padded = np.pad(srh, ((0, 0), (1, 1)), constant_values=-np.inf)
        local_max = (srh >= padded[:, :-2]) & (srh >= padded[:, 2:])
        near_peak = srh >= (peak - (1.0 - SRH_PEAK_TOLERANCE) * np.abs(peak))[:, None]
        best = np.argmax(local_max & near_peak, axis=-1)
        f0[active] = candidates[best]
        periodicity[active] = np.clip(
            (peak - SRH_NOISE_LEVEL) / (SRH_VOICED_LEVEL - SRH_NOISE_LEVEL), 0.0, 1.0
        )
    out = np.stack([f0, periodicity], axis=-1)
    return out.reshape(lead_shape + (2,))


def chirp_group_delay_function(frame: np.ndarray, sample_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """
    Group delay (samples) of the frame's z-transform on the circle |z| = 1.01,
    at the FFT bins between 0 and 5000 Hz.

    Uses tau = Re{Y_n conj(Y)} / |Y|^2 with Y the DFT of x[n] r^-n and Y_n the
    DFT of n x[n] r^-n.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n = np.arange(frame.shape[-1])
    y = frame * CGD_RADIUS ** (-n)
    spectrum = fft.rfft(y, n=FFT_SIZE, axis=-1)
    ramp_spectrum = fft.rfft(y * n, n=FFT_SIZE, axis=-1)
    power = np.abs(spectrum) ** 2
    floor = 1e-12 * power.max(axis=-1, keepdims=True) + 1e-300
    group_delay = np.real(ramp_spectrum * np.conj(spectrum)) / np.maximum(power, floor)
    group_delay = np.where(power > 0.0, group_delay, 0.0)
    keep = fft.rfftfreq(FFT_SIZE, d=1.0 / sample_rate) <= MAX_FREQ_HZ
    return group_delay[..., keep]


def chirp_group_delay(frame: np.ndarray, sample_rate: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """Standard deviation of the chirp group-delay function over 0-5000 Hz."""
    return chirp_group_delay_function(frame, sample_rate).std(axis=-1)


def add_derivatives(base: np.ndarray) -> np.ndarray:
    """
    Append first and second derivatives to per-frame features.

    Derivatives are 5-point linear-regression slopes with replicated
    endpoints; the second derivative is the slope of the first.

    Args:
        base: Array of shape (n_frames, n_features), n_frames >= 5

    Returns:
        Array of shape (n_frames, 3 * n_features): [base, delta, delta-delta]
    """
    base = np.asarray(base, dtype=np.float64)
    if base.shape[0] < 5:
        raise ValueError(f"Derivatives need at least 5 frames, got {base.shape[0]}")
    delta = librosa.feature.delta(base, width=5, order=1, axis=0, mode="nearest")
    delta2 = librosa.feature.delta(delta, width=5, order=1, axis=0, mode="nearest")
    return np.concatenate([base, delta, delta2], axis=1)
