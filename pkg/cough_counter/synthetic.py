#!/usr/bin/env python3
"""
Synthetic labeled corpus

Generates recordings that follow the cough-database session protocol (coughs
at three loudness levels, fits of coughing, forced expirations, throat
clearings, laughs and a speech passage over background noise) with acoustic
parameters drawn per subject. Output is fully determined by the seed.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from cough_counter.audio_io import (
    TARGET_SAMPLE_RATE,
    AnnotatedRecording,
    ChannelRole,
    EventClass,
    LabeledEvent,
    SessionCondition,
    Waveform,
    normalize_peak,
)
from cough_counter.errors import ValidationError

logger = logging.getLogger(__name__)

FS = TARGET_SAMPLE_RATE
NYQUIST_GUARD_HZ = 4800.0
CONDITIONS = [SessionCondition.QUIET_SITTING, SessionCondition.TV_NOISE_SITTING, SessionCondition.STAIRS]

LOUDNESS_TIERS = (1.0, 0.5, 0.25)
COUGHS_PER_TIER = 5
FITS = 3
COUGHS_PER_FIT = 3
FORCED_EXPIRATIONS = 3
THROAT_CLEARINGS = 5
LAUGHS = 3

MIN_COUGH_S = 0.150
MAX_COUGH_S = 0.600

# Neutral vowel formants (Hz); scaled per subject
VOWEL_FORMANTS = [
    (730.0, 1090.0, 2440.0),
    (530.0, 1840.0, 2480.0),
    (300.0, 870.0, 2240.0),
]


@dataclass(frozen=True)
class SubjectVoice:
    """Per-subject acoustic parameters."""

    f0_hz: float
    formant_scale: float
    cough_cutoff_hz: float
    cough_resonance_hz: float
    cough_decay_s: float
    breath_cutoff_hz: float
    rattle_hz: float


def _draw_voice(rng: np.random.Generator) -> SubjectVoice:
    return SubjectVoice(
        f0_hz=rng.uniform(100.0, 250.0),
        formant_scale=rng.uniform(0.9, 1.15),
        cough_cutoff_hz=rng.uniform(3000.0, 4500.0),
        cough_resonance_hz=rng.uniform(500.0, 1500.0),
        cough_decay_s=rng.uniform(0.018, 0.035),
        breath_cutoff_hz=rng.uniform(1800.0, 2800.0),
        rattle_hz=rng.uniform(25.0, 40.0),
    )


def _ms(seconds: float) -> int:
    return int(round(seconds * 1000.0))


def _n(ms: int) -> int:
    return ms * FS // 1000


def _bandpass_noise(rng: np.random.Generator, n: int, low_hz: float, high_hz: float) -> np.ndarray:
    sos = butter(4, [low_hz, min(high_hz, NYQUIST_GUARD_HZ)], btype="bandpass", fs=FS, output="sos")
    return sosfilt(sos, rng.standard_normal(n))


def _lowpass(x: np.ndarray, cutoff_hz: float, order: int = 4) -> np.ndarray:
    sos = butter(order, min(cutoff_hz, NYQUIST_GUARD_HZ), btype="lowpass", fs=FS, output="sos")
    return sosfilt(sos, x)


def _resonator(x: np.ndarray, freq_hz: float, bandwidth_hz: float) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth_hz / FS)
    theta = 2.0 * np.pi * freq_hz / FS
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def _formant_filter(x: np.ndarray, formants: Sequence[float]) -> np.ndarray:
    y = np.zeros_like(x)
    for index, freq in enumerate(formants):
        y += _resonator(x, freq, 80.0 + 40.0 * index) / (index + 1)
    return y


def _harmonics(f0_track: np.ndarray, n_harmonics: int = 20) -> np.ndarray:
    phase = 2.0 * np.pi * np.cumsum(f0_track) / FS
    top = float(np.max(f0_track))
    out = np.zeros_like(f0_track)
    for k in range(1, n_harmonics + 1):
        if k * top >= NYQUIST_GUARD_HZ:
            break
        out += np.sin(k * phase) / k
    return out


def _smooth_random(rng: np.random.Generator, n: int, cutoff_hz: float) -> np.ndarray:
    """Zero-mean, unit-peak random contour varying slower than cutoff_hz."""
    x = _lowpass(rng.standard_normal(n + FS), cutoff_hz, order=2)[FS:]
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def _raised_cosine(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / max(n, 1))


def _attack_release(n: int, attack: int, release: int) -> np.ndarray:
    env = np.ones(n)
    attack = min(attack, n)
    release = min(release, n - attack)
    env[:attack] = _raised_cosine(attack)
    if release > 0:
        env[n - release:] = _raised_cosine(release)[::-1]
    return env


def _peak_scale(x: np.ndarray, amplitude: float) -> np.ndarray:
    peak = np.max(np.abs(x))
    return x * (amplitude / peak) if peak > 0 else x


def synth_cough(rng: np.random.Generator, voice: SubjectVoice, amplitude: float, in_fit: bool = False) -> np.ndarray:
    """
    One cough: noise burst with a few-ms attack and exponential decay, an
    optional breathy intermediate phase and an optional voiced tail.

    Returns a signal whose length is a whole number of milliseconds in
    [150 ms, 600 ms].
    """
    tau = voice.cough_decay_s * rng.uniform(0.8, 1.2)
    explosive_ms = int(np.clip(_ms(4.0 * tau), 50, 150))
    if in_fit:
        mid_ms = int(rng.integers(60, 121))
        voiced_ms = 0
    else:
        mid_ms = int(rng.integers(100, 301)) if rng.random() < 0.75 else 0
        voiced_ms = int(rng.integers(50, 151)) if rng.random() < 0.4 else 0
    total_ms = int(np.clip(explosive_ms + mid_ms + voiced_ms, _ms(MIN_COUGH_S), _ms(MAX_COUGH_S)))
    n = _n(total_ms)
    t = np.arange(n) / FS

    attack = max(1, int(rng.uniform(0.002, 0.008) * FS))
    burst_env = np.exp(-np.maximum(t - attack / FS, 0.0) / tau)
    burst_env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    burst = _bandpass_noise(rng, n, 150.0, voice.cough_cutoff_hz)
    burst = burst + 0.6 * _resonator(burst, voice.cough_resonance_hz, 250.0)
    signal = _peak_scale(burst * burst_env, 1.0)

    mid_start = _n(explosive_ms) // 2
    mid_end = min(n, _n(explosive_ms + mid_ms))
    if mid_ms > 0 and mid_end > mid_start:
        length = mid_end - mid_start
        breath = _lowpass(rng.standard_normal(length), rng.uniform(1000.0, 2000.0))
        breath = _peak_scale(breath * _attack_release(length, _n(20), _n(30)), rng.uniform(0.15, 0.3))
        signal[mid_start:mid_end] += breath

    if voiced_ms > 0:
        start = max(0, n - _n(voiced_ms))
        length = n - start
        f0 = np.full(length, voice.f0_hz * rng.uniform(1.0, 1.2))
        decay = np.exp(-np.arange(length) / (0.4 * length))
        tail = _formant_filter(_harmonics(f0, 10), VOWEL_FORMANTS[0]) * decay
        signal[start:] += _peak_scale(tail * _attack_release(length, _n(10), 0), 0.2)

    signal *= _attack_release(n, 0, _n(10))
    return _peak_scale(signal, amplitude)


def synth_forced_expiration(rng: np.random.Generator, voice: SubjectVoice) -> np.ndarray:
    n = _n(int(rng.integers(400, 801)))
    noise = _bandpass_noise(rng, n, 300.0, voice.breath_cutoff_hz)
    env = _attack_release(n, int(rng.uniform(0.06, 0.1) * FS), int(0.4 * n))
    return _peak_scale(noise * env, rng.uniform(0.25, 0.45))


def synth_throat_clearing(rng: np.random.Generator, voice: SubjectVoice) -> np.ndarray:
    n = _n(int(rng.integers(250, 501)))
    t = np.arange(n) / FS
    rattle = 1.0 + 0.8 * np.sin(2.0 * np.pi * voice.rattle_hz * t + rng.uniform(0, 2 * np.pi))
    rough = _lowpass(rng.standard_normal(n), 900.0) * rattle
    voiced = _harmonics(np.full(n, 0.7 * voice.f0_hz), 6)
    mix = _peak_scale(rough, 1.0) + 0.3 * _peak_scale(voiced, 1.0)
    env = _attack_release(n, int(rng.uniform(0.03, 0.05) * FS), _n(50))
    return _peak_scale(mix * env, rng.uniform(0.25, 0.45))


def synth_laugh(rng: np.random.Generator, voice: SubjectVoice) -> np.ndarray:
    n_syllables = int(rng.integers(4, 7))
    period_ms = int(rng.integers(170, 251))
    syllable_ms = int(rng.integers(120, 171))
    n = _n(period_ms * (n_syllables - 1) + syllable_ms)
    out = np.zeros(n)
    formants = [f * voice.formant_scale for f in VOWEL_FORMANTS[0]]
    for k in range(n_syllables):
        start = _n(period_ms * k)
        length = _n(syllable_ms)
        f0 = np.full(length, 1.3 * voice.f0_hz * rng.uniform(0.95, 1.05))
        vowel = _peak_scale(_formant_filter(_harmonics(f0), formants), 1.0)
        breath = _peak_scale(_bandpass_noise(rng, length, 500.0, 3000.0), 0.4)
        breath_env = _attack_release(length, _n(20), int(0.6 * length))
        vowel_env = np.sin(np.pi * np.arange(length) / length) ** 2
        out[start:start + length] += breath * breath_env + vowel * vowel_env
    return _peak_scale(out, rng.uniform(0.3, 0.45))


def synth_speech(rng: np.random.Generator, voice: SubjectVoice, n: int, amplitude: float) -> np.ndarray:
    """Harmonic source through slowly cross-faded vowel filters with syllabic modulation."""
    t = np.arange(n) / FS
    f0 = voice.f0_hz * (1.0 + 0.1 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
                        + 0.05 * _smooth_random(rng, n, 2.0))
    source = _harmonics(f0)
    weights = np.stack([np.exp(2.0 * _smooth_random(rng, n, 3.0)) for _ in VOWEL_FORMANTS])
    weights /= weights.sum(axis=0, keepdims=True)
    voiced = np.zeros(n)
    for weight, formants in zip(weights, VOWEL_FORMANTS):
        voiced += weight * _formant_filter(source, [f * voice.formant_scale for f in formants])
    rate = rng.uniform(3.0, 5.0)
    syllables = (0.5 - 0.5 * np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) ** 1.5
    phrasing = np.clip(0.6 + _smooth_random(rng, n, 0.7), 0.0, 1.0)
    fricative = _bandpass_noise(rng, n, 2000.0, 4500.0) * np.clip(_smooth_random(rng, n, 4.0), 0.0, None)
    speech = _peak_scale(voiced, 1.0) * syllables * phrasing + 0.1 * _peak_scale(fricative, 1.0)
    return _peak_scale(speech * _attack_release(n, _n(80), _n(80)), amplitude)


def _ambient(rng: np.random.Generator, n: int, condition: SessionCondition) -> np.ndarray:
    floor = lfilter([1.0], [1.0, -0.9], rng.standard_normal(n))
    floor *= rng.uniform(0.004, 0.008) / np.std(floor)
    if condition == SessionCondition.TV_NOISE_SITTING:
        tv_voice = _draw_voice(rng)
        floor += synth_speech(rng, tv_voice, n, rng.uniform(0.04, 0.07))
    elif condition == SessionCondition.STAIRS:
        floor *= 1.5
        step = 0
        while True:
            step += int(rng.uniform(0.45, 0.65) * FS)
            length = _n(80)
            if step + length >= n:
                break
            thud = _lowpass(rng.standard_normal(length), 150.0)
            thud *= np.exp(-np.arange(length) / (0.02 * FS))
            floor[step:step + length] += _peak_scale(thud, rng.uniform(0.05, 0.08))
    return floor


def _session_items(rng: np.random.Generator) -> List[Tuple[str, float]]:
    items = [("cough", tier) for tier in LOUDNESS_TIERS for _ in range(COUGHS_PER_TIER)]
    items += [("fit", 1.0)] * FITS
    items += [("forced_expiration", 0.0)] * FORCED_EXPIRATIONS
    items += [("throat_clearing", 0.0)] * THROAT_CLEARINGS
    items += [("laugh", 0.0)] * LAUGHS
    items += [("speech", 0.0)]
    return [items[i] for i in rng.permutation(len(items))]


def synth_session(
    rng: np.random.Generator,
    voice: SubjectVoice,
    subject_id: str,
    condition: SessionCondition,
    name: str,
    channel_roles: Sequence[ChannelRole],
    contact_rng: np.random.Generator,
) -> AnnotatedRecording:
    """Lay out one protocol session on a millisecond grid and mix the channels."""
    pieces: List[Tuple[int, np.ndarray, EventClass]] = []
    cursor_ms = 500

    def _place(signal: np.ndarray, event_class: EventClass) -> int:
        pieces.append((cursor_ms, signal, event_class))
        return signal.size * 1000 // FS

    for kind, tier in _session_items(rng):
        if kind == "cough":
            amplitude = tier * rng.uniform(0.85, 1.15)
            cursor_ms += _place(synth_cough(rng, voice, amplitude), EventClass.COUGH)
        elif kind == "fit":
            level = rng.choice(LOUDNESS_TIERS[:2])
            for index in range(COUGHS_PER_FIT):
                if index:
                    cursor_ms += int(rng.integers(150, 251))
                amplitude = level * rng.uniform(0.75, 1.05)
                cursor_ms += _place(synth_cough(rng, voice, amplitude, in_fit=True), EventClass.COUGH)
        elif kind == "forced_expiration":
            cursor_ms += _place(synth_forced_expiration(rng, voice), EventClass.FORCED_EXPIRATION)
        elif kind == "throat_clearing":
            cursor_ms += _place(synth_throat_clearing(rng, voice), EventClass.THROAT_CLEARING)
        elif kind == "laugh":
            cursor_ms += _place(synth_laugh(rng, voice), EventClass.LAUGH)
        else:
            length = _n(int(rng.integers(18000, 22001)))
            cursor_ms += _place(synth_speech(rng, voice, length, rng.uniform(0.2, 0.35)), EventClass.SPEECH)
        cursor_ms += int(rng.integers(600, 1201))

    n = _n(cursor_ms)
    own = np.zeros(n)
    events = []
    for start_ms, signal, event_class in pieces:
        start = _n(start_ms)
        own[start:start + signal.size] += signal
        end_ms = start_ms + signal.size * 1000 // FS
        events.append(LabeledEvent(start_ms / 1000.0, end_ms / 1000.0, event_class))

    channels = []
    for role in channel_roles:
        if role == ChannelRole.AUDIO:
            mix = own + _ambient(rng, n, condition)
        else:
            # Body-conducted: low-passed own sounds, no airborne ambience
            mix = 0.6 * _lowpass(own, 1200.0) + 0.003 * contact_rng.standard_normal(n)
        channels.append(Waveform(normalize_peak(mix), FS, role))

    return AnnotatedRecording(subject_id, condition, channels, events, name)


def generate_synthetic_corpus(
    seed: int,
    n_subjects: int,
    sessions_per_subject: int = 3,
    channel_roles: Sequence[ChannelRole] = (ChannelRole.AUDIO,),
) -> List[AnnotatedRecording]:
    """
    Generate a labeled corpus following the session protocol.

    Args:
        seed: Seed fixing every random draw
        n_subjects: Number of subjects (positive)
        sessions_per_subject: Sessions per subject; conditions cycle through
            quiet sitting, sitting with TV noise and stairs
        channel_roles: Channels to render; contact roles get a body-conducted
            rendering of the subject's own sounds

    Returns:
        Recordings ordered by subject then session
    """
    if n_subjects < 1 or sessions_per_subject < 1:
        raise ValidationError("n_subjects and sessions_per_subject must be positive")
    channel_roles = [ChannelRole(r) for r in channel_roles]
    if ChannelRole.AUDIO not in channel_roles:
        raise ValidationError("Synthetic corpora always include the audio channel")

    recordings = []
    for subject_index, subject_seq in enumerate(np.random.SeedSequence(seed).spawn(n_subjects)):
        subject_id = f"S{subject_index + 1:02d}"
        voice_seq, *session_seqs = subject_seq.spawn(1 + sessions_per_subject)
        voice = _draw_voice(np.random.default_rng(voice_seq))
        for session_index, session_seq in enumerate(session_seqs):
            condition = CONDITIONS[session_index % len(CONDITIONS)]
            audio_seq, contact_seq = session_seq.spawn(2)
            name = f"{subject_id}_{session_index + 1}_{condition.value}"
            recordings.append(
                synth_session(
                    np.random.default_rng(audio_seq),
                    voice,
                    subject_id,
                    condition,
                    name,
                    channel_roles,
                    np.random.default_rng(contact_seq),
                )
            )
            logger.debug("Generated %s (%.1f s)", name, recordings[-1].duration_s)
    return recordings
