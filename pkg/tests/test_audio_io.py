"""Tests for audio and annotation I/O."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
import soundfile as sf

from cough_counter.audio_io import (
    AnnotatedRecording,
    ChannelRole,
    EventClass,
    LabeledEvent,
    SessionCondition,
    Waveform,
    load_annotations,
    load_manifest,
    load_recording,
    resample_to_10khz,
    validate_events,
    write_annotations,
)
from cough_counter.errors import (
    AnnotationError,
    AudioFormatError,
    ConfigurationError,
    NumericError,
    UnsupportedRateError,
)
from tests.conftest import sine


def _write_wav(path: Path, data: np.ndarray, rate: int, subtype: str = "PCM_16") -> None:
    sf.write(str(path), data, rate, subtype=subtype)


def test_load_recording_with_empty_annotation_file():
    """A 10 kHz WAV with an empty annotation file has no events."""
    with tempfile.TemporaryDirectory() as tmpdir:
        wav = Path(tmpdir) / "rec.wav"
        labels = Path(tmpdir) / "rec.csv"
        _write_wav(wav, 0.5 * sine(440.0, 10000), 10000)
        labels.write_text("")

        rec = load_recording(wav, labels, subject_id="S01")
        assert rec.events == []
        assert rec.sample_rate == 10000
        assert rec.channels[0].samples.size == 10000
        assert np.max(np.abs(rec.channels[0].samples)) == pytest.approx(1.0)


def test_load_recording_header_only_annotations():
    """A header without rows also yields no events."""
    with tempfile.TemporaryDirectory() as tmpdir:
        wav = Path(tmpdir) / "rec.wav"
        labels = Path(tmpdir) / "rec.csv"
        _write_wav(wav, 0.5 * sine(440.0, 5000), 10000)
        labels.write_text("start_s,end_s,class\n")

        assert load_recording(wav, labels).events == []


def test_load_recording_resamples_44100():
    """4.41 s at 44.1 kHz becomes 44100 samples at 10 kHz."""
    with tempfile.TemporaryDirectory() as tmpdir:
        wav = Path(tmpdir) / "rec.wav"
        _write_wav(wav, 0.3 * sine(300.0, 194481, 44100), 44100)

        rec = load_recording(wav)
        assert rec.sample_rate == 10000
        assert abs(rec.channels[0].samples.size - 44100) <= 1


def test_load_recording_reversed_row_names_row():
    """An annotation ending before it starts is reported by row number."""
    with tempfile.TemporaryDirectory() as tmpdir:
        wav = Path(tmpdir) / "rec.wav"
        labels = Path(tmpdir) / "rec.csv"
        _write_wav(wav, 0.5 * sine(440.0, 10000), 10000)
        labels.write_text("start_s,end_s,class\n0.50,0.30,cough\n")

        with pytest.raises(AnnotationError) as excinfo:
            load_recording(wav, labels)
        assert excinfo.value.rows == [1]
        assert "rows: 1" in str(excinfo.value)


def test_validate_events_overlap_lists_both_rows():
    """Overlapping events are reported together."""
    events = [
        LabeledEvent(0.1, 0.5, EventClass.COUGH),
        LabeledEvent(1.0, 1.2, EventClass.LAUGH),
        LabeledEvent(0.4, 0.8, EventClass.SPEECH),
    ]
    with pytest.raises(AnnotationError) as excinfo:
        validate_events(events, 2.0)
    assert excinfo.value.rows == [1, 3]


def test_validate_events_out_of_range():
    """Events past the recording end are rejected."""
    with pytest.raises(AnnotationError) as excinfo:
        validate_events([LabeledEvent(0.5, 3.0, EventClass.COUGH)], 2.0)
    assert excinfo.value.rows == [1]


def test_load_annotations_unknown_class():
    """Unknown class names are reported by row."""
    with tempfile.TemporaryDirectory() as tmpdir:
        labels = Path(tmpdir) / "rec.csv"
        labels.write_text("start_s,end_s,class\n0.100,0.200,cough\n0.300,0.400,sneeze\n")
        with pytest.raises(AnnotationError) as excinfo:
            load_annotations(labels)
        assert excinfo.value.rows == [2]


def test_annotations_round_trip_text():
    """Writing loaded annotations reproduces the file."""
    text = "start_s,end_s,class\n0.500,0.750,cough\n1.250,2.125,laugh\n3.000,4.500,speech\n"
    with tempfile.TemporaryDirectory() as tmpdir:
        src = Path(tmpdir) / "a.csv"
        dst = Path(tmpdir) / "b.csv"
        src.write_text(text)
        write_annotations(load_annotations(src), dst)
        assert dst.read_text() == text


def test_malformed_wav_is_format_error():
    """A file that is not a WAV raises AudioFormatError naming the file."""
    with tempfile.TemporaryDirectory() as tmpdir:
        wav = Path(tmpdir) / "broken.wav"
        wav.write_bytes(b"RIFF\x00\x00garbage")
        with pytest.raises(AudioFormatError) as excinfo:
            load_recording(wav)
        assert "broken.wav" in str(excinfo.value)


def test_multichannel_roles():
    """Each WAV channel is assigned its declared role."""
    with tempfile.TemporaryDirectory() as tmpdir:
        wav = Path(tmpdir) / "rec.wav"
        data = np.stack([0.5 * sine(300.0, 4000), 0.1 * sine(150.0, 4000)], axis=1)
        _write_wav(wav, data, 10000)
        rec = load_recording(wav, channel_roles=[ChannelRole.AUDIO, ChannelRole.CONTACT_THORAX])
        assert rec.roles == [ChannelRole.AUDIO, ChannelRole.CONTACT_THORAX]
        # Each channel is normalized on its own
        assert np.max(np.abs(rec.channel(ChannelRole.CONTACT_THORAX).samples)) == pytest.approx(1.0)
        with pytest.raises(ConfigurationError):
            rec.channel(ChannelRole.CONTACT_TRACHEA)


def test_resample_identity_at_10khz():
    """Input already at 10 kHz passes through unchanged."""
    w = Waveform(sine(500.0, 1000), 10000)
    assert resample_to_10khz(w) is w


@pytest.mark.parametrize("freq, rate", [(1000.0, 20000), (100.0, 8000)])
def test_resample_tone_matches_analytic(freq, rate):
    """A resampled tone matches the tone generated directly at 10 kHz."""
    seconds = 1.0
    w = Waveform(sine(freq, int(seconds * rate), rate), rate)
    out = resample_to_10khz(w)
    expected = sine(freq, int(seconds * 10000))
    assert out.sample_rate == 10000
    assert out.samples.size == expected.size
    middle = slice(500, -500)
    rms_error = np.sqrt(np.mean((out.samples[middle] - expected[middle]) ** 2))
    assert rms_error < 0.01
    energy_in = np.mean(w.samples ** 2)
    energy_out = np.mean(out.samples[middle] ** 2)
    assert energy_out == pytest.approx(energy_in, rel=0.01)


def test_resample_keeps_dominant_bin():
    """A 2.5 kHz tone at 16 kHz keeps its dominant frequency bin."""
    out = resample_to_10khz(Waveform(sine(2500.0, 16000, 16000), 16000))
    spectrum = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(out.samples.size, 1 / 10000)
    assert abs(freqs[np.argmax(spectrum)] - 2500.0) <= freqs[1]


def test_resample_below_8khz_rejected():
    """Sources below 8 kHz cannot be brought to 10 kHz."""
    with pytest.raises(UnsupportedRateError):
        resample_to_10khz(Waveform(sine(200.0, 4000, 4000), 4000))


def test_waveform_rejects_nan():
    """Non-finite samples are refused."""
    with pytest.raises(NumericError):
        Waveform(np.array([0.0, np.nan, 0.1]), 10000)


def test_recording_channels_must_align():
    """Channels of different lengths cannot form a recording."""
    with pytest.raises(ValueError):
        AnnotatedRecording(
            "S01",
            SessionCondition.STAIRS,
            [Waveform(np.zeros(100), 10000), Waveform(np.zeros(90), 10000, ChannelRole.CONTACT_TRACHEA)],
        )


def test_load_manifest_resolves_relative_paths():
    """Manifest paths are relative to the manifest file."""
    with tempfile.TemporaryDirectory() as tmpdir:
        base = Path(tmpdir)
        (base / "data").mkdir()
        _write_wav(base / "data" / "a.wav", 0.5 * sine(300.0, 4000), 10000)
        (base / "data" / "a.csv").write_text("start_s,end_s,class\n")
        manifest = base / "manifest.json"
        manifest.write_text(json.dumps([
            {"audio": "data/a.wav", "labels": "data/a.csv", "subject": "S07",
             "condition": "stairs", "channels": ["audio"]},
        ]))

        loaded = load_manifest(manifest)
        assert loaded.subjects == ["S07"]
        assert loaded.entries[0].audio == base / "data" / "a.wav"
        assert loaded.entries[0].condition == SessionCondition.STAIRS


def test_load_manifest_missing_file():
    """A manifest entry pointing to a missing file is an I/O error."""
    with tempfile.TemporaryDirectory() as tmpdir:
        manifest = Path(tmpdir) / "manifest.json"
        manifest.write_text(json.dumps([
            {"audio": "nope.wav", "labels": "nope.csv", "subject": "S01",
             "condition": "quiet_sitting", "channels": ["audio"]},
        ]))
        with pytest.raises(FileNotFoundError):
            load_manifest(manifest)


def test_load_manifest_bad_entry():
    """Missing keys are configuration errors."""
    with tempfile.TemporaryDirectory() as tmpdir:
        manifest = Path(tmpdir) / "manifest.json"
        manifest.write_text(json.dumps([{"audio": "a.wav"}]))
        with pytest.raises(ConfigurationError):
            load_manifest(manifest, check_files=False)
