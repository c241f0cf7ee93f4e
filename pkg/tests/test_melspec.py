import math

import numpy as np
import pytest

from config import TARGET_SAMPLE_RATE, N_FFT, N_MELS, LOG_FLOOR
from utils import TagNoiseError, ParseError
from frontend.wavio import AudioClip, read_wav, write_wav
from frontend.melspec import (
    MelSpectrogram,
    frame_count,
    downmix_resample,
    power_spectrum,
    frame_signal,
    mel_filterbank,
    melspectrogram,
    standardize,
    fit_length,
    features_from_clip,
    write_mels,
    read_mels,
    featurize_directory
)


def tone(frequency, seconds=1.0, rate=TARGET_SAMPLE_RATE, amplitude=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amplitude * np.sin(2 * np.pi * frequency * t)


def test_frame_count():
    assert frame_count(N_FFT - 1) == 0
    assert frame_count(N_FFT) == 1
    assert frame_count(12000) == 45
    assert frame_count(349200) == 1363


def test_power_spectrum_preserves_frame_energy():
    frames = frame_signal(np.random.default_rng(0).normal(size=4096))
    spectrum = power_spectrum(frames)
    assert spectrum.shape == (frames.shape[0], N_FFT // 2 + 1)
    assert np.allclose(spectrum.sum(axis=1), np.sum(frames ** 2, axis=1))


def test_filterbank_shape_and_support():
    bank = mel_filterbank()
    assert bank.shape == (N_MELS, N_FFT // 2 + 1)
    assert np.all(bank >= 0)
    assert np.all(bank.max(axis=1) > 0)
    with pytest.raises(ValueError):
        bank[0, 0] = 1.0


def test_tone_peaks_in_matching_band():
    fftBin = 42
    frequency = fftBin * TARGET_SAMPLE_RATE / N_FFT
    spec = melspectrogram(AudioClip(tone(frequency), TARGET_SAMPLE_RATE, "tone"))
    assert spec.values.shape == (N_MELS, 45)
    assert spec.values.dtype == np.float32
    expected = int(np.argmax(mel_filterbank()[:, fftBin]))
    assert int(np.argmax(spec.values.mean(axis=1))) == expected


def test_silence_hits_floor_and_standardizes_to_zeros():
    clip = AudioClip(np.zeros(4000), TARGET_SAMPLE_RATE, "quiet")
    spec = melspectrogram(clip)
    assert np.allclose(spec.values, math.log10(LOG_FLOOR))
    scaled = standardize(spec)
    assert scaled.degenerate
    assert not scaled.values.any()


def test_standardize():
    values = np.random.default_rng(2).normal(3.0, 5.0, size=(N_MELS, 50)).astype(np.float32)
    scaled = standardize(MelSpectrogram(values=values))
    assert scaled.standardized and not scaled.degenerate
    assert abs(float(scaled.values.mean())) < 1e-5
    assert float(scaled.values.std()) == pytest.approx(1.0, abs=1e-4)


def test_fit_length_crops_center_and_pads():
    values = np.tile(np.arange(10, dtype=np.float32), (2, 1))
    spec = MelSpectrogram(values=values, standardized=True)
    assert fit_length(spec, 4).values[0].tolist() == [3, 4, 5, 6]
    padded = fit_length(spec, 13).values[0].tolist()
    assert padded[:1] == [0] and padded[1:11] == list(range(10)) and padded[11:] == [0, 0]
    with pytest.raises(ValueError):
        fit_length(MelSpectrogram(values=values), 4)


def test_downmix_and_resample():
    stereo = np.column_stack([tone(440, rate=44100), tone(440, rate=44100)])
    clip = downmix_resample(AudioClip(stereo, 44100, "s"))
    assert clip.sampleRate == TARGET_SAMPLE_RATE
    assert clip.samples.ndim == 1
    assert abs(clip.nSamples - 12000) <= 1
    # 440 Hz survives resampling with its level
    assert np.sqrt(np.mean(clip.samples[1000:-1000] ** 2)) == pytest.approx(0.5 / math.sqrt(2), rel=0.02)
    with pytest.raises(TagNoiseError):
        downmix_resample(AudioClip(np.zeros(100), 9000))


def test_short_or_wrong_rate_clips_rejected():
    with pytest.raises(TagNoiseError):
        melspectrogram(AudioClip(np.zeros(N_FFT - 1), TARGET_SAMPLE_RATE))
    with pytest.raises(TagNoiseError):
        melspectrogram(AudioClip(np.zeros(4000), 16000))


def test_full_frontend_output_shape():
    spec = features_from_clip(AudioClip(tone(1000, rate=22050), 22050, "x"), targetFrames=64)
    assert spec.values.shape == (N_MELS, 64)
    assert spec.standardized


def test_mels_file(tmp_path):
    spec = standardize(melspectrogram(AudioClip(tone(500), TARGET_SAMPLE_RATE, "t001")))
    path = tmp_path / "t001.mels"
    write_mels(spec, path)
    loaded = read_mels(path)
    assert loaded.sourceId == "t001"
    assert loaded.standardized
    assert np.array_equal(loaded.values, spec.values)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ParseError):
        read_mels(path)


def test_featurize_directory(tmp_path):
    audio = tmp_path / "audio"
    audio.mkdir()
    for name, frequency in (("a", 300), ("b", 2000)):
        write_wav(audio / f"{name}.wav", AudioClip(tone(frequency, rate=16000), 16000, name))
    assert read_wav(audio / "a.wav").sampleRate == 16000
    outPaths = featurize_directory(audio, tmp_path / "features", targetFrames=32)
    assert [path.name for path in outPaths] == ["a.mels", "b.mels"]
    assert read_mels(outPaths[1]).values.shape == (N_MELS, 32)
    assert (tmp_path / "features" / "a.mels.meta.json").exists()
    with pytest.raises(TagNoiseError):
        featurize_directory(tmp_path / "features", tmp_path / "other")


def test_resampled_dc_keeps_its_level():
    clip = downmix_resample(AudioClip(np.full(48000, 0.5), 48000, "dc"))
    assert clip.sampleRate == TARGET_SAMPLE_RATE
    # filter edges aside, a constant stays constant
    assert np.allclose(clip.samples[200:-200], 0.5, atol=1e-6)


def test_resampled_tone_keeps_its_frequency():
    clip = downmix_resample(AudioClip(tone(1000, rate=48000), 48000, "sine"))
    samples = clip.samples * np.hanning(clip.nSamples)
    spectrum = np.abs(np.fft.rfft(samples, n=8 * clip.nSamples))
    frequencies = np.fft.rfftfreq(8 * clip.nSamples, d=1.0 / clip.sampleRate)
    assert abs(frequencies[np.argmax(spectrum)] - 1000.0) <= 0.5


def test_featurizing_twice_gives_identical_files(tmp_path):
    audio = tmp_path / "audio"
    audio.mkdir()
    write_wav(audio / "a.wav", AudioClip(tone(700, rate=48000) + tone(3000, rate=48000, amplitude=0.2), 48000, "a"))
    first = featurize_directory(audio, tmp_path / "one", targetFrames=32)
    second = featurize_directory(audio, tmp_path / "two", targetFrames=32)
    assert [path.read_bytes() for path in first] == [path.read_bytes() for path in second]
