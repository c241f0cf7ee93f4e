"""
melspec.py
Audio-to-feature frontend: mono downmix, 12 kHz resampling, STFT power spectrum,
96-band HTK mel projection, log10 scaling and per-track standardization.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from config import (
    TARGET_SAMPLE_RATE,
    SUPPORTED_RATES,
    RESAMPLE_ZERO_CROSSINGS,
    RESAMPLE_KAISER_BETA,
    N_FFT,
    HOP_LENGTH,
    N_MELS,
    MEL_FMIN,
    MEL_FMAX,
    LOG_FLOOR,
    SPECTRUM_POWER,
    TARGET_FRAMES,
    DEGENERATE_STD,
    MELS_MAGIC,
    MELS_VERSION
)
from logger import log_event, log_debug, log_warning
from utils import TagNoiseError, ParseError, get_thread_count, write_sidecar
from .wavio import AudioClip, read_wav

_MELS_HEADER = struct.Struct("<4sIIIB")


@dataclass(frozen=True)
class MelSpectrogram:
    """values: (n_mels, n_frames) float32, mel bin x frame"""
    values: np.ndarray
    frameHop: int = HOP_LENGTH
    standardized: bool = False
    sourceId: str = ""
    degenerate: bool = False
    power: float = SPECTRUM_POWER

    @property
    def nFrames(self):
        return self.values.shape[1]


def frame_count(nSamples, nFft=N_FFT, hop=HOP_LENGTH):
    """Frames produced for a clip of nSamples (0 when shorter than one window)."""
    if nSamples < nFft:
        return 0
    return 1 + (nSamples - nFft) // hop

@lru_cache(maxsize=None)
def resample_filter(up, down):
    """
    Kaiser-windowed sinc lowpass for rational resampling by up/down.
    Args:
        up: Upsampling factor
        down: Downsampling factor
    """
    maxRate = max(up, down)
    halfLen = RESAMPLE_ZERO_CROSSINGS * maxRate
    # Unit DC gain; resample_poly applies the factor `up` itself
    return signal.firwin(2 * halfLen + 1, 1.0 / maxRate, window=("kaiser", RESAMPLE_KAISER_BETA))

def downmix_resample(clip, targetRate=TARGET_SAMPLE_RATE):
    """
    Average channels to mono and resample to the target rate.
    Args:
        clip: AudioClip at a supported rate
        targetRate: Output rate in Hz
    """
    if clip.sampleRate not in SUPPORTED_RATES:
        raise TagNoiseError(
            f"unsupported sample rate {clip.sampleRate} Hz (supported: {', '.join(map(str, SUPPORTED_RATES))})"
        )
    if clip.channels == 1 and clip.samples.ndim == 1 and clip.sampleRate == targetRate:
        return clip

    mono = clip.samples if clip.samples.ndim == 1 else clip.samples.mean(axis=1)
    if clip.sampleRate == targetRate:
        return AudioClip(samples=mono, sampleRate=targetRate, sourceId=clip.sourceId)

    ratio = Fraction(targetRate, clip.sampleRate)
    up, down = ratio.numerator, ratio.denominator
    resampled = signal.resample_poly(mono, up, down, window=resample_filter(up, down))
    log_debug(f"Resampled '{clip.sourceId}' {clip.sampleRate} -> {targetRate} Hz ({up}/{down})")
    return AudioClip(samples=resampled, sampleRate=targetRate, sourceId=clip.sourceId)

@lru_cache(maxsize=None)
def analysis_window(nFft=N_FFT):
    """Periodic Hann window."""
    return signal.get_window("hann", nFft, fftbins=True)

def frame_signal(samples, nFft=N_FFT, hop=HOP_LENGTH):
    """
    Hann-windowed frames of a mono signal.
    Args:
        samples: 1-D signal with at least nFft samples
        nFft: Frame length
        hop: Frame hop
    Returns:
        (n_frames, nFft) array
    """
    frames = sliding_window_view(samples, nFft)[::hop]
    return frames * analysis_window(nFft)

def power_spectrum(frames):
    """
    One-sided power spectrum normalized so each row sums to the frame energy.
    Args:
        frames: (n_frames, nFft) windowed frames
    Returns:
        (n_frames, nFft // 2 + 1) array
    """
    nFft = frames.shape[1]
    spectrum = np.abs(np.fft.rfft(frames, n=nFft, axis=1)) ** 2 / nFft
    # Interior bins stand for their negative-frequency mirror too
    spectrum[:, 1:(nFft + 1) // 2] *= 2.0
    return spectrum

@lru_cache(maxsize=None)
def mel_filterbank(sampleRate=TARGET_SAMPLE_RATE, nFft=N_FFT, nMels=N_MELS, fmin=MEL_FMIN, fmax=MEL_FMAX):
    """
    Unnormalized triangular HTK mel filters, nMels + 2 edges equally spaced in mel.
    Returns:
        (nMels, nFft // 2 + 1) read-only array
    """
    bank = librosa.filters.mel(
        sr=sampleRate,
        n_fft=nFft,
        n_mels=nMels,
        fmin=fmin,
        fmax=fmax,
        htk=True,
        norm=None,
        dtype=np.float64
    )
    bank.setflags(write=False)
    return bank

def melspectrogram(clip, power=SPECTRUM_POWER):
    """
    Log-mel spectrogram of a 12 kHz mono clip (not standardized).
    Args:
        clip: AudioClip at TARGET_SAMPLE_RATE, mono
        power: 2.0 for the power spectrum, 1.0 for magnitude
    """
    if clip.sampleRate != TARGET_SAMPLE_RATE or clip.samples.ndim != 1:
        raise TagNoiseError(f"melspectrogram needs {TARGET_SAMPLE_RATE} Hz mono input; run downmix_resample first")
    if clip.nSamples < N_FFT:
        raise TagNoiseError(f"clip '{clip.sourceId}' too short: {clip.nSamples} samples < {N_FFT}")
    if power not in (1.0, 2.0):
        raise ValueError("power must be 1.0 (magnitude) or 2.0 (power)")

    spectrum = power_spectrum(frame_signal(np.asarray(clip.samples, dtype=np.float64)))
    if power == 1.0:
        spectrum = np.sqrt(spectrum)
    mel = mel_filterbank() @ spectrum.T
    values = np.log10(np.maximum(mel, LOG_FLOOR))
    return MelSpectrogram(
        values=values.astype(np.float32),
        frameHop=HOP_LENGTH,
        standardized=False,
        sourceId=clip.sourceId,
        power=power
    )

def standardize(spec):
    """
    Zero-mean unit-variance scaling over the whole matrix; constant input maps to zeros.
    Args:
        spec: MelSpectrogram
    """
    values = spec.values.astype(np.float64)
    std = values.std()
    if std < DEGENERATE_STD:
        log_warning(f"'{spec.sourceId}' has a constant spectrogram; standardized to zeros")
        return replace(spec, values=np.zeros(values.shape, dtype=np.float32), standardized=True, degenerate=True)
    scaled = (values - values.mean()) / std
    return replace(spec, values=scaled.astype(np.float32), standardized=True)

def fit_length(spec, targetFrames=TARGET_FRAMES):
    """
    Center-crop or zero-pad (right-heavy) a standardized spectrogram to targetFrames.
    Args:
        spec: Standardized MelSpectrogram
        targetFrames: Output frame count
    """
    if not spec.standardized:
        raise ValueError("fit_length expects a standardized spectrogram")
    nFrames = spec.nFrames
    if nFrames == targetFrames:
        return spec
    if nFrames > targetFrames:
        start = (nFrames - targetFrames) // 2
        return replace(spec, values=spec.values[:, start:start + targetFrames].copy())
    pad = targetFrames - nFrames
    left = pad // 2
    padded = np.pad(spec.values, ((0, 0), (left, pad - left)), mode="constant")
    return replace(spec, values=padded)

def features_from_clip(clip, targetFrames=TARGET_FRAMES, power=SPECTRUM_POWER):
    """Full frontend: downmix/resample, log-mel, standardize, fit length."""
    spec = melspectrogram(downmix_resample(clip), power)
    return fit_length(standardize(spec), targetFrames)

def write_mels(spec, path):
    """
    Write a MELS feature file (header then float32 mel-major values).
    Args:
        spec: MelSpectrogram
        path: Output path
    """
    nMels, nFrames = spec.values.shape
    header = _MELS_HEADER.pack(MELS_MAGIC, MELS_VERSION, nMels, nFrames, int(spec.standardized))
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())
    return path

def read_mels(path):
    """
    Load a MELS feature file.
    Args:
        path: File path; the track id is the file stem
    """
    data = Path(path).read_bytes()
    if len(data) < _MELS_HEADER.size:
        raise ParseError("file is truncated", path)
    magic, version, nMels, nFrames, standardized = _MELS_HEADER.unpack_from(data)
    if magic != MELS_MAGIC:
        raise ParseError("not a MELS file (bad magic)", path)
    if version != MELS_VERSION:
        raise ParseError(f"unsupported MELS version {version}", path)
    expected = _MELS_HEADER.size + 4 * nMels * nFrames
    if len(data) != expected:
        raise ParseError(f"payload size {len(data) - _MELS_HEADER.size} does not match {nMels}x{nFrames}", path)
    values = np.frombuffer(data, dtype="<f4", offset=_MELS_HEADER.size).reshape(nMels, nFrames)
    return MelSpectrogram(
        values=values.astype(np.float32),
        standardized=bool(standardized),
        sourceId=Path(path).stem
    )

def featurize_file(wavPath, outDir, targetFrames=TARGET_FRAMES, power=SPECTRUM_POWER):
    """
    Featurize one WAV file into '<outDir>/<track_id>.mels'.
    Args:
        wavPath: Input WAV; its stem is the track id
        outDir: Output directory
        targetFrames: Frame count of the output
        power: Spectrum power (2.0 power, 1.0 magnitude)
    """
    spec = features_from_clip(read_wav(wavPath), targetFrames, power)
    outPath = Path(outDir) / f"{spec.sourceId}.mels"
    write_mels(spec, outPath)
    write_sidecar(outPath, extra={"power": power, "target_frames": targetFrames, "degenerate": spec.degenerate})
    return outPath

def featurize_directory(audioDir, outDir, targetFrames=TARGET_FRAMES, power=SPECTRUM_POWER):
    """
    Featurize every '*.wav' in a directory, in parallel when --threads > 1.
    Args:
        audioDir: Directory of WAV files
        outDir: Output directory (created if missing)
        targetFrames: Frame count of the outputs
        power: Spectrum power (2.0 power, 1.0 magnitude)
    """
    wavPaths = sorted(Path(audioDir).glob("*.wav"))
    if not wavPaths:
        raise TagNoiseError(f"no .wav files in {audioDir}")
    Path(outDir).mkdir(parents=True, exist_ok=True)

    def one(path):
        return featurize_file(path, outDir, targetFrames, power)

    threads = get_thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outPaths = list(pool.map(one, wavPaths))
    else:
        outPaths = [one(path) for path in wavPaths]

    log_event(f"Featurized {len(outPaths)} files into {outDir} ({targetFrames} frames, power {power})")
    return outPaths
