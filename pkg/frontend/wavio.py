"""
wavio.py
RIFF WAV input (PCM 16-bit or IEEE float 32-bit) into AudioClip.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from utils import TagNoiseError, ParseError


@dataclass(frozen=True)
class AudioClip:
    """samples: (n,) mono or (n, channels) array in [-1, 1]"""
    samples: np.ndarray
    sampleRate: int
    sourceId: str = ""

    def __post_init__(self):
        if self.sampleRate <= 0:
            raise TagNoiseError(f"sample rate must be positive, got {self.sampleRate}")
        if not np.all(np.isfinite(self.samples)):
            raise TagNoiseError(f"clip '{self.sourceId}' contains non-finite samples")

    @property
    def channels(self):
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def nSamples(self):
        return self.samples.shape[0]


def read_wav(path, sourceId=None):
    """
    Read a WAV file as float64 samples.
    Args:
        path: WAV path
        sourceId: Id attached to the clip (default: file stem)
    """
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as e:
        raise ParseError(f"unreadable WAV file ({e})", path)

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ParseError(f"unsupported sample format {data.dtype} (PCM 16-bit or float 32-bit only)", path)

    return AudioClip(samples=samples, sampleRate=int(rate), sourceId=sourceId or Path(path).stem)

def write_wav(path, clip):
    """
    Write an AudioClip as 16-bit PCM.
    Args:
        path: Output path
        clip: AudioClip
    """
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, clip.sampleRate, pcm)
    return path
