"""Mono WAV read/write (16-bit PCM and 32-bit float)."""

import numpy as np
from scipy.io import wavfile

from .dsp import AudioClip


def read_wav(path):
    """Read a WAV file as mono float64 in [-1, 1]; channels are averaged."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioClip(x, int(rate))


def write_wav(path, clip, fmt="float32"):
    x = np.asarray(clip.samples, dtype=np.float64)
    if fmt == "float32":
        data = x.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; use 'float32' or 'pcm16'")
    wavfile.write(path, int(clip.sample_rate), data)
