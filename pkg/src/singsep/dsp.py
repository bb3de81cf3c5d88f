"""Audio front end and back end.

waveform -> resample -> fixed-length clips -> STFT -> |X|**p (top bin trimmed)
and the reverse path using the mixture phase and overlap-add synthesis.
"""

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.special import i0


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    valid_length: int = None  # samples before zero padding; None means all

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.valid_length is None:
            self.valid_length = len(self.samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def hann(n):
    """Hann window sampled at half-integer offsets.

    Unlike the textbook form it has no zero at index 0, so every sample of a
    clip is covered by a non-zero analysis weight. It is still constant
    overlap-add for any hop dividing n/2.
    """
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * (np.arange(n) + 0.5) / n)


@dataclass
class StftConfig:
    fft_size: int = 512
    hop: int = 64
    frames: int = 256
    compression: float = 0.3
    sample_rate: int = 20480
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")
        if not 0 < self.compression <= 1:
            raise ValueError(f"compression exponent must be in (0, 1], got {self.compression}")
        if self.frames < 1 or self.sample_rate <= 0:
            raise ValueError("frames and sample_rate must be positive")
        if self.window is None:
            self.window = hann(self.fft_size)
        self.window = np.asarray(self.window, dtype=np.float64)
        if len(self.window) != self.fft_size:
            raise ValueError(f"window length {len(self.window)} != fft_size {self.fft_size}")

    @classmethod
    def toy(cls):
        return cls(fft_size=64, hop=8, frames=32, sample_rate=8000)

    @property
    def clip_length(self):
        return self.fft_size + (self.frames - 1) * self.hop

    @property
    def bins(self):
        return self.fft_size // 2 + 1

    @property
    def grid_shape(self):
        return (self.fft_size // 2, self.frames)

    def to_dict(self):
        return {"fft_size": self.fft_size, "hop": self.hop, "frames": self.frames,
                "compression": self.compression, "sample_rate": self.sample_rate}


@dataclass
class ComplexSpectrogram:
    bins: np.ndarray  # (fft_size // 2 + 1, frames) complex
    config: StftConfig


# -- resampling -------------------------------------------------------------

_FILTER_CACHE = {}


def _polyphase_table(up, down, taps, beta):
    key = (up, down, taps, beta)
    if key not in _FILTER_CACHE:
        cutoff = min(1.0, up / down)  # relative to the input Nyquist
        half = taps // 2
        # phase p interpolates at fractional offset p/up between input samples
        frac = np.arange(up)[:, None] / up
        offsets = np.arange(-half + 1, half + 1)[None, :]
        t = offsets - frac  # input-sample distance of each tap
        h = cutoff * np.sinc(cutoff * t) * i0(beta * np.sqrt(np.clip(1.0 - (t / half) ** 2, 0.0, None))) / i0(beta)
        h /= h.sum(axis=1, keepdims=True)  # exact DC gain per phase
        _FILTER_CACHE[key] = (h, offsets[0])
    return _FILTER_CACHE[key]


def resample(audio, target_rate, taps=64, beta=8.6):
    """Band-limited rational-ratio resampling with a Kaiser-windowed sinc.

    Output length is ``round(len * target / source)``. Each output sample
    uses ``taps`` input samples; the filter for each of the ``up`` phases is
    normalized to unit DC gain.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src = int(audio.sample_rate)
    target_rate = int(target_rate)
    x = np.asarray(audio.samples, dtype=np.float64)
    if src == target_rate:
        return AudioClip(x.copy(), target_rate)
    n_out = int(round(len(x) * target_rate / src))
    if len(x) == 0 or n_out == 0:
        return AudioClip(np.zeros(0), target_rate)
    k = gcd(src, target_rate)
    up, down = target_rate // k, src // k
    table, offsets = _polyphase_table(up, down, taps, beta)
    pad = taps
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    y = np.empty(n_out)
    chunk = 8192
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(start + chunk, n_out))
        pos = n * down
        base, phase = pos // up, pos % up
        idx = base[:, None] + offsets[None, :] + pad
        y[n] = np.einsum("ij,ij->i", xp[idx], table[phase])
    return AudioClip(y, target_rate)


# -- segmentation -------------------------------------------------------------

def segment(audio, cfg):
    """Cut into non-overlapping clips of ``cfg.clip_length`` samples.

    The last clip is zero-padded and keeps its true length in ``valid_length``.
    """
    if audio.sample_rate != cfg.sample_rate:
        raise ValueError(f"audio at {audio.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    n = cfg.clip_length
    x = audio.samples
    clips = []
    for start in range(0, len(x), n):
        piece = x[start:start + n]
        valid = len(piece)
        if valid < n:
            piece = np.concatenate([piece, np.zeros(n - valid)])
        clips.append(AudioClip(piece, cfg.sample_rate, valid))
    return clips


def concatenate_track(clips):
    if not clips:
        raise ValueError("no clips to concatenate")
    rates = {c.sample_rate for c in clips}
    if len(rates) != 1:
        raise ValueError(f"sample rate mismatch between clips: {sorted(rates)}")
    return AudioClip(np.concatenate([c.samples[:c.valid_length] for c in clips]), rates.pop())


# -- spectral analysis / synthesis ----------------------------------------------

def _samples(clip):
    return clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)


def frame_signal(x, cfg):
    idx = np.arange(cfg.frames)[:, None] * cfg.hop + np.arange(cfg.fft_size)[None, :]
    return x[idx]


def stft(clip, cfg):
    x = _samples(clip)
    if len(x) != cfg.clip_length:
        raise ValueError(f"clip has {len(x)} samples, expected {cfg.clip_length}")
    frames = frame_signal(x, cfg) * cfg.window
    return ComplexSpectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=1).T, cfg)


def compress(spec, p=None):
    """Return (|X|**p with the top bin dropped, full-resolution phase)."""
    p = spec.config.compression if p is None else p
    mag = np.abs(spec.bins)
    return mag[:-1] ** p, np.angle(spec.bins)


def decompress(mag, p):
    return np.asarray(mag, dtype=np.float64) ** (1.0 / p)


# relative denominator floor for separated (inconsistent) spectra at clip edges
SEPARATION_EDGE_FLOOR = 1e-3


def istft(bins, cfg, length=None, edge_floor=0.0):
    """Overlap-add synthesis normalized by the summed squared window.

    With ``edge_floor=0`` the denominator is only guarded against exact zeros,
    which inverts an unmodified STFT exactly: squared Hann edge weights fall
    near 1e-10, so any absolute floor above that loses the first samples.
    The price is a gain of up to 1/w[0] at clip edges for spectra that are
    not the STFT of any signal (masked ones). A positive ``edge_floor``,
    relative to the peak of the denominator, bounds that gain.
    """
    frames = np.fft.irfft(bins.T, n=cfg.fft_size, axis=1) * cfg.window
    n = cfg.fft_size + (frames.shape[0] - 1) * cfg.hop
    out = np.zeros(n)
    norm = np.zeros(n)
    w2 = cfg.window ** 2
    for t, frame in enumerate(frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.fft_size)
        out[sl] += frame
        norm[sl] += w2
    floor = edge_floor * norm.max() if edge_floor > 0 else np.finfo(np.float64).tiny
    out /= np.maximum(norm, floor)
    return out if length is None else out[:length]


def reconstruct(est, mixture_phase, cfg, true_length=None, edge_floor=0.0):
    """Waveform from a compressed magnitude estimate and the mixture phase.

    Magnitudes are decompressed with exponent 1/p and the trimmed top bin is
    restored as zeros before synthesis.
    """
    est = np.asarray(est, dtype=np.float64)
    if np.any(est < 0):
        raise ValueError("compressed magnitudes must be non-negative")
    mag = np.vstack([decompress(est, cfg.compression), np.zeros((1, est.shape[1]))])
    x = istft(mag * np.exp(1j * mixture_phase), cfg, edge_floor=edge_floor)
    if true_length is not None:
        x = x[:true_length]
    return AudioClip(x, cfg.sample_rate, len(x))


def analyze_clip(clip, cfg):
    """Convenience: (compressed magnitude, phase) for one clip."""
    return compress(stft(clip, cfg), cfg.compression)


def waveform_to_grids(audio, cfg):
    """Resample, segment and analyze a whole track.

    Returns (magnitudes (n, F, T), phases (n, F+1, T), valid lengths).
    """
    if audio.sample_rate != cfg.sample_rate:
        audio = resample(audio, cfg.sample_rate)
    clips = segment(audio, cfg)
    mags, phases = [], []
    for clip in clips:
        m, ph = analyze_clip(clip, cfg)
        mags.append(m)
        phases.append(ph)
    if not clips:
        f, t = cfg.grid_shape
        return np.zeros((0, f, t)), np.zeros((0, f + 1, t)), []
    return np.stack(mags), np.stack(phases), [c.valid_length for c in clips]


def grids_to_waveform(mags, phases, valid_lengths, cfg, edge_floor=SEPARATION_EDGE_FLOOR):
    """Synthesize per-clip estimates and join them into one track."""
    clips = [reconstruct(m, ph, cfg, v, edge_floor) for m, ph, v in zip(mags, phases, valid_lengths)]
    return concatenate_track(clips)
