"""Training sets, sampling, and the synthetic crosses built from estimated vocals."""

import json
import logging
import os
from dataclasses import dataclass, field
from glob import glob

import numpy as np
from scipy import signal

from .audio_io import read_wav, write_wav
from .autodiff import Tensor, ops
from .dsp import AudioClip, StftConfig, waveform_to_grids
from .models import g_apply

log = logging.getLogger(__name__)


class DatasetError(RuntimeError):
    pass


@dataclass
class SpectralSet:
    """Compressed-magnitude clips with their phase and provenance."""

    magnitudes: np.ndarray  # (n, F, T)
    phases: np.ndarray  # (n, F + 1, T)
    sources: list  # (track id, clip index) per sample
    valid_lengths: list
    config: StftConfig
    seed: int = 0
    order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.magnitudes.ndim != 3 or self.magnitudes.shape[1:] != self.config.grid_shape:
            if len(self.magnitudes):
                raise ValueError(f"grid shape {self.magnitudes.shape[1:]} != config {self.config.grid_shape}")
        if self.order is None:
            self.order = np.random.default_rng(self.seed).permutation(len(self.magnitudes))

    def __len__(self):
        return len(self.magnitudes)

    def __getitem__(self, i):
        return self.magnitudes[i]

    def index(self):
        return [{"track": t, "clip": int(c)} for t, c in self.sources]

    def save_index(self, path):
        with open(path, "w") as fh:
            json.dump({"seed": self.seed, "order": self.order.tolist(), "items": self.index()}, fh, indent=1)


class MixtureSet(SpectralSet):
    """Mixed (vocal + instrumental) clips."""


class SourceSet(SpectralSet):
    """Instrumental-only clips."""


@dataclass
class CrossSample:
    cross: object
    component_b: object
    component_c: object


def _set_from_tracks(cls, tracks, cfg, seed):
    mags, phases, sources, valid = [], [], [], []
    for track_id, audio in tracks:
        m, ph, v = waveform_to_grids(audio, cfg)
        mags.append(m)
        phases.append(ph)
        sources += [(track_id, i) for i in range(len(m))]
        valid += v
    f, t = cfg.grid_shape
    if mags:
        mag, ph = np.concatenate(mags), np.concatenate(phases)
    else:
        mag, ph = np.zeros((0, f, t)), np.zeros((0, f + 1, t))
    return cls(mag, ph, sources, valid, cfg, seed)


def load_dataset(directory, role, cfg, seed=0):
    """Load every WAV in ``directory`` as a MixtureSet or SourceSet."""
    cls = {"mixtures": MixtureSet, "sources": SourceSet}.get(role)
    if cls is None:
        raise ValueError(f"role must be 'mixtures' or 'sources', got {role!r}")
    tracks = []
    for path in sorted(glob(os.path.join(directory, "*.wav"))):
        try:
            tracks.append((os.path.basename(path), read_wav(path)))
        except (ValueError, OSError) as exc:
            log.warning("skipping unreadable file %s: %s", path, exc)
    dataset = _set_from_tracks(cls, tracks, cfg, seed)
    if len(dataset) == 0:
        raise DatasetError(f"no usable audio found in {directory}")
    return dataset


# -- crosses ----------------------------------------------------------------

def estimate_b(g, a):
    """Vocal estimate ``a - g(a) = a * (1 - m(a))``."""
    a = g.as_input(a)
    return ops.sub(a, g_apply(g, a))


def make_cross(b_est, c, domain="compressed", p=0.3, detach=False):
    """Synthetic mixture of an estimated vocal and a real instrumental.

    ``domain="compressed"`` adds the compressed magnitudes directly;
    ``"linear"`` decompresses, adds and recompresses.
    """
    b_est = b_est if isinstance(b_est, Tensor) else Tensor(b_est)
    c = c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=b_est.dtype))
    if c.shape != b_est.shape:
        if c.size == b_est.size:
            c = ops.reshape(c, b_est.shape)
        else:
            raise ValueError(f"shape mismatch: b_est {b_est.shape} vs c {c.shape}")
    if detach:
        b_est = ops.detach(b_est)
    if domain == "compressed":
        cross = ops.add(b_est, c)
    elif domain == "linear":
        cross = ops.power(ops.add(ops.power(b_est, 1.0 / p), ops.power(c, 1.0 / p)), p)
    else:
        raise ValueError(f"unknown mixing domain {domain!r}")
    return CrossSample(cross, b_est, c)


def sample_batch(mixtures, sources, seed, step):
    """(a, c, c') drawn uniformly with replacement; a pure function of (seed, step)."""
    if len(mixtures) == 0 or len(sources) == 0:
        raise DatasetError("cannot sample from an empty set")
    rng = np.random.default_rng([seed, step])
    i = rng.integers(len(mixtures))
    j, k = rng.integers(len(sources), size=2)
    return mixtures[i], sources[j], sources[k]


# -- toy data -----------------------------------------------------------------

VOCAL_BAND = (1000.0, 2500.0)
INSTRUMENT_BAND = (0.0, 750.0)


@dataclass
class ToyTrack:
    name: str
    vocals: np.ndarray
    instrumental: np.ndarray

    @property
    def mixture(self):
        return self.vocals + self.instrumental


def toy_vocal(rng, n, sr):
    """A few sine notes with slow vibrato inside VOCAL_BAND."""
    t = np.arange(n) / sr
    notes = rng.integers(2, 5)
    bounds = np.sort(rng.choice(np.arange(1, 16), size=notes - 1, replace=False)) / 16.0
    edges = np.concatenate([[0.0], bounds, [1.0]]) * n
    freq = np.zeros(n)
    amp = np.zeros(n)
    for lo, hi in zip(edges[:-1].astype(int), edges[1:].astype(int)):
        f0 = rng.uniform(VOCAL_BAND[0] + 150, VOCAL_BAND[1] - 350)
        rate, depth = rng.uniform(3.0, 6.0), rng.uniform(15.0, 40.0)
        freq[lo:hi] = f0 + depth * np.sin(2 * np.pi * rate * t[lo:hi] + rng.uniform(0, 2 * np.pi))
        length = hi - lo
        ramp = min(length // 4, int(0.01 * sr)) or 1
        env = np.ones(length)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        # occasional rests between notes
        amp[lo:hi] = env * (0.0 if rng.random() < 0.15 else rng.uniform(0.2, 0.3))
    phase = 2 * np.pi * np.cumsum(freq) / sr
    return amp * np.sin(phase)


def toy_instrumental(rng, n, sr):
    """Low-passed noise plus a sustained three-tone chord inside INSTRUMENT_BAND."""
    sos = signal.butter(8, INSTRUMENT_BAND[1] * 0.8, btype="low", fs=sr, output="sos")
    noise = signal.sosfilt(sos, rng.normal(size=n + 256))[256:]
    noise *= rng.uniform(0.05, 0.1) / (np.std(noise) + 1e-12)
    t = np.arange(n) / sr
    root = rng.uniform(130.0, 260.0)
    chord = sum(rng.uniform(0.05, 0.09) * np.sin(2 * np.pi * root * r * t + rng.uniform(0, 2 * np.pi))
                for r in (1.0, 1.25, 1.5))
    return noise + chord


def make_toy_tracks(seed, count, cfg, clips_per_track=8, prefix="track", vocals=True, instrumental=True):
    rng = np.random.default_rng(seed)
    n = cfg.clip_length * clips_per_track
    tracks = []
    for i in range(count):
        v = toy_vocal(rng, n, cfg.sample_rate) if vocals else np.zeros(n)
        inst = toy_instrumental(rng, n, cfg.sample_rate) if instrumental else np.zeros(n)
        tracks.append(ToyTrack(f"{prefix}{i:03d}", v, inst))
    return tracks


def make_toy_datasets(seed, counts, cfg=None, clips_per_track=8):
    """Toy mixtures, instrumental-only sources and hidden vocal references.

    ``counts`` is (number of mixture tracks, number of instrumental tracks).
    Mixture and instrumental tracks are drawn independently (unmatched).
    Returns (MixtureSet, SourceSet, {track name: ToyTrack}).
    """
    cfg = cfg or StftConfig.toy()
    n_mix, n_src = counts
    mix_tracks = make_toy_tracks(seed, n_mix, cfg, clips_per_track, "mix")
    src_tracks = make_toy_tracks(seed + 1_000_003, n_src, cfg, clips_per_track, "inst", vocals=False)
    mixtures = _set_from_tracks(
        MixtureSet, [(t.name, AudioClip(t.mixture, cfg.sample_rate)) for t in mix_tracks], cfg, seed)
    sources = _set_from_tracks(
        SourceSet, [(t.name, AudioClip(t.instrumental, cfg.sample_rate)) for t in src_tracks], cfg, seed)
    return mixtures, sources, {t.name: t for t in mix_tracks}


def band_energy_fraction(x, sr, band):
    """Share of the signal energy whose frequency falls inside ``band``."""
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    total = spec.sum()
    if total == 0:
        return 0.0
    inside = (freqs >= band[0]) & (freqs <= band[1])
    return float(spec[inside].sum() / total)


def write_toy_layout(root, seed, counts, cfg=None, clips_per_track=8):
    """Write mixtures/, instrumentals/ and references/ WAV folders."""
    cfg = cfg or StftConfig.toy()
    n_mix, n_src = counts
    if n_mix + n_src == 0:
        raise DatasetError("toy dataset would be empty")
    mix_tracks = make_toy_tracks(seed, n_mix, cfg, clips_per_track, "mix")
    src_tracks = make_toy_tracks(seed + 1_000_003, n_src, cfg, clips_per_track, "inst", vocals=False)
    for sub in ("mixtures", "instrumentals", "references"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    for t in mix_tracks:
        write_wav(os.path.join(root, "mixtures", f"{t.name}.wav"), AudioClip(t.mixture, cfg.sample_rate))
        write_wav(os.path.join(root, "references", f"{t.name}.wav"), AudioClip(t.vocals, cfg.sample_rate))
    for t in src_tracks:
        write_wav(os.path.join(root, "instrumentals", f"{t.name}.wav"), AudioClip(t.instrumental, cfg.sample_rate))
    return mix_tracks, src_tracks
