"""scikit-learn style wrappers around the training and separation pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import MixtureSet, SourceSet, _set_from_tracks
from .dsp import AudioClip, waveform_to_grids
from .metrics import bss_eval, lower_median
from .separation import separate_track
from .training import TrainingConfig, TrainState, parse_overrides, run_training


def _waveforms(X, name):
    """2-D float array, one waveform per row."""
    X = check_array(X, dtype=np.float64, ensure_2d=False, allow_nd=False, input_name=name)
    return X[None, :] if X.ndim == 1 else X


class SpectralFrontEnd(BaseEstimator, TransformerMixin):
    """Waveforms -> flattened compressed-magnitude grids, one row per model-sized clip.

    Stateless apart from input width; ``fit`` only records the feature count.
    """

    def __init__(self, preset="toy", overrides=None):
        self.preset = preset
        self.overrides = overrides

    def _stft_config(self):
        return _base_config(self.preset, 1, self.overrides).stft_config()

    def fit(self, X, y=None):
        X = _waveforms(X, "X")
        self.n_features_in_ = X.shape[1]
        self.grid_shape_ = self._stft_config().grid_shape
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_shape_")
        X = _waveforms(X, "X")
        cfg = self._stft_config()
        grids = [waveform_to_grids(AudioClip(x, cfg.sample_rate), cfg)[0] for x in X]
        return np.concatenate(grids).reshape(-1, int(np.prod(self.grid_shape_)))


def _base_config(preset, n_steps, overrides):
    if preset == "toy":
        cfg = TrainingConfig.toy(total_steps=n_steps)
    elif preset == "full":
        cfg = TrainingConfig(total_steps=n_steps)
    else:
        raise ValueError(f"preset must be 'toy' or 'full', got {preset!r}")
    return parse_overrides({k: str(v) for k, v in (overrides or {}).items()}, cfg)


class VoiceSeparator(BaseEstimator, TransformerMixin):
    """Semi-supervised vocal separator.

    ``fit(X, y)`` takes mixture waveforms ``X`` and instrumental-only
    waveforms ``y``, one recording per row at the preset's sample rate.
    The rows of ``y`` are independent recordings, not targets paired with
    ``X``, so their counts may differ. ``transform``/``predict`` return the
    vocal estimate for each mixture row and ``separate`` returns both stems.
    """

    def __init__(self, preset="toy", n_steps=2000, seed=0, disabled_losses="", overrides=None,
                 eval_filter_len=16):
        self.preset = preset
        self.n_steps = n_steps
        self.seed = seed
        self.disabled_losses = disabled_losses
        self.overrides = overrides
        self.eval_filter_len = eval_filter_len

    def _config(self):
        cfg = _base_config(self.preset, self.n_steps, self.overrides)
        return cfg.replace(seed=self.seed, disabled_losses=self.disabled_losses)

    def fit(self, X, y):
        X, y = _waveforms(X, "X"), _waveforms(y, "y")
        cfg = self._config()
        stft_cfg = cfg.stft_config()
        mixtures = _set_from_tracks(
            MixtureSet, [(f"mix{i}", AudioClip(x, stft_cfg.sample_rate)) for i, x in enumerate(X)],
            stft_cfg, cfg.seed)
        sources = _set_from_tracks(
            SourceSet, [(f"inst{i}", AudioClip(x, stft_cfg.sample_rate)) for i, x in enumerate(y)],
            stft_cfg, cfg.seed)
        self.state_ = TrainState.initial(cfg)
        self.loss_history_ = [r.as_dict() for r in run_training(self.state_, mixtures, sources)]
        self.n_features_in_ = X.shape[1]
        return self

    def separate(self, X):
        """(vocals, instrumental) arrays with the same shape as ``X``."""
        check_is_fitted(self, "state_")
        X = _waveforms(X, "X")
        cfg = self.state_.config.stft_config()
        stems = [separate_track(self.state_.g, AudioClip(x, cfg.sample_rate), cfg) for x in X]
        return (np.stack([v.samples for v, _ in stems]), np.stack([i.samples for _, i in stems]))

    def transform(self, X):
        return self.separate(X)[0]

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Median SDR (dB) of the vocal estimates against vocal references ``y``."""
        X, y = _waveforms(X, "X"), _waveforms(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        est = self.transform(X)
        sdrs = [bss_eval(e, [v, x - v], 0, self.eval_filter_len)[0] for e, v, x in zip(est, y, X)]
        return lower_median(sdrs)
