"""Alternating discriminator / generator optimization."""

import csv
import dataclasses
import logging
import os
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step, ops
from .data import make_cross, sample_batch
from .dsp import StftConfig
from .losses import (
    TERMS,
    LossWeights,
    discriminator_losses,
    generator_gan_terms,
    generator_total,
    is_finite_report,
    report_from,
)
from .models import (
    DiscriminatorConfig,
    MaskNetwork,
    MaskNetworkConfig,
    MultiScaleDiscriminator,
    g_apply,
)

log = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ("step",) + TERMS + ("total",)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step, report, offending):
        self.step, self.report, self.offending = step, report, offending
        dump = ", ".join(f"{k}={v!r}" for k, v in report.items())
        super().__init__(f"non-finite loss at step {step} in {offending}: {dump}")


class ConfigError(ValueError):
    pass


@dataclass
class TrainingConfig:
    seed: int = 0
    total_steps: int = 200_000
    lr_initial: float = 1e-4
    lr_halving_step: int = 100_000
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    w_r1: float = 1.0
    w_r2: float = 1.0
    w_r3: float = 1.0
    w_r4: float = 1.0
    w_gan: float = 0.5
    disabled_losses: str = ""
    gan_mode: str = "standard"
    detach_cross: bool = False
    cross_domain: str = "compressed"
    disc_updates: int = 1
    checkpoint_interval: int = 10_000
    dtype: str = "float32"
    base_width: int = 64
    residual_blocks: int = 4
    disc_width: int = 64
    disc_scales: int = 2
    head_bias_init: float = 0.0
    fft_size: int = 512
    hop: int = 64
    frames: int = 256
    compression: float = 0.3
    sample_rate: int = 20480

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if self.lr_initial <= 0:
            raise ConfigError("lr_initial must be positive")
        if self.batch_size != 1:
            raise ConfigError("only batch_size = 1 is supported")
        if self.gan_mode not in ("standard", "negated"):
            raise ConfigError(f"gan_mode must be 'standard' or 'negated', got {self.gan_mode!r}")
        if self.cross_domain not in ("compressed", "linear"):
            raise ConfigError(f"cross_domain must be 'compressed' or 'linear', got {self.cross_domain!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.fft_size // 2 != self.frames:
            raise ConfigError(f"model grid must be square: fft_size/2={self.fft_size // 2} vs frames={self.frames}")
        self.weights()  # validates loss names

    @classmethod
    def toy(cls, total_steps=2000, **overrides):
        """Desk-scale preset: 32x32 grids, width-8 networks, halving at mid-run."""
        base = dict(total_steps=total_steps, lr_halving_step=max(1, total_steps // 2),
                    checkpoint_interval=max(1, total_steps // 4), base_width=8, residual_blocks=2,
                    disc_width=8, fft_size=64, hop=8, frames=32, sample_rate=8000)
        base.update(overrides)
        return cls(**base)

    def weights(self):
        disabled = {s.strip() for s in self.disabled_losses.split(",") if s.strip()}
        if "gan_both" in disabled:
            disabled = (disabled - {"gan_both"}) | {"gan_c", "gan_a"}
        return LossWeights(self.w_r1, self.w_r2, self.w_r3, self.w_r4, self.w_gan, disabled)

    def stft_config(self):
        return StftConfig(fft_size=self.fft_size, hop=self.hop, frames=self.frames,
                          compression=self.compression, sample_rate=self.sample_rate)

    def generator_config(self):
        return MaskNetworkConfig(self.base_width, self.residual_blocks, self.frames)

    def discriminator_config(self):
        return DiscriminatorConfig(base_width=self.disc_width, scales=self.disc_scales)

    def model_dict(self):
        return {"generator": self.generator_config().to_dict(),
                "discriminator": self.discriminator_config().to_dict(),
                "stft": self.stft_config().to_dict(), "dtype": self.dtype}

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# -- config file --------------------------------------------------------------

def _coerce(field_type, key, raw):
    raw = raw.strip()
    try:
        if field_type in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type in (int, "int"):
            value = float(raw.replace("_", ""))
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        if field_type in (float, "float"):
            return float(raw)
        return raw.strip("\"'")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_overrides(pairs, base=None):
    """Apply ``key=value`` strings (or a dict of strings) to a config."""
    base = base or TrainingConfig()
    types = {f.name: f.type for f in fields(TrainingConfig)}
    items = pairs.items() if isinstance(pairs, dict) else (p.split("=", 1) for p in pairs)
    changes = {}
    for item in items:
        if len(item) != 2:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item[0].strip(), str(item[1])
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(types))}")
        changes[key] = _coerce(types[key], key, raw)
    try:
        return base.replace(**changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def read_config(path, base=None):
    """Read a ``key = value`` text file; ``#`` starts a comment."""
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    return parse_overrides(pairs, base)


def write_config(cfg, path):
    with open(path, "w") as fh:
        for k, v in cfg.to_dict().items():
            fh.write(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n")


# -- state ----------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainingConfig
    step: int
    g: MaskNetwork
    d_c: MultiScaleDiscriminator
    d_a: MultiScaleDiscriminator
    adam_g: AdamState
    adam_dc: AdamState
    adam_da: AdamState

    @classmethod
    def initial(cls, config):
        dtype = np.dtype(config.dtype)
        g = MaskNetwork(config.generator_config(), seed=config.seed, dtype=dtype)
        if config.head_bias_init:
            g.params["head.bias"].data[:] = config.head_bias_init
        d_c = MultiScaleDiscriminator(config.discriminator_config(), seed=config.seed + 1, dtype=dtype)
        d_a = MultiScaleDiscriminator(config.discriminator_config(), seed=config.seed + 2, dtype=dtype)
        kw = dict(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps, lr=config.lr_initial)
        return cls(config, 0, g, d_c, d_a, AdamState.for_params(g.params, **kw),
                   AdamState.for_params(d_c.params, **kw), AdamState.for_params(d_a.params, **kw))


def lr_at(step, config):
    """Initial rate, halved once at ``lr_halving_step``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return config.lr_initial if step < config.lr_halving_step else config.lr_initial / 2.0


def _grid(x, dtype):
    return Tensor(np.asarray(x, dtype=dtype).reshape((1, 1) + np.shape(x)[-2:]))


def discriminator_step(state, a, c, c2, lr):
    cfg = state.config
    weights = cfg.weights()
    train_c, train_a = weights.enabled("gan_c"), weights.enabled("gan_a")
    if not (train_c or train_a):
        return 0.0, 0.0
    g = state.g
    g_a = g_apply(g, a)  # no tape: g is frozen here
    cross = make_cross(ops.sub(a, g_a), c2, cfg.cross_domain, cfg.compression).cross
    with Tape() as tape:
        loss_c, loss_a = discriminator_losses(state.d_c, state.d_a, g_a, c, cross, a)
        parts = ([loss_c] if train_c else []) + ([loss_a] if train_a else [])
        total = parts[0] if len(parts) == 1 else ops.add(*parts)
        wrt = (list(state.d_c.params.values()) if train_c else []) + \
              (list(state.d_a.params.values()) if train_a else [])
        grads = tape.backward(total, wrt)
    grads = iter(grads)
    if train_c:
        adam_step(state.d_c.params, {k: next(grads) for k in state.d_c.params}, state.adam_dc, lr)
    if train_a:
        adam_step(state.d_a.params, {k: next(grads) for k in state.d_a.params}, state.adam_da, lr)
    return float(loss_c.data), float(loss_a.data)


def generator_terms(state, a, c, c2):
    """Record every enabled generator term on the active tape.

    g(a) and g(c) share one batched pass, as do g(g(a)) and g(cross);
    instance normalization keeps samples independent within a batch.
    """
    cfg = state.config
    weights = cfg.weights()
    on = {t: weights.weight(t) != 0.0 for t in TERMS}
    g = state.g
    first = [a] + ([c] if on["r1"] else [])
    out1 = g_apply(g, ops.concat(first) if len(first) > 1 else a)
    g_a = ops.take(out1, 0, 1)
    cross = make_cross(ops.sub(a, g_a), c2, cfg.cross_domain, cfg.compression, cfg.detach_cross)
    terms = {}
    if on["r1"]:
        terms["r1"] = ops.l1_mean(ops.sub(ops.take(out1, 1, 2), c))
    second = ([g_a] if on["r2"] else []) + ([cross.cross] if on["r3"] or on["r4"] else [])
    if second:
        out2 = g_apply(g, ops.concat(second) if len(second) > 1 else second[0])
        if on["r2"]:
            terms["r2"] = ops.l1_mean(ops.sub(ops.take(out2, 0, 1), g_a))
        if on["r3"] or on["r4"]:
            g_cross = ops.take(out2, len(second) - 1, len(second))
            if on["r3"]:
                terms["r3"] = ops.l1_mean(ops.sub(g_cross, cross.component_c))
            if on["r4"]:
                terms["r4"] = ops.l1_mean(ops.sub(ops.sub(cross.cross, g_cross), cross.component_b))
    if on["gan_c"] or on["gan_a"]:
        gan_c, gan_a = generator_gan_terms(state.d_c, state.d_a, g_a, cross.cross, cfg.gan_mode)
        if on["gan_c"]:
            terms["gan_c"] = gan_c
        if on["gan_a"]:
            terms["gan_a"] = gan_a
    return terms


def generator_step(state, a, c, c2, lr):
    cfg = state.config
    weights = cfg.weights()
    with Tape() as tape:
        terms = generator_terms(state, a, c, c2)
        total = generator_total(terms, weights)
        report = report_from(terms, weights)
        if not is_finite_report(report):
            bad = [k for k, v in report.as_dict().items() if not np.isfinite(v)]
            raise NonFiniteLossError(state.step, report.as_dict(), bad)
        if isinstance(total, Tensor):
            grads = tape.backward(total, list(state.g.params.values()))
            adam_step(state.g.params, dict(zip(state.g.params, grads)), state.adam_g, lr)
    return report


def train_step(state, batch):
    """One alternation: both discriminators with g frozen, then g.

    ``batch`` is (a, c, c') as (F, T) arrays. Returns (report, (loss_dC, loss_dA)).
    """
    dtype = np.dtype(state.config.dtype)
    a, c, c2 = (_grid(x, dtype) for x in batch)
    lr = lr_at(state.step, state.config)
    d_losses = (0.0, 0.0)
    for _ in range(state.config.disc_updates):
        d_losses = discriminator_step(state, a, c, c2, lr)
    if not all(np.isfinite(d_losses)):
        raise NonFiniteLossError(state.step, {"loss_dC": d_losses[0], "loss_dA": d_losses[1]},
                                 [n for n, v in zip(("loss_dC", "loss_dA"), d_losses) if not np.isfinite(v)])
    report = generator_step(state, a, c, c2, lr)
    state.step += 1
    return report, d_losses


class LossLog:
    """Append-only CSV of per-step generator terms."""

    def __init__(self, path):
        self.path = path
        new = not os.path.exists(path)
        self._fh = open(path, "a", newline="")
        self._w = csv.writer(self._fh)
        if new:
            self._w.writerow(LOSS_LOG_COLUMNS)

    def write(self, step, report):
        d = report.as_dict()
        self._w.writerow([step] + [repr(float(d[k])) for k in LOSS_LOG_COLUMNS[1:]])

    def close(self):
        self._fh.close()


def read_loss_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [[int(r[0])] + [float(v) for v in r[1:]] for r in body]


def run_training(state, mixtures, sources, steps=None, loss_log=None, on_step=None, on_checkpoint=None):
    """Advance ``state`` to ``config.total_steps`` (or by ``steps``).

    Returns the list of generator loss reports produced.
    """
    cfg = state.config
    end = cfg.total_steps if steps is None else state.step + steps
    reports = []
    while state.step < end:
        batch = sample_batch(mixtures, sources, cfg.seed, state.step)
        report, d_losses = train_step(state, batch)
        reports.append(report)
        if loss_log is not None:
            loss_log.write(state.step, report)
        if on_step is not None:
            on_step(state, report, d_losses)
        if on_checkpoint is not None and cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
            on_checkpoint(state)
        if state.step % 100 == 0:
            log.info("step %d total %.4f", state.step, report.total)
    return reports
