"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Tolerances are pinned here and never relaxed. The toy experiments (criteria
6 and 7) share one session fixture, so they train five 2000-step models;
expect roughly 20 minutes on one core for the whole module.
"""

import time
import zlib

import numpy as np
import pytest

from helpers import (
    ConstantMask,
    Oracle,
    gradcheck,
    lstsq_decomposition,
    naive_conv2d,
    smooth_gradcheck,
)
import singsep.losses as losses
from singsep.autodiff import Tensor, ops
from singsep.checkpoint import dumps, loads
from singsep.data import estimate_b, make_cross, make_toy_datasets, sample_batch
from singsep.dsp import StftConfig, compress, reconstruct, stft
from singsep.losses import TERMS, discriminator_losses, generator_total, reconstruction_losses
from singsep.metrics import decompose, sdr_sir
from singsep.models import MaskNetwork, MaskNetworkConfig, g_apply
from singsep.separation import score_toy_tracks
from singsep.training import TrainingConfig, TrainState, generator_terms, run_training, train_step

GRAD_TOL = 1e-3
GRAD_BUDGET_S = 120.0
ROUND_TRIP_TOL = 1e-6
CONV_TOL = 1e-12
BSS_TOL = 1e-8
ORTHO_TOL = 1e-9
TOY_GAIN_DB = 3.0
RERUN_TOL_DB = 0.1
TOY_BUDGET_S = 30 * 60.0
MASK_INPUTS = 10_000

# toy protocol: training tracks, held-out evaluation tracks, seeds
TRAIN_SEED, TRAIN_COUNTS = 0, (16, 16)
EVAL_SEED, EVAL_TRACKS = 777, 12


# -- 1. gradients -----------------------------------------------------------------

def _op_cases(rng):
    """(name, loss builder, tensors) covering every differentiable op."""
    shape = (2, 3, 6, 5)

    def leaf(size):
        return Tensor(rng.normal(size=size), requires_grad=True)

    def off_kink(size):
        x = leaf(size)
        x.data += np.sign(x.data) * 0.05
        return x

    x, y, pos = leaf(shape), leaf(shape), Tensor(rng.uniform(0.5, 2.0, shape), requires_grad=True)
    k, gain, shift = off_kink(shape), leaf(3), leaf(3)
    proj = lambda out: Tensor(rng.normal(size=out.shape))  # noqa: E731
    cases = []

    def add_case(name, build, tensors):
        p = proj(build())
        cases.append((name, lambda: ops.sum(ops.mul(build(), p)), tensors))

    add_case("add", lambda: ops.add(x, y), [x, y])
    add_case("sub", lambda: ops.sub(x, y), [x, y])
    add_case("mul", lambda: ops.mul(x, y), [x, y])
    add_case("mul broadcast", lambda: ops.mul(x, Tensor(gain.data.reshape(1, 3, 1, 1))), [x])
    add_case("power", lambda: ops.power(pos, 0.3), [pos])
    add_case("relu", lambda: ops.relu(k), [k])
    add_case("leaky_relu", lambda: ops.leaky_relu(k, 0.2), [k])
    add_case("sigmoid", lambda: ops.sigmoid(x), [x])
    add_case("concat", lambda: ops.concat([x, y]), [x, y])
    add_case("take", lambda: ops.take(ops.concat([x, y]), 1, 3), [x, y])
    add_case("reshape", lambda: ops.reshape(x, (6, -1)), [x])
    add_case("instance_norm", lambda: ops.instance_norm(x), [x])
    add_case("instance_norm affine", lambda: ops.instance_norm(x, gain, shift), [x, gain, shift])
    add_case("nearest_upsample2x", lambda: ops.nearest_upsample2x(x), [x])
    cases.append(("sum", lambda: ops.mul(ops.sum(ops.mul(x, x)), 0.5), [x]))
    cases.append(("mean", lambda: ops.mean(ops.mul(x, y)), [x, y]))
    cases.append(("l1_mean", lambda: ops.l1_mean(k), [k]))
    cases.append(("square_mean", lambda: ops.square_mean(x, 0.7), [x]))
    pool_in = leaf((2, 3, 6, 4))
    add_case("avg_pool2x", lambda: ops.avg_pool2x(pool_in), [pool_in])
    for (n, cin, h, w, cout, ksz, s, p) in [(1, 1, 9, 7, 4, 3, 1, 1), (2, 3, 8, 8, 1, 4, 2, 1),
                                            (1, 2, 6, 6, 2, 7, 1, 3), (1, 4, 5, 5, 6, 5, 2, 2)]:
        cx, cw, cb = leaf((n, cin, h, w)), leaf((cout, cin, ksz, ksz)), leaf(cout)
        add_case(f"conv2d k{ksz} s{s} p{p}", lambda cx=cx, cw=cw, cb=cb, s=s, p=p: ops.conv2d(cx, cw, cb, s, p),
                 [cx, cw, cb])
    return cases


def _generator_loss_check():
    """Kink-aware central differences on the six-term generator objective."""
    cfg = TrainingConfig.toy(total_steps=100, dtype="float64")
    mix, src, _ = make_toy_datasets(0, (2, 2), cfg.stft_config(), clips_per_track=2)
    state = TrainState.initial(cfg)
    run_training(state, mix, src, steps=20)  # leave the symmetric initial point
    a, c, c2 = (Tensor(np.asarray(x, np.float64).reshape(1, 1, 32, 32)) for x in sample_batch(mix, src, 5, 0))

    def loss():
        terms = generator_terms(state, a, c, c2)
        assert set(terms) == set(TERMS)
        return generator_total(terms, cfg.weights())

    worst, accepted, rejected = 0.0, 0, 0
    for i, p in enumerate(state.g.params.values()):
        err, acc, rej = smooth_gradcheck(loss, [p], probes=6, rng=np.random.default_rng(i))
        worst, accepted, rejected = max(worst, err), accepted + acc, rejected + rej
    return worst, accepted, rejected, len(state.g.params)


def test_criterion_1_gradient_correctness(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(zlib.crc32(b"criterion-1"))
    op_errors = {name: gradcheck(fn, tensors) for name, fn, tensors in _op_cases(rng)}
    worst_op = max(op_errors, key=op_errors.get)
    gen_err, accepted, rejected, n_tensors = _generator_loss_check()
    elapsed = time.perf_counter() - start
    passed = max(op_errors.values()) < GRAD_TOL and gen_err < GRAD_TOL and elapsed < GRAD_BUDGET_S
    criterion(1, "gradient correctness", passed,
              f"{len(op_errors)} op cases max rel err {op_errors[worst_op]:.2e} ({worst_op}); "
              f"generator loss max rel err {gen_err:.2e} over {accepted} probes in {n_tensors} tensors "
              f"({rejected} kink-straddling stencils redrawn); tol {GRAD_TOL:g}; "
              f"{elapsed:.0f} s of {GRAD_BUDGET_S:.0f} s")
    assert passed


# -- 2. DSP round trip -------------------------------------------------------------

def test_criterion_2_dsp_round_trip(criterion):
    cfg = StftConfig()
    rng = np.random.default_rng(zlib.crc32(b"criterion-2"))
    n = np.arange(cfg.clip_length)
    errors, shapes = [], set()
    for _ in range(20):
        # random bin-centred multi-sine: no energy reaches the trimmed top bin
        ks = rng.integers(1, cfg.fft_size // 2 - 1, size=24)
        x = sum(a * np.cos(2 * np.pi * kk * n / cfg.fft_size + ph)
                for kk, a, ph in zip(ks, rng.uniform(0.01, 0.3, 24), rng.uniform(0, 2 * np.pi, 24)))
        mag, phase = compress(stft(x, cfg))
        shapes.add(mag.shape)
        y = reconstruct(mag, phase, cfg).samples
        errors.append(np.sqrt(np.mean((y - x) ** 2) / np.mean(x ** 2)))
    passed = max(errors) < ROUND_TRIP_TOL and shapes == {(256, 256)}
    criterion(2, "DSP round trip", passed,
              f"max rel RMS {max(errors):.2e} over 20 signals (tol {ROUND_TRIP_TOL:g}); input grids {sorted(shapes)}")
    assert passed


# -- 3. convolution oracle ---------------------------------------------------------

def test_criterion_3_conv_oracle(criterion):
    rng = np.random.default_rng(zlib.crc32(b"criterion-3"))
    worst = 0.0
    strides, pads = set(), set()
    for _ in range(50):
        k = int(rng.integers(1, 6))
        stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, k))
        h, w = int(rng.integers(k, 10)), int(rng.integers(k, 10))
        n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
        x, wt = rng.normal(size=(n, cin, h, w)), rng.normal(size=(cout, cin, k, k))
        b = rng.normal(size=cout) if rng.random() < 0.5 else None
        got = ops.conv2d(x, wt, b, stride, pad).data
        want = naive_conv2d(x, wt, b, stride, pad)
        assert got.shape == want.shape
        worst = max(worst, float(np.max(np.abs(got - want))))
        strides.add(stride)
        pads.add(pad)
    passed = worst <= CONV_TOL
    criterion(3, "convolution oracle", passed,
              f"max abs diff {worst:.2e} over 50 cases (tol {CONV_TOL:g}); strides {sorted(strides)}, pads {sorted(pads)}")
    assert passed


# -- 4. loss identities --------------------------------------------------------------

def test_criterion_4_loss_identities(criterion, monkeypatch):
    rng = np.random.default_rng(zlib.crc32(b"criterion-4"))
    a, c = rng.uniform(0.1, 2, (1, 1, 8, 8)), rng.uniform(0.1, 2, (1, 1, 8, 8))
    g = ConstantMask(1.0)  # identity generator: mask 1 everywhere
    cross = make_cross(estimate_b(g, a), c)
    r1, r2, r3, r4 = (float(t.data) for t in reconstruction_losses(g, c, a, cross))
    b_zero = float(np.max(np.abs(cross.component_b.data)))

    monkeypatch.setattr(losses, "discriminator_forward", lambda d, x: d(x))
    g_a, fake = Tensor(a * 0.7), Tensor(a * 0.2 + c)
    d_c, d_a = (float(t.data) for t in discriminator_losses(Oracle(c), Oracle(a), g_a, Tensor(c), fake, Tensor(a)))
    total = generator_total({k: 1.0 for k in TERMS})

    checks = {"r1": r1 == 0.0, "r2": r2 == 0.0, "b_est": b_zero == 0.0, "r3": r3 == 0.0, "r4": r4 == 0.0,
              "d_C": d_c == 0.0, "d_A": d_a == 0.0, "total": total == 5.0}
    passed = all(checks.values())
    criterion(4, "loss identities", passed,
              f"r1={r1:g} r2={r2:g} r3={r3:g} r4={r4:g} (b_est max {b_zero:g}); "
              f"optimal discriminator losses {d_c:g}, {d_a:g}; unit-term total {total:g}")
    assert passed


# -- 5. BSS-eval oracle ------------------------------------------------------------

def test_criterion_5_bss_oracle(criterion):
    rng = np.random.default_rng(zlib.crc32(b"criterion-5"))
    worst = 0.0
    for length in (1, 4):
        for _ in range(5):
            refs = [rng.normal(size=400), rng.normal(size=400)]
            est = 0.9 * refs[0] + 0.4 * np.roll(refs[1], 3) + 0.2 * rng.normal(size=400)
            dec = decompose(est, refs, 0, length)
            for got, want in zip((dec.s_target, dec.e_interf, dec.e_artif),
                                 lstsq_decomposition(est, refs, 0, length)):
                worst = max(worst, float(np.max(np.abs(got - want))))
    t = np.arange(512)
    s1, s2 = np.cos(2 * np.pi * 7 * t / 512), np.sin(2 * np.pi * 19 * t / 512)
    sdr, sir = sdr_sir(decompose(s1 + s2, [s1, s2], 0, 1))
    passed = worst <= BSS_TOL and abs(sdr) <= ORTHO_TOL and abs(sir) <= ORTHO_TOL
    criterion(5, "BSS-eval oracle", passed,
              f"max abs diff vs delay-matrix lstsq {worst:.2e} for L in (1, 4) (tol {BSS_TOL:g}); "
              f"orthogonal equal-power SDR {sdr:.1e} dB, SIR {sir:.1e} dB (tol {ORTHO_TOL:g})")
    assert passed


# -- 6 and 7. toy experiments --------------------------------------------------------

class ToyLab:
    """Trains toy models on demand and caches their held-out median SDR."""

    def __init__(self):
        self.cfg = TrainingConfig.toy(total_steps=2000)
        self.stft = self.cfg.stft_config()
        self.mixtures, self.sources, _ = make_toy_datasets(TRAIN_SEED, TRAIN_COUNTS, self.stft)
        _, _, self.tracks = make_toy_datasets(EVAL_SEED, (EVAL_TRACKS, 0), self.stft)
        self.baseline = score_toy_tracks(None, self.tracks, self.stft, baseline=True).median_sdr
        self.results = {}

    def run(self, disabled="", label=None):
        key = label or disabled
        if key not in self.results:
            start = time.perf_counter()
            state = TrainState.initial(self.cfg.replace(disabled_losses=disabled))
            run_training(state, self.mixtures, self.sources)
            sdr = score_toy_tracks(state.g, self.tracks, self.stft).median_sdr
            self.results[key] = (sdr, time.perf_counter() - start)
        return self.results[key]


@pytest.fixture(scope="session")
def toy_lab():
    return ToyLab()


def test_criterion_6_toy_separation(criterion, toy_lab):
    sdr, seconds = toy_lab.run("")
    rerun, rerun_seconds = toy_lab.run("", label="rerun")
    gain = sdr - toy_lab.baseline
    passed = gain >= TOY_GAIN_DB and abs(rerun - sdr) <= RERUN_TOL_DB and max(seconds, rerun_seconds) < TOY_BUDGET_S
    criterion(6, "toy separation", passed,
              f"median SDR {sdr:.2f} dB vs mixture baseline {toy_lab.baseline:.2f} dB (gain {gain:.2f}, "
              f"need >= {TOY_GAIN_DB:g}); rerun {rerun:.2f} dB (|diff| {abs(rerun - sdr):.3f}, tol {RERUN_TOL_DB:g}); "
              f"{seconds / 60:.1f} min per run (limit 30)")
    assert passed


def test_criterion_7_ablation_structure(criterion, toy_lab):
    full, _ = toy_lab.run("")
    drops = {name: full - toy_lab.run(name)[0] for name in ("r4", "gan_both", "r2")}
    checks = [drops["r4"] > 0, drops["gan_both"] > 0, drops["r2"] < drops["r4"]]
    passed = all(checks)
    criterion(7, "ablation structure", passed,
              f"all losses {full:.2f} dB; SDR drop w/o r4 {drops['r4']:.2f}, w/o both GANs {drops['gan_both']:.2f}, "
              f"w/o r2 {drops['r2']:.2f} (needs r4 > 0, GANs > 0, r2 < r4)")
    assert passed


# -- 8. mask range -------------------------------------------------------------------

def test_criterion_8_mask_range(criterion):
    rng = np.random.default_rng(zlib.crc32(b"criterion-8"))
    batch, generators = 250, MASK_INPUTS // 250
    lo, hi, min_vocal, seen = 1.0, 0.0, np.inf, 0
    for i in range(generators):
        g = MaskNetwork(MaskNetworkConfig.toy(), seed=int(rng.integers(2**31)))
        scale = 10.0 ** rng.uniform(-3, 4)  # magnitudes from near-silence to very loud
        a = rng.exponential(scale, size=(batch, 1, 32, 32)).astype(np.float32)
        a[0] = 0.0
        mask = g.mask(a).data
        vocal = a - g_apply(g, a).data
        lo, hi = min(lo, float(mask.min())), max(hi, float(mask.max()))
        min_vocal = min(min_vocal, float(vocal.min()))
        seen += len(a)
    passed = seen == MASK_INPUTS and lo > 0.0 and hi < 1.0 and min_vocal >= 0.0
    criterion(8, "mask range", passed,
              f"{seen} inputs through {generators} random generators: mask in [{lo:.3g}, {hi:.7g}], "
              f"min vocal estimate {min_vocal:g}")
    assert passed


# -- 9. checkpoint determinism ---------------------------------------------------------

def test_criterion_9_checkpoint_determinism(criterion):
    cfg = TrainingConfig.toy(total_steps=100, dtype="float64")
    mix, src, _ = make_toy_datasets(3, (2, 2), cfg.stft_config(), clips_per_track=2)
    state = TrainState.initial(cfg)
    k = 7
    run_training(state, mix, src, steps=k)
    restored = loads(dumps(state))

    def continue_run(st):
        out = []
        for _ in range(10):
            report, d_losses = train_step(st, sample_batch(mix, src, cfg.seed, st.step))
            out.append(tuple(report.as_dict().values()) + tuple(d_losses))
        return out

    straight, resumed = continue_run(state), continue_run(restored)
    identical = straight == resumed and all(
        np.array_equal(state.g.params[n].data, restored.g.params[n].data) for n in state.g.params)
    criterion(9, "checkpoint determinism", identical,
              f"save/load at step {k}; steps {k + 1}..{k + 10} generator and discriminator losses "
              f"{'bit-identical' if identical else 'differ'} in float64")
    assert identical
