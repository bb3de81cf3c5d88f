"""Independent oracles shared by the test modules."""

from contextlib import contextmanager

import numpy as np

from singsep.autodiff import Tape, Tensor, ops
from singsep.models import MaskNetwork, MaskNetworkConfig

FD_STEP = 1e-5
GRAD_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=GRAD_FLOOR):
    """Elementwise |a - n| / max(|a|, |n|, floor); returns the maximum."""
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def gradcheck(loss_fn, tensors, step=FD_STEP, indices=None, rng=None, floor=GRAD_FLOOR):
    """Max relative error between tape gradients and central differences.

    ``loss_fn()`` builds a scalar Tensor from ``tensors``. ``indices`` caps the
    number of entries probed per tensor (all entries when None).
    """
    with Tape() as tape:
        loss = loss_fn()
        grads = tape.backward(loss, tensors)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        if indices is None or indices >= flat.size:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=indices, replace=False)
        numeric = np.empty(len(picks))
        for j, i in enumerate(picks):
            keep = flat[i]
            flat[i] = keep + step
            up = float(loss_fn().data)
            flat[i] = keep - step
            down = float(loss_fn().data)
            flat[i] = keep
            numeric[j] = (up - down) / (2 * step)
        worst = max(worst, relative_error(g.reshape(-1)[picks], numeric, floor))
    return worst


def naive_conv2d(x, w, b, stride, pad):
    """Direct six-loop cross-correlation with zero padding."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for r in range(ho):
                for c in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ci, r * stride + u, c * stride + v] * w[o, ci, u, v]
                    out[i, o, r, c] = acc + (b[o] if b is not None else 0.0)
    return out


def delay_matrix(x, length):
    """Columns are x delayed by 0..length-1 samples, truncated to len(x)."""
    n = len(x)
    m = np.zeros((n, length))
    for d in range(length):
        m[d:, d] = x[:n - d]
    return m


def lstsq_decomposition(estimate, refs, target, length):
    """Explicit delay-matrix least-squares BSS decomposition."""
    def project(basis):
        coef, *_ = np.linalg.lstsq(basis, estimate, rcond=None)
        return basis @ coef

    s_target = project(delay_matrix(refs[target], length))
    p_all = project(np.hstack([delay_matrix(r, length) for r in refs]))
    return s_target, p_all - s_target, estimate - p_all


_KINKED = {
    "relu": lambda x, *a, **k: x > 0,
    "leaky_relu": lambda x, *a, **k: x > 0,
    "l1_mean": lambda x, *a, **k: np.sign(x),
    "power": lambda x, exponent, floor=1e-12: x >= floor,
    "sigmoid": lambda x, *a, **k: np.abs(x) < 30.0,  # clipping can only engage beyond |x| ~ 36
}


@contextmanager
def kink_recorder():
    """Record which side of its kink every piecewise op input falls on.

    Yields a list that receives one fingerprint per piecewise op call.
    """
    trail = []
    originals = {name: getattr(ops, name) for name in _KINKED}

    def wrap(name, fn):
        def recorded(x, *args, **kwargs):
            data = x.data if isinstance(x, Tensor) else np.asarray(x)
            trail.append(np.asarray(_KINKED[name](data, *args, **kwargs), dtype=np.int8).tobytes())
            return fn(x, *args, **kwargs)
        return recorded

    for name, fn in originals.items():
        setattr(ops, name, wrap(name, fn))
    try:
        yield trail
    finally:
        for name, fn in originals.items():
            setattr(ops, name, fn)


def smooth_gradcheck(loss_fn, tensors, probes, step=FD_STEP, rng=None, floor=GRAD_FLOOR, max_tries=50):
    """Central-difference check restricted to stencils that cross no kink.

    Central differences are only valid where the function is smooth on
    [x - step, x + step]. A probe is accepted when every piecewise op sees the
    same side of its kink at x - step, x and x + step; otherwise another entry
    is drawn. Returns (max relative error, accepted probes, rejected probes).
    """
    rng = rng or np.random.default_rng(0)
    with Tape() as tape:
        with kink_recorder() as base:
            loss = loss_fn()
        grads = tape.backward(loss, tensors)
    worst, accepted, rejected = 0.0, 0, 0
    for t, g in zip(tensors, grads):
        flat, gflat = t.data.reshape(-1), g.reshape(-1)
        order = rng.permutation(flat.size)[:max_tries * probes]
        analytic, numeric = [], []
        for i in order:
            if len(analytic) == probes:
                break
            keep = flat[i]
            flat[i] = keep + step
            with kink_recorder() as up_trail:
                up = float(loss_fn().data)
            flat[i] = keep - step
            with kink_recorder() as down_trail:
                down = float(loss_fn().data)
            flat[i] = keep
            if up_trail != base or down_trail != base:
                rejected += 1
                continue
            analytic.append(gflat[i])
            numeric.append((up - down) / (2 * step))
        accepted += len(analytic)
        worst = max(worst, relative_error(analytic, numeric, floor))
    return worst, accepted, rejected


class ConstantMask(MaskNetwork):
    """Generator stub whose mask is a constant."""

    def __init__(self, value):
        super().__init__(MaskNetworkConfig(base_width=2, residual_blocks=1, grid_size=8), dtype=np.float64)
        self.value = value

    def mask(self, a):
        a = self.as_input(a)
        return Tensor(np.full(a.shape, self.value))


class Oracle:
    """Discriminator stub scoring real inputs 1 and everything else 0."""

    def __init__(self, *real):
        self.real = [np.asarray(r) for r in real]

    def __call__(self, x):
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        hit = any(r.shape == data.shape and np.array_equal(r, data) for r in self.real)
        return [Tensor(np.full((1, 1, 3, 3), 1.0 if hit else 0.0)), Tensor(np.full((1, 1, 2, 2), 1.0 if hit else 0.0))]
