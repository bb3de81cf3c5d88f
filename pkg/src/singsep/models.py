"""Masking generator and multi-scale least-squares discriminators.

The generator computes ``g(a) = a * m(a)`` where ``m`` is a convolutional
auto-encoder ending in a sigmoid, so the mask lies strictly in (0, 1).
"""

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ContractError, Tensor, ops

# padding per kernel size keeps the stride bookkeeping exact
_PAD = {7: 3, 5: 2, 4: 1, 3: 1}


@dataclass(frozen=True)
class MaskNetworkConfig:
    base_width: int = 64
    residual_blocks: int = 4
    grid_size: int = 256
    up_widths: tuple = None  # defaults to (2*base_width, 4*base_width), the order as published

    def __post_init__(self):
        if self.grid_size % 4:
            raise ValueError(f"grid_size must be divisible by 4, got {self.grid_size}")
        if self.base_width < 1 or self.residual_blocks < 0:
            raise ValueError("base_width must be >= 1 and residual_blocks >= 0")
        if self.up_widths is None:
            object.__setattr__(self, "up_widths", (2 * self.base_width, 4 * self.base_width))
        else:
            object.__setattr__(self, "up_widths", tuple(int(u) for u in self.up_widths))

    @classmethod
    def toy(cls):
        return cls(base_width=8, residual_blocks=2, grid_size=32)

    def to_dict(self):
        d = asdict(self)
        d["up_widths"] = list(self.up_widths)
        return d


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_width: int = 64
    layers: int = 4
    scales: int = 2
    slope: float = 0.2

    @classmethod
    def toy(cls):
        return cls(base_width=8)

    def to_dict(self):
        return asdict(self)


class Network:
    """Named parameter container. Subclasses fill ``self.params`` in build order."""

    def __init__(self, seed=0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self._rng = np.random.default_rng(seed)

    def _conv(self, name, cin, cout, k, bias=True):
        std = np.sqrt(2.0 / (cin * k * k))
        w = self._rng.normal(0.0, std, size=(cout, cin, k, k)).astype(self.dtype)
        self.params[f"{name}.weight"] = Tensor(w, requires_grad=True)
        if bias:
            self.params[f"{name}.bias"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True)

    def _affine(self, name, c):
        self.params[f"{name}.gain"] = Tensor(np.ones(c, self.dtype), requires_grad=True)
        self.params[f"{name}.shift"] = Tensor(np.zeros(c, self.dtype), requires_grad=True)

    def conv(self, name, x, stride=1):
        w = self.params[f"{name}.weight"]
        k = w.shape[-1]
        return ops.conv2d(x, w, self.params.get(f"{name}.bias"), stride=stride, padding=_PAD.get(k, k // 2))

    def norm(self, name, x):
        return ops.instance_norm(x, self.params.get(f"{name}.gain"), self.params.get(f"{name}.shift"))

    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise ValueError(f"parameter names differ: missing={missing} unexpected={extra}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=self.dtype)

    def as_input(self, x):
        """Accept (F, T), (N, F, T) or (N, 1, F, T) arrays/tensors."""
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if t.data.ndim == 2:
            t = ops.reshape(t, (1, 1) + t.shape)
        elif t.data.ndim == 3:
            t = ops.reshape(t, (t.shape[0], 1) + t.shape[1:])
        if t.data.ndim != 4 or t.shape[1] != 1:
            raise ContractError(f"expected a single-channel grid, got shape {t.shape}")
        return t


class MaskNetwork(Network):
    """Encoder / residual / decoder auto-encoder producing a magnitude mask.

    Encoder: C7S1_w, C4S2_2w, C4S2_4w, each with instance norm + ReLU, then
    ``residual_blocks`` blocks R_4w. Decoder: ``residual_blocks`` blocks R_4w
    with learned-affine instance norm, upsampling blocks ``up_widths`` and a
    one-channel C7S1 head with a sigmoid.
    """

    def __init__(self, config=None, seed=0, dtype=np.float32):
        super().__init__(seed, dtype)
        self.config = config or MaskNetworkConfig()
        w = self.config.base_width
        # convs feeding an instance norm carry no bias: the norm removes it anyway
        self._conv("enc0", 1, w, 7, bias=False)
        self._conv("enc1", w, 2 * w, 4, bias=False)
        self._conv("enc2", 2 * w, 4 * w, 4, bias=False)
        width = 4 * w
        for i in range(self.config.residual_blocks):
            self._conv(f"enc_res{i}.conv1", width, width, 3, bias=False)
            self._conv(f"enc_res{i}.conv2", width, width, 3, bias=False)
        for i in range(self.config.residual_blocks):
            self._conv(f"dec_res{i}.conv1", width, width, 3, bias=False)
            self._affine(f"dec_res{i}.norm1", width)
            self._conv(f"dec_res{i}.conv2", width, width, 3, bias=False)
            self._affine(f"dec_res{i}.norm2", width)
        for j, u in enumerate(self.config.up_widths):
            self._conv(f"up{j}.conv", width, u, 5, bias=False)
            self._affine(f"up{j}.norm", u)
            width = u
        self._conv("head", width, 1, 7, bias=True)

    def _residual(self, prefix, x):
        h = ops.relu(self.norm(f"{prefix}.norm1", self.conv(f"{prefix}.conv1", x)))
        h = self.norm(f"{prefix}.norm2", self.conv(f"{prefix}.conv2", h))
        return ops.add(x, h)

    def mask(self, a):
        """Mask m(a) with the same shape as ``a`` (N, 1, F, T)."""
        a = self.as_input(a)
        grid = self.config.grid_size
        if a.shape[2:] != (grid, grid):
            raise ContractError(f"input grid {a.shape[2:]} does not match configured size {grid}x{grid}")
        h = ops.relu(self.norm("enc0", self.conv("enc0", a)))
        h = ops.relu(self.norm("enc1", self.conv("enc1", h, stride=2)))
        h = ops.relu(self.norm("enc2", self.conv("enc2", h, stride=2)))
        for i in range(self.config.residual_blocks):
            h = self._residual(f"enc_res{i}", h)
        for i in range(self.config.residual_blocks):
            h = self._residual(f"dec_res{i}", h)
        for j in range(len(self.config.up_widths)):
            h = ops.nearest_upsample2x(h)
            h = ops.relu(self.norm(f"up{j}.norm", self.conv(f"up{j}.conv", h)))
        return ops.sigmoid(self.conv("head", h))

    def __call__(self, a):
        return g_apply(self, a)


class MultiScaleDiscriminator(Network):
    """Patch discriminators applied to the input at successively halved scales."""

    def __init__(self, config=None, seed=0, dtype=np.float32):
        super().__init__(seed, dtype)
        self.config = config or DiscriminatorConfig()
        for s in range(self.config.scales):
            cin = 1
            for i in range(self.config.layers):
                cout = self.config.base_width * 2 ** i
                self._conv(f"scale{s}.conv{i}", cin, cout, 4)
                cin = cout
            self._conv(f"scale{s}.head", cin, 1, 4)

    def __call__(self, x):
        return discriminator_forward(self, x)


def mask_forward(net, a):
    return net.mask(a)


def g_apply(net, a):
    """``a * m(a)``: the instrumental estimate."""
    a = net.as_input(a)
    return ops.mul(a, net.mask(a))


def discriminator_forward(d, x):
    """Per-scale patch score grids, finest scale first."""
    x = d.as_input(x)
    scores = []
    for s in range(d.config.scales):
        if s:
            x = ops.avg_pool2x(x)
        h = x
        for i in range(d.config.layers):
            h = ops.leaky_relu(d.conv(f"scale{s}.conv{i}", h, stride=2), d.config.slope)
        w = d.params[f"scale{s}.head.weight"]
        # pad 2 keeps a non-empty patch grid even after the coarsest stride-2 layer
        scores.append(ops.conv2d(h, w, d.params[f"scale{s}.head.bias"], stride=1, padding=2))
    return scores
