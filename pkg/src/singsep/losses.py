"""Generator and discriminator objectives.

Reconstruction terms use per-element mean absolute error; adversarial
terms use the least-squares loss averaged over patches, then over scales.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .models import discriminator_forward, g_apply

TERMS = ("r1", "r2", "r3", "r4", "gan_c", "gan_a")


@dataclass
class LossWeights:
    r1: float = 1.0
    r2: float = 1.0
    r3: float = 1.0
    r4: float = 1.0
    gan: float = 0.5
    disabled: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.disabled = frozenset(self.disabled)
        unknown = self.disabled - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}; valid: {list(TERMS)}")
        for name in ("r1", "r2", "r3", "r4", "gan"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    @classmethod
    def literal(cls):
        """Alternative weighting with R1 counted twice and R2 absent."""
        return cls(r1=2.0, r2=0.0)

    def weight(self, term):
        if term in self.disabled:
            return 0.0
        return self.gan if term.startswith("gan") else getattr(self, term)

    def enabled(self, term):
        return term not in self.disabled


@dataclass
class GeneratorLossReport:
    r1: float = 0.0
    r2: float = 0.0
    r3: float = 0.0
    r4: float = 0.0
    gan_c: float = 0.0
    gan_a: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def least_squares(x, y):
    """Mean of (x - y)**2 over every entry; lists of grids are averaged per grid."""
    if isinstance(x, (list, tuple)):
        parts = [least_squares(xi, y) for xi in x]
        total = parts[0]
        for p in parts[1:]:
            total = ops.add(total, p)
        return ops.mul(total, 1.0 / len(parts))
    return ops.square_mean(x, float(y))


def _value(x):
    return float(x.data) if isinstance(x, Tensor) else float(x)


def reconstruction_losses(g, c, a, cross, g_a=None):
    """(r1, r2, r3, r4) as tensors.

    r1 = |g(c) - c|, r2 = |g(g(a)) - g(a)|, r3 = |g(cross) - c(cross)|,
    r4 = |(cross - g(cross)) - b(cross)|, all per-element means.
    """
    c = g.as_input(c)
    a = g.as_input(a)
    g_a = g_apply(g, a) if g_a is None else g_a
    r1 = ops.l1_mean(ops.sub(g_apply(g, c), c))
    r2 = ops.l1_mean(ops.sub(g_apply(g, g_a), g_a))
    g_cross = g_apply(g, cross.cross)
    r3 = ops.l1_mean(ops.sub(g_cross, cross.component_c))
    r4 = ops.l1_mean(ops.sub(ops.sub(cross.cross, g_cross), cross.component_b))
    return r1, r2, r3, r4


def generator_gan_terms(d_c, d_a, g_a, cross, mode="standard"):
    """(gan_c, gan_a) given g(a) and the cross; gradients flow to the inputs."""
    scores_c = discriminator_forward(d_c, g_a)
    scores_a = discriminator_forward(d_a, cross)
    if mode == "negated":
        return ops.mul(least_squares(scores_c, 0.0), -1.0), ops.mul(least_squares(scores_a, 0.0), -1.0)
    if mode == "standard":
        return least_squares(scores_c, 1.0), least_squares(scores_a, 1.0)
    raise ValueError(f"unknown GAN mode {mode!r}; use 'standard' or 'negated'")


def generator_gan_losses(d_c, d_a, g, a, cross, mode="standard"):
    return generator_gan_terms(d_c, d_a, g_apply(g, a), cross.cross, mode)


def generator_total(terms, weights=None):
    """Weighted sum of the six generator terms, skipping disabled ones.

    ``terms`` maps term name to a float or tensor; the result has the same kind.
    """
    weights = weights or LossWeights()
    total = None
    for name in TERMS:
        w = weights.weight(name)
        if w == 0.0 or name not in terms:
            continue
        part = ops.mul(terms[name], w) if isinstance(terms[name], Tensor) else w * terms[name]
        total = part if total is None else total + part
    if total is None:
        return 0.0
    return total


def discriminator_losses(d_c, d_a, g_a, c, cross, a):
    """LSGAN losses for d_C (fake g(a), real c) and d_A (fake cross, real a).

    Generator outputs enter as constants.
    """
    g_a, cross = ops.detach(g_a), ops.detach(cross)
    loss_c = ops.add(least_squares(discriminator_forward(d_c, g_a), 0.0),
                     least_squares(discriminator_forward(d_c, c), 1.0))
    loss_a = ops.add(least_squares(discriminator_forward(d_a, cross), 0.0),
                     least_squares(discriminator_forward(d_a, a), 1.0))
    return loss_c, loss_a


def report_from(terms, weights):
    rep = GeneratorLossReport(**{k: _value(terms[k]) if k in terms else 0.0 for k in TERMS})
    rep.total = float(sum(weights.weight(k) * getattr(rep, k) for k in TERMS))
    return rep


def is_finite_report(rep):
    return all(np.isfinite(v) for v in rep.as_dict().values())
