from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Moment estimates for one parameter group.

    ``m`` and ``v`` are keyed by parameter name. ``t`` counts completed steps.
    """

    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **kwargs):
        state = cls(**kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params, grads, state, lr=None):
    """Update ``params`` in place with bias-corrected Adam.

    ``params`` and ``grads`` are dicts keyed like ``state.m``. ``lr`` overrides
    ``state.lr`` for this step (the schedule lives in the training loop).
    """
    if lr is not None:
        state.lr = lr
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params, state
