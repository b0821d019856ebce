from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimizerError(FloatingPointError):
    pass


@dataclass
class AdamState:
    """Moment estimates per parameter name plus the shared step counter."""

    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update in place.

    ``params`` maps names to tensors, ``grads`` maps names to arrays; names
    absent from ``grads`` are treated as having zero gradient. A non-finite
    gradient rejects the whole step and leaves params and state untouched.
    """
    for name, g in grads.items():
        if name not in params:
            continue
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for {name}; step rejected")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=0.0002, betas=(0.5, 0.999), eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads):
        adam_step(self.params, grads, self.state)
