"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Update ``params`` in place; parameters without a gradient are skipped.

    All gradients are checked before any parameter is touched.
    """
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name in sorted(grads):
        g = grads[name].astype(params[name].dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        params[name] -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(
            params[name].dtype, copy=False)
    return params
