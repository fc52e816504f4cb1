"""Adam with decoupled weight decay."""
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def decays(name, p):
    """Matrices decay; norm gains do not."""
    return p.ndim >= 2


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """One in-place update; returns ``(params, state)`` for convenience.

    Decay is decoupled from the gradient: ``theta *= 1 - lr * wd`` is
    applied before the Adam step, and only to matrices.
    """
    if set(grads) != set(params):
        raise DomainError("gradient keys do not match parameter keys")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DomainError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if weight_decay and decays(name, p):
            p *= p.dtype.type(1.0 - lr * weight_decay)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return params, state
