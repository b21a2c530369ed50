"""Adam with bias correction, as a pure function over parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from relatt.errors import ContractError


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"adam: gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
                          t=t, m=new_m, v=new_v)
    return new_params, new_state
