"""Adam optimizer over named parameter groups (plain numpy arrays)."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class AdamState:
    """First/second moment accumulators plus the shared timestep."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, grads, state, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    `params` and `grads` are dicts name -> array of matching shapes; returns
    the updated params dict. `state` is mutated (moments and timestep).
    """
    state.t += 1
    t = state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} != param shape {p.shape} "
                f"for '{name}'")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = state.v[name]
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return out
