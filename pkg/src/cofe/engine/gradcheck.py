"""Central finite-difference gradient checking for engine primitives.

The oracle runs in float64 and is independent of the reverse-mode path: it
only re-executes the forward function at perturbed inputs.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, mul, reshape, sum_


def numeric_gradient(fn, arrays, h=1e-5):
    """d fn / d arrays by central differences; fn maps numpy arrays -> float."""
    grads = []
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = fn(*arrays)
            flat[j] = orig - h
            fm = fn(*arrays)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-3)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _weighted_scalar(out, probe):
    w = Tensor(np.asarray(probe, dtype=np.float64))
    if out.size == 1:
        return mul(out, w)
    return sum_(mul(reshape(out, (-1,)), reshape(w, (-1,))))


def check_op(build, arrays, h=1e-5, probe_seed=0x5EED):
    """Worst relative error of reverse-mode grads vs central differences.

    `build` maps a list of float64 Tensors to one output Tensor of any shape;
    the output is scalarized with a fixed random probe so that every element
    contributes to the checked gradient.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    out_shape = build([Tensor(a, dtype=np.float64) for a in arrays]).shape
    probe = np.random.default_rng(probe_seed).standard_normal(out_shape)
    if out_shape == ():
        probe = float(probe)

    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    backward(_weighted_scalar(build(tensors), probe))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def forward(*arrs):
        result = build([Tensor(a, dtype=np.float64) for a in arrs])
        return float(np.sum(result.data * probe))

    numeric = numeric_gradient(forward, arrays, h=h)
    return max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
