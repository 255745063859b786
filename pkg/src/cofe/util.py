"""Small shared numeric helpers."""

from __future__ import annotations

import numpy as np


def rel_rmse(a, b, eps=1e-12):
    """Per-row relative RMSE of `a` against reference `b`.

    Rows are flattened; returns shape (N,) for (N, ...) inputs, or a scalar
    for 1-D inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"rel_rmse: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 1:
        return float(np.sqrt(np.sum((a - b) ** 2) / max(np.sum(b ** 2), eps)))
    flat_a = a.reshape(a.shape[0], -1)
    flat_b = b.reshape(b.shape[0], -1)
    num = np.sum((flat_a - flat_b) ** 2, axis=1)
    den = np.maximum(np.sum(flat_b ** 2, axis=1), eps)
    return np.sqrt(num / den)
