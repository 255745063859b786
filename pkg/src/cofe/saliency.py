"""Input-gradient saliency: where the predictor's output is sensitive.

The map is |d f(x)[target] / d x| per sample, smoothed by a centered moving
average (default 100 ms) with symmetric padding (which preserves total mass
exactly), then normalized to a maximum of 1 unless the map is identically
zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .errors import GraphError, NonFiniteError, ShapeError
from .nets.models import TASK_AF, TASK_POTASSIUM

DEFAULT_WINDOW_MS = 100.0


@dataclass
class SaliencyMap:
    record_id: str
    values: np.ndarray          # (n_leads, n_samples), >= 0
    smoothing_window_ms: float
    normalization: str          # "max_one" | "raw"

    def to_dict(self):
        return {
            "record_id": self.record_id,
            "window_ms": self.smoothing_window_ms,
            "values": [[float(v) for v in lead] for lead in self.values],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def smooth_mass_preserving(values, window):
    """Centered moving average with symmetric padding; total sum preserved."""
    window = int(window)
    if window <= 1:
        return values.copy()
    left = (window - 1) // 2
    right = window - 1 - left
    out = np.empty_like(values)
    kernel = np.ones(window) / window
    for i, row in enumerate(values):
        padded = np.pad(row, (left, right), mode="symmetric")
        out[i] = np.convolve(padded, kernel, mode="valid")
    return out


def saliency_of_gradient(grad, record_id, sample_rate_hz=250,
                         window_ms=DEFAULT_WINDOW_MS, normalization="max_one"):
    values = np.abs(np.asarray(grad, dtype=np.float64))
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("saliency gradient contains non-finite values")
    window = max(1, int(round(window_ms * sample_rate_hz / 1000.0)))
    values = smooth_mass_preserving(values, window)
    if normalization == "max_one":
        peak = values.max()
        if peak > 0:
            values = values / peak
    return SaliencyMap(record_id=record_id, values=values,
                       smoothing_window_ms=window_ms,
                       normalization=normalization)


def saliency(record, model, task=None, target_output=None,
             window_ms=DEFAULT_WINDOW_MS, normalization="max_one"):
    """SaliencyMap of `model` (a Predictor-like with .forward) on a record.

    For classification, target_output selects the class (default: argmax of
    the prediction); for regression the scalar output is used directly.
    """
    task = task or getattr(model, "task", None)
    matrix = record.signal_matrix().astype(np.float32)
    x = eg.Tensor(matrix[None], requires_grad=True)
    out = model.forward(x)
    if out.shape != (1,) and (out.data.ndim != 2 or out.shape[0] != 1):
        raise ShapeError(f"saliency expects per-record model output, got "
                         f"{out.shape}")
    if task == TASK_AF:
        probs = eg.softmax(out, axis=1)
        if target_output is None:
            target_output = int(np.argmax(probs.data[0]))
        scalar = eg.mean(eg.slice_along(probs, 1, int(target_output), 1))
    elif task == TASK_POTASSIUM:
        scalar = eg.mean(eg.sigmoid(out))
    else:
        scalar = eg.mean(out)
    try:
        eg.backward(scalar)
    except GraphError:
        pass  # constant model: no path from output to input, gradient is zero
    grad = x.grad[0] if x.grad is not None else np.zeros_like(matrix)
    return saliency_of_gradient(grad, record.record_id, record.sample_rate_hz,
                                window_ms, normalization)


def p_window_ratio(sal_map, p_windows):
    """Mean saliency inside ground-truth P windows over the mean outside."""
    values = sal_map.values[0]
    mask = np.zeros(len(values), dtype=bool)
    for lo, hi in p_windows:
        lo, hi = max(0, lo), min(len(values), hi)
        if hi > lo:
            mask[lo:hi] = True
    if not mask.any() or mask.all():
        return float("nan")
    inside = float(values[mask].mean())
    outside = float(values[~mask].mean())
    if outside == 0:
        return float("inf") if inside > 0 else float("nan")
    return inside / outside
