"""R-peak detection: derivative-energy with adaptive threshold.

Pipeline: first difference -> square -> 150 ms moving integration ->
threshold at 0.4x the rolling 2 s maximum -> refractory 250 ms -> refine the
peak position on the raw signal.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import maximum_filter1d

from ..errors import NoBeatsError

INTEGRATION_MS = 150
ROLLING_MAX_S = 2.0
THRESHOLD_FRAC = 0.4
REFRACTORY_MS = 250
T_CHECK_MS = 360
T_SLOPE_FRAC = 0.5
REFINE_MS = 60
ENERGY_FLOOR = 1e-12


def moving_average(x, window):
    window = max(1, int(window))
    kernel = np.ones(window) / window
    pad = window // 2
    xp = np.pad(x, (pad, window - 1 - pad), mode="edge")
    return np.convolve(xp, kernel, mode="valid")


def detect_r_peaks(signal, sample_rate_hz=250):
    """Ascending R-peak sample indices; raises NoBeatsError below 2 peaks."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("detect_r_peaks expects a single lead (1-D array)")
    if len(x) < 2 * sample_rate_hz:
        raise NoBeatsError("need at least 2 s of signal")

    diff = np.diff(x, prepend=x[0])
    energy = moving_average(diff * diff, INTEGRATION_MS * sample_rate_hz / 1000.0)

    half_window = int(ROLLING_MAX_S * sample_rate_hz)
    rolling_max = maximum_filter1d(energy, size=2 * half_window + 1, mode="nearest")
    threshold = np.maximum(THRESHOLD_FRAC * rolling_max, ENERGY_FLOOR)

    above = energy > threshold
    is_peak = np.zeros_like(above)
    is_peak[1:-1] = above[1:-1] & (energy[1:-1] >= energy[:-2]) \
        & (energy[1:-1] >= energy[2:])
    candidates = np.flatnonzero(is_peak)
    if candidates.size == 0:
        raise NoBeatsError("no QRS energy above threshold")

    refractory = int(REFRACTORY_MS * sample_rate_hz / 1000.0)
    t_check = int(T_CHECK_MS * sample_rate_hz / 1000.0)
    slope_win = int(REFINE_MS * sample_rate_hz / 1000.0)
    abs_diff = np.abs(diff)

    def max_slope(i):
        lo, hi = max(0, i - slope_win), min(len(x), i + slope_win + 1)
        return abs_diff[lo:hi].max()

    kept = []
    for c in candidates:
        if kept and c - kept[-1] < refractory:
            if energy[c] > energy[kept[-1]]:
                kept[-1] = c
        elif kept and c - kept[-1] < t_check \
                and max_slope(c) < T_SLOPE_FRAC * max_slope(kept[-1]):
            continue  # T wave trailing the previous QRS, not a new beat
        else:
            kept.append(c)

    refine = int(REFINE_MS * sample_rate_hz / 1000.0)
    peaks = []
    for c in kept:
        lo, hi = max(0, c - refine), min(len(x), c + refine + 1)
        peaks.append(lo + int(np.argmax(x[lo:hi])))
    peaks = sorted(set(peaks))

    # two refined candidates may land on the same R; enforce refractory again
    deduped = []
    for p in peaks:
        if deduped and p - deduped[-1] < refractory:
            if x[p] > x[deduped[-1]]:
                deduped[-1] = p
        else:
            deduped.append(p)

    if len(deduped) < 2:
        raise NoBeatsError(f"only {len(deduped)} beat(s) detected")
    return np.asarray(deduped, dtype=np.int64)
