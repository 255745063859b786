"""Waveform feature measurement: P/T amplitudes, QRS duration, RR variability.

Per-beat procedure (all windows relative to the detected R peak):
  - baseline   = median of the 40 ms preceding the P search window
  - QRS bounds = outermost crossings of 5% of the local R amplitude within
                 +-80 ms of R, sub-sample interpolated
  - P amp      = max |signal - baseline| in [R - 250 ms, QRS onset]
  - T amp      = max |signal - baseline| in [QRS offset + 40 ms, offset + 400 ms]
Record-level amplitude/duration features are medians over beats; RR
variability is the sample standard deviation of successive RR intervals
(SDNN; RMSSD available via rr_stat).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NoBeatsError
from .detect import detect_r_peaks

QRS_SEARCH_MS = 80
QRS_THRESHOLD_FRAC = 0.05
P_WINDOW_MS = 250
BASELINE_MS = 40
T_GAP_MS = 40
T_WINDOW_MS = 400

FEATURE_NAMES = ("p_amp_mv", "rr_variability_ms", "t_amp_mv", "qrs_duration_ms")


@dataclass
class BeatFiducials:
    p_peak: int
    qrs_onset: int
    r_peak: int
    qrs_offset: int
    t_peak: int


@dataclass
class FeatureSet:
    p_amp_mv: float
    rr_variability_ms: float
    t_amp_mv: float
    qrs_duration_ms: float
    n_beats: int
    fiducials: list = field(default_factory=list)

    def to_dict(self):
        return {
            "p_amp_mv": self.p_amp_mv,
            "rr_variability_ms": self.rr_variability_ms,
            "t_amp_mv": self.t_amp_mv,
            "qrs_duration_ms": self.qrs_duration_ms,
            "n_beats": self.n_beats,
        }

    def value(self, feature_name):
        return self.to_dict()[feature_name]


def measure_features(signal, sample_rate_hz=250, rr_stat="sdnn"):
    """FeatureSet for one lead; raises NoBeatsError when < 2 beats found."""
    x = np.asarray(signal, dtype=np.float64)
    peaks = detect_r_peaks(x, sample_rate_hz)

    per_ms = sample_rate_hz / 1000.0

    def s(ms_value):
        return int(round(ms_value * per_ms))

    search = s(QRS_SEARCH_MS)
    p_lo_off = s(P_WINDOW_MS)
    base_off = s(P_WINDOW_MS + BASELINE_MS)
    t_gap = s(T_GAP_MS)
    t_win = s(T_WINDOW_MS)

    p_amps, t_amps, durations, fiducials = [], [], [], []
    for r in peaks:
        r = int(r)
        if r - base_off < 0 or r + search + 1 >= len(x):
            continue  # windows would leave the record; skip edge beats
        baseline = float(np.median(x[r - base_off:r - p_lo_off]))
        amp_r = x[r] - baseline
        if amp_r <= 0:
            continue
        threshold = QRS_THRESHOLD_FRAC * amp_r
        dev = np.abs(x[r - base_off:r + search + t_win + 2] - baseline)
        off = r - base_off  # dev index = signal index - off

        win = dev[r - search - off:r + search + 1 - off]
        above = np.flatnonzero(win >= threshold)
        if above.size == 0:
            continue
        i0 = r - search + int(above[0])
        i1 = r - search + int(above[-1])
        if not (i0 < r < i1):
            continue

        onset_t = float(i0)
        d_in, d_out = dev[i0 - off], dev[i0 - 1 - off]
        if d_out < threshold <= d_in:
            onset_t = (i0 - 1) + (threshold - d_out) / (d_in - d_out)
        offset_t = float(i1)
        d_in, d_out = dev[i1 - off], dev[i1 + 1 - off]
        if d_out < threshold <= d_in:
            offset_t = i1 + (d_in - threshold) / (d_in - d_out)

        p_lo, p_hi = r - p_lo_off, i0 - 1
        t_lo, t_hi = i1 + t_gap, min(i1 + t_win, len(x) - 1)
        if p_hi <= p_lo or t_hi <= t_lo:
            continue
        p_seg = dev[p_lo - off:p_hi + 1 - off]
        t_seg = dev[t_lo - off:t_hi + 1 - off]

        durations.append((offset_t - onset_t) / per_ms)
        p_amps.append(float(p_seg.max()))
        t_amps.append(float(t_seg.max()))
        fiducials.append(BeatFiducials(
            p_peak=p_lo + int(np.argmax(p_seg)),
            qrs_onset=i0,
            r_peak=r,
            qrs_offset=i1,
            t_peak=t_lo + int(np.argmax(t_seg)),
        ))

    if not durations:
        raise NoBeatsError("no measurable beats")

    rr = np.diff(peaks) / per_ms
    if rr_stat == "rmssd":
        rr_var = float(np.sqrt(np.mean(np.diff(rr) ** 2))) if rr.size >= 2 else 0.0
    else:
        rr_var = float(np.std(rr, ddof=1)) if rr.size >= 2 else 0.0

    return FeatureSet(
        p_amp_mv=float(np.median(p_amps)),
        rr_variability_ms=rr_var,
        t_amp_mv=float(np.median(t_amps)),
        qrs_duration_ms=float(np.median(durations)),
        n_beats=int(len(peaks)),
        fiducials=fiducials,
    )


def measure_record(record, lead=None, rr_stat="sdnn"):
    """Measure the first (or named) lead of an EcgRecord."""
    if lead is None:
        _, mv = record.leads[0]
    else:
        mv = record.lead(lead)
    return measure_features(mv, record.sample_rate_hz, rr_stat=rr_stat)
