"""Parametric synthetic ECG generation with analytic ground truth.

Each cardiac cycle is a sum of five Gaussian bumps (P, Q, R, S, T) centered
relative to the R peak. Width parameters are Gaussian standard deviations in
milliseconds. The QRS complex is solved so that the span where |signal|
exceeds 5% of the R amplitude equals the requested qrs_duration_ms, which
makes the duration parameter directly recoverable by the feature extractor.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ValidationError
from .records import EcgRecord

# 2*sqrt(2*ln 20): full span of a Gaussian above 5% of its peak, in sigmas
_QRS_SPAN_SIGMAS = 2.0 * math.sqrt(2.0 * math.log(20.0))

P_OFFSET_MS = -160.0   # P peak relative to R
T_OFFSET_MS = 250.0    # T peak relative to R
QS_OFFSET_FRAC = 0.22  # Q/S centers at +-0.22 * qrs_duration
QS_AMP_FRAC = 0.12     # Q/S depth relative to R amplitude
QS_SIGMA_FRAC = 0.05   # Q/S width; narrow so their tails stay under the
                       # 5% crossing that defines qrs duration
FIRST_BEAT_MS = 400.0
TAIL_GUARD_MS = 600.0
RR_CLAMP_MS = (300.0, 2000.0)


@dataclass
class SynthParams:
    heart_rate_bpm: float = 60.0
    rr_sigma_ms: float = 0.0
    p_amp_mv: float = 0.1
    p_width_ms: float = 18.0
    qrs_amp_mv: float = 1.0
    qrs_duration_ms: float = 90.0
    t_amp_mv: float = 0.3
    t_width_ms: float = 30.0
    noise_sigma_mv: float = 0.0
    seed: int = 0

    def validate(self):
        def check(name, value, lo=None, hi=None, strict_lo=False):
            if lo is not None and (value <= lo if strict_lo else value < lo):
                raise ValidationError(name, f"value {value} below minimum {lo}")
            if hi is not None and value > hi:
                raise ValidationError(name, f"value {value} above maximum {hi}")

        check("heart_rate_bpm", self.heart_rate_bpm, 40.0, 180.0)
        check("rr_sigma_ms", self.rr_sigma_ms, 0.0)
        check("p_amp_mv", self.p_amp_mv, 0.0)
        check("p_width_ms", self.p_width_ms, 0.0, strict_lo=True)
        check("qrs_amp_mv", self.qrs_amp_mv, 0.0, strict_lo=True)
        check("qrs_duration_ms", self.qrs_duration_ms, 60.0, 200.0)
        check("t_amp_mv", self.t_amp_mv, 0.0)
        check("t_width_ms", self.t_width_ms, 0.0, strict_lo=True)
        check("noise_sigma_mv", self.noise_sigma_mv, 0.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LabelRule:
    """Thresholds mapping generator parameters to task labels."""

    af_p_amp_max_mv: float = 0.05
    af_rr_sigma_min_ms: float = 70.0
    pot_t_amp_range_mv: tuple = (0.05, 0.8)
    pot_qrs_range_ms: tuple = (80.0, 140.0)


DEFAULT_RULE = LabelRule()


@dataclass
class GroundTruth:
    """Exact beat geometry implied by params (times in ms from record start)."""

    r_times_ms: np.ndarray
    rr_intervals_ms: np.ndarray
    p_centers_ms: np.ndarray
    t_centers_ms: np.ndarray
    qrs_onsets_ms: np.ndarray
    qrs_offsets_ms: np.ndarray
    p_sigma_ms: float

    def p_windows(self, sample_rate_hz):
        """Per-beat (lo, hi) sample windows around the true P bump (+-2.5 sigma)."""
        half = 2.5 * self.p_sigma_ms
        scale = sample_rate_hz / 1000.0
        return [(int(round((c - half) * scale)), int(round((c + half) * scale)))
                for c in self.p_centers_ms]


def _beat_grid(params, duration_s):
    """Deterministic beat times: equal draws standardized to the exact
    requested sample standard deviation, so measured SDNN matches rr_sigma."""
    mean_rr = 60000.0 / params.heart_rate_bpm
    span = duration_s * 1000.0 - FIRST_BEAT_MS - TAIL_GUARD_MS
    n_beats = max(1, int(span // mean_rr) + 1)
    rng = np.random.default_rng(params.seed)
    if n_beats > 1:
        z = rng.standard_normal(n_beats - 1)
        if params.rr_sigma_ms > 0 and z.size >= 2:
            z = (z - z.mean()) / z.std(ddof=1)
        rr = mean_rr + params.rr_sigma_ms * z
        rr = np.clip(rr, RR_CLAMP_MS[0], RR_CLAMP_MS[1])
    else:
        rr = np.zeros(0)
    r_times = FIRST_BEAT_MS + np.concatenate([[0.0], np.cumsum(rr)])
    return r_times, rr, rng


def ground_truth(params, duration_s=10.0):
    params.validate()
    r_times, rr, _ = _beat_grid(params, duration_s)
    half = params.qrs_duration_ms / 2.0
    return GroundTruth(
        r_times_ms=r_times,
        rr_intervals_ms=rr,
        p_centers_ms=r_times + P_OFFSET_MS,
        t_centers_ms=r_times + T_OFFSET_MS,
        qrs_onsets_ms=r_times - half,
        qrs_offsets_ms=r_times + half,
        p_sigma_ms=params.p_width_ms,
    )


def _add_bump(signal, t_ms, center_ms, amp, sigma_ms):
    if amp == 0.0:
        return
    signal += amp * np.exp(-0.5 * ((t_ms - center_ms) / sigma_ms) ** 2)


def synth_record_id(params):
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return "synth-" + hashlib.sha256(blob).hexdigest()[:12]


def synth_ecg(params, sample_rate_hz=250, duration_s=10.0, lead_name="II",
              record_id=None):
    """Generate one synthetic single-lead record; pure function of params."""
    params.validate()
    n = int(round(sample_rate_hz * duration_s))
    t_ms = np.arange(n) * (1000.0 / sample_rate_hz)
    r_times, _, rng = _beat_grid(params, duration_s)

    sigma_r = params.qrs_duration_ms / _QRS_SPAN_SIGMAS
    qs_offset = QS_OFFSET_FRAC * params.qrs_duration_ms
    qs_sigma = QS_SIGMA_FRAC * params.qrs_duration_ms
    qs_amp = -QS_AMP_FRAC * params.qrs_amp_mv

    signal = np.zeros(n)
    for r in r_times:
        _add_bump(signal, t_ms, r + P_OFFSET_MS, params.p_amp_mv, params.p_width_ms)
        _add_bump(signal, t_ms, r - qs_offset, qs_amp, qs_sigma)
        _add_bump(signal, t_ms, r, params.qrs_amp_mv, sigma_r)
        _add_bump(signal, t_ms, r + qs_offset, qs_amp, qs_sigma)
        _add_bump(signal, t_ms, r + T_OFFSET_MS, params.t_amp_mv, params.t_width_ms)
    if params.noise_sigma_mv > 0:
        signal = signal + rng.normal(0.0, params.noise_sigma_mv, n)

    return EcgRecord(
        record_id=record_id or synth_record_id(params),
        leads=[(lead_name, signal)],
        sample_rate_hz=sample_rate_hz,
        duration_s=duration_s,
        provenance="synthetic",
    )


def label_synthetic(params, rule=DEFAULT_RULE):
    """(af_label, potassium_norm) from generating parameters; deterministic."""
    params.validate()
    af = int(params.p_amp_mv < rule.af_p_amp_max_mv
             and params.rr_sigma_ms > rule.af_rr_sigma_min_ms)

    def minmax(value, lo, hi):
        return (value - lo) / (hi - lo)

    t_lo, t_hi = rule.pot_t_amp_range_mv
    q_lo, q_hi = rule.pot_qrs_range_ms
    potassium = 0.5 * minmax(params.t_amp_mv, t_lo, t_hi) \
        + 0.5 * minmax(params.qrs_duration_ms, q_lo, q_hi)
    return af, float(np.clip(potassium, 0.0, 1.0))
