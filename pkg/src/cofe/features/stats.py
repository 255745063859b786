"""Paired original-vs-counterfactual feature statistics and the evaluation
report (feature table with two-sided paired t-tests)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from ..errors import ValidationError
from .measure import FEATURE_NAMES

TASK_FEATURES = {
    "af_classification": ("p_amp_mv", "rr_variability_ms"),
    "potassium_regression": ("t_amp_mv", "qrs_duration_ms"),
}

FEATURE_LABELS = {
    "p_amp_mv": "P-wave amplitude (mV)",
    "rr_variability_ms": "RR interval variability (ms)",
    "t_amp_mv": "T-wave amplitude (mV)",
    "qrs_duration_ms": "QRS duration (ms)",
}


@dataclass
class PairedComparison:
    feature: str
    mean_original: float
    mean_counterfactual: float
    mean_delta: float
    t_statistic: float
    p_value: float
    n_pairs: int
    median_original: float = float("nan")
    median_counterfactual: float = float("nan")

    def to_dict(self):
        return {
            "feature": self.feature,
            "mean_original": self.mean_original,
            "mean_counterfactual": self.mean_counterfactual,
            "mean_delta": self.mean_delta,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "n_pairs": self.n_pairs,
            "median_original": self.median_original,
            "median_counterfactual": self.median_counterfactual,
        }


DEGENERATE_T = 1e12  # stands in for +-infinity so reports stay strict JSON


def paired_t(deltas):
    """Two-sided paired t-test on per-pair deltas.

    Convention for zero variance: p = 1.0 when the mean delta is zero (no
    effect, no evidence), else p = 0.0 (a deterministic shift; t_statistic
    reported as the +-DEGENERATE_T sentinel).
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    n = deltas.size
    if n < 2:
        raise ValidationError("n_pairs", "need at least 2 pairs")
    sd = deltas.std(ddof=1)
    mean = deltas.mean()
    if sd == 0.0:
        return (0.0, 1.0) if mean == 0.0 else (DEGENERATE_T * np.sign(mean), 0.0)
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * sps.t.sf(abs(t), n - 1)
    return float(t), float(min(max(p, 0.0), 1.0))


def paired_compare(originals, counterfactuals, features=FEATURE_NAMES):
    """Per-feature PairedComparison between two equal-length FeatureSet lists."""
    if len(originals) != len(counterfactuals):
        raise ValidationError(
            "pairs", f"length mismatch: {len(originals)} originals vs "
                     f"{len(counterfactuals)} counterfactuals")
    if len(originals) < 2:
        raise ValidationError("pairs", "need at least 2 pairs")
    comparisons = []
    for feature in features:
        orig = np.asarray([fs.value(feature) for fs in originals])
        cf = np.asarray([fs.value(feature) for fs in counterfactuals])
        deltas = cf - orig
        t, p = paired_t(deltas)
        comparisons.append(PairedComparison(
            feature=feature,
            mean_original=float(orig.mean()),
            mean_counterfactual=float(cf.mean()),
            mean_delta=float(deltas.mean()),
            t_statistic=t,
            p_value=p,
            n_pairs=int(len(orig)),
            median_original=float(np.median(orig)),
            median_counterfactual=float(np.median(cf)),
        ))
    return comparisons


@dataclass
class EvalReport:
    task: str
    severity: float
    n_requested: int
    n_evaluated: int
    comparisons: list
    per_record: list = field(default_factory=list)
    target_reached_fraction: float = float("nan")
    high_confidence_fraction: float = float("nan")
    morphology_violation_fraction: float = float("nan")
    stop_reasons: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "task": self.task,
            "severity": self.severity,
            "n_requested": self.n_requested,
            "n_evaluated": self.n_evaluated,
            "comparisons": [c.to_dict() for c in self.comparisons],
            "per_record": self.per_record,
            "target_reached_fraction": self.target_reached_fraction,
            "high_confidence_fraction": self.high_confidence_fraction,
            "morphology_violation_fraction": self.morphology_violation_fraction,
            "stop_reasons": self.stop_reasons,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_text(self):
        lines = [
            f"task: {self.task}   severity: {self.severity}   "
            f"pairs: {self.n_evaluated}",
            "",
            f"{'Feature':<32} | {'Original':>10} | {'Counterfactual':>14} | p-value",
            "-" * 76,
        ]
        for c in self.comparisons:
            label = FEATURE_LABELS.get(c.feature, c.feature)
            p_text = "<0.001" if 0 < c.p_value < 0.001 else f"{c.p_value:.3g}"
            lines.append(f"{label:<32} | {c.mean_original:>10.3f} | "
                         f"{c.mean_counterfactual:>14.3f} | {p_text}")
        if np.isfinite(self.target_reached_fraction):
            lines += ["", f"target reached: "
                          f"{self.target_reached_fraction * 100:.1f}% of runs"]
        return "\n".join(lines) + "\n"
