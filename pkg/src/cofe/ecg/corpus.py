"""Synthetic labeled corpus: rejection-sampled parameter draws, deterministic
70/15/15 splits, byte-identical regeneration.

Layout on disk:
    <root>/manifest.json   ids, labels, splits, params, spec hash, seed
    <root>/signals.f32     float32 little-endian rows, one per record, in
                           manifest order
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import InfeasibleMixError, ValidationError
from .records import EcgRecord
from .synth import DEFAULT_RULE, LabelRule, SynthParams, label_synthetic, synth_ecg

REJECTION_BUDGET_FACTOR = 100
SPLIT_FRACTIONS = {"train": 0.70, "val": 0.15, "test": 0.15}

# Ranges chosen so every Table-1 feature is recoverable by the extractor
# (QRS half-span stays inside the +-80 ms search window; T-wave energy stays
# under the beat-detection threshold) while AF/non-AF morphology straddles
# the label rule thresholds.
DEFAULT_RANGES = {
    "heart_rate_bpm": (55.0, 85.0),
    "rr_sigma_ms": (30.0, 110.0),
    "p_amp_mv": (0.0, 0.15),
    "p_width_ms": (14.0, 22.0),
    "qrs_amp_mv": (1.0, 1.3),
    "qrs_duration_ms": (80.0, 140.0),
    "t_amp_mv": (0.05, 0.55),
    "t_width_ms": (30.0, 42.0),
    "noise_sigma_mv": (0.01, 0.03),
}


@dataclass
class CorpusSpec:
    n_records: int = 1000
    class_mix: dict = field(default_factory=lambda: {"af": 0.5, "non_af": 0.5})
    parameter_ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    label_rule: LabelRule = field(default_factory=LabelRule)
    seed: int = 0
    sample_rate_hz: int = 250
    duration_s: float = 10.0

    def validate(self):
        if self.n_records <= 0:
            raise ValidationError("n_records", "must be positive")
        total = sum(self.class_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError("class_mix", f"fractions sum to {total}, not 1")
        for name, (lo, hi) in self.parameter_ranges.items():
            if lo > hi:
                raise ValidationError("parameter_ranges",
                                      f"{name}: min {lo} > max {hi}")

    def to_dict(self):
        return {
            "n_records": self.n_records,
            "class_mix": dict(sorted(self.class_mix.items())),
            "parameter_ranges": {k: list(v) for k, v in
                                 sorted(self.parameter_ranges.items())},
            "label_rule": {
                "af_p_amp_max_mv": self.label_rule.af_p_amp_max_mv,
                "af_rr_sigma_min_ms": self.label_rule.af_rr_sigma_min_ms,
                "pot_t_amp_range_mv": list(self.label_rule.pot_t_amp_range_mv),
                "pot_qrs_range_ms": list(self.label_rule.pot_qrs_range_ms),
            },
            "seed": self.seed,
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
        }

    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        rule = d.get("label_rule", {})
        return cls(
            n_records=d["n_records"],
            class_mix=dict(d["class_mix"]),
            parameter_ranges={k: tuple(v) for k, v in d["parameter_ranges"].items()},
            label_rule=LabelRule(
                af_p_amp_max_mv=rule.get("af_p_amp_max_mv",
                                         DEFAULT_RULE.af_p_amp_max_mv),
                af_rr_sigma_min_ms=rule.get("af_rr_sigma_min_ms",
                                            DEFAULT_RULE.af_rr_sigma_min_ms),
                pot_t_amp_range_mv=tuple(rule.get(
                    "pot_t_amp_range_mv", DEFAULT_RULE.pot_t_amp_range_mv)),
                pot_qrs_range_ms=tuple(rule.get(
                    "pot_qrs_range_ms", DEFAULT_RULE.pot_qrs_range_ms)),
            ),
            seed=d["seed"],
            sample_rate_hz=d.get("sample_rate_hz", 250),
            duration_s=d.get("duration_s", 10.0),
        )


def _split_sizes(n):
    n_train = round(SPLIT_FRACTIONS["train"] * n)
    n_val = round(SPLIT_FRACTIONS["val"] * n)
    return n_train, n_val, n - n_train - n_val


def assign_splits(record_ids):
    """Deterministic hash-ranked 70/15/15 assignment with exact sizes."""
    ranked = sorted(record_ids,
                    key=lambda rid: hashlib.sha256(rid.encode()).hexdigest())
    n_train, n_val, _ = _split_sizes(len(record_ids))
    split = {}
    for i, rid in enumerate(ranked):
        if i < n_train:
            split[rid] = "train"
        elif i < n_train + n_val:
            split[rid] = "val"
        else:
            split[rid] = "test"
    return split


def _draw_params(rng, ranges, seed):
    values = {}
    for name, (lo, hi) in ranges.items():
        values[name] = float(rng.uniform(lo, hi))
    return SynthParams(seed=seed, **values)


class CorpusHandle:
    """Read access to a materialized corpus."""

    def __init__(self, root, manifest):
        self.root = str(root)
        self.manifest = manifest
        self.spec = CorpusSpec.from_dict(manifest["spec"])
        self.records = manifest["records"]
        self._index = {r["record_id"]: i for i, r in enumerate(self.records)}
        n = self.spec.n_records
        length = int(round(self.spec.sample_rate_hz * self.spec.duration_s))
        self._signals = np.memmap(os.path.join(self.root, "signals.f32"),
                                  dtype="<f4", mode="r", shape=(n, length))

    @property
    def seed(self):
        return self.manifest["seed"]

    @property
    def spec_hash(self):
        return self.manifest["spec_hash"]

    def ids(self, split=None):
        return [r["record_id"] for r in self.records
                if split is None or r["split"] == split]

    def split_sizes(self):
        sizes = {"train": 0, "val": 0, "test": 0}
        for r in self.records:
            sizes[r["split"]] += 1
        return sizes

    def entry(self, record_id):
        return self.records[self._index[record_id]]

    def signal(self, record_id):
        return np.asarray(self._signals[self._index[record_id]], dtype=np.float64)

    def signals(self, split=None):
        """(ids, float32 matrix) for a split, in manifest order."""
        idx = [self._index[r] for r in self.ids(split)]
        return self.ids(split), np.asarray(self._signals[idx], dtype=np.float32)

    def labels(self, task, split=None):
        if task == "af_classification":
            return np.asarray([r["af_label"] for r in self.records
                               if split is None or r["split"] == split],
                              dtype=np.int64)
        if task == "potassium_regression":
            return np.asarray([r["potassium_norm"] for r in self.records
                               if split is None or r["split"] == split],
                              dtype=np.float32)
        raise ValidationError("task", f"unknown task '{task}'")

    def params(self, record_id):
        return SynthParams.from_dict(self.entry(record_id)["params"])

    def record(self, record_id):
        entry = self.entry(record_id)
        return EcgRecord(
            record_id=record_id,
            leads=[("II", self.signal(record_id))],
            sample_rate_hz=self.spec.sample_rate_hz,
            duration_s=self.spec.duration_s,
            provenance="synthetic",
        )


def build_corpus(spec, out_dir):
    """Materialize the corpus; same spec twice produces identical bytes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    targets = {}
    remaining = spec.n_records
    names = sorted(spec.class_mix)
    for i, cls in enumerate(names):
        want = round(spec.class_mix[cls] * spec.n_records) \
            if i < len(names) - 1 else remaining
        targets[cls] = want
        remaining -= want

    counts = {cls: 0 for cls in targets}
    accepted = []
    budget = REJECTION_BUDGET_FACTOR * spec.n_records
    draws = 0
    while len(accepted) < spec.n_records:
        if draws >= budget:
            raise InfeasibleMixError(
                f"class mix {spec.class_mix} not reachable from the parameter "
                f"ranges within {budget} draws (filled {counts})")
        draws += 1
        params = _draw_params(rng, spec.parameter_ranges,
                              int(rng.integers(0, 2 ** 31)))
        af, pot = label_synthetic(params, spec.label_rule)
        cls = "af" if af else "non_af"
        if cls not in targets or counts[cls] >= targets[cls]:
            continue
        counts[cls] += 1
        accepted.append((params, af, pot))

    ids = [f"syn-{spec.seed:08x}-{i:05d}" for i in range(spec.n_records)]
    splits = assign_splits(ids)

    os.makedirs(out_dir, exist_ok=True)
    length = int(round(spec.sample_rate_hz * spec.duration_s))
    signals = np.empty((spec.n_records, length), dtype="<f4")
    records_meta = []
    for i, (params, af, pot) in enumerate(accepted):
        rec = synth_ecg(params, sample_rate_hz=spec.sample_rate_hz,
                        duration_s=spec.duration_s, record_id=ids[i])
        signals[i] = rec.leads[0][1].astype("<f4")
        records_meta.append({
            "record_id": ids[i],
            "split": splits[ids[i]],
            "af_label": af,
            "potassium_norm": round(pot, 9),
            "params": params.to_dict(),
        })

    manifest = {
        "spec": spec.to_dict(),
        "spec_hash": spec.spec_hash(),
        "seed": spec.seed,
        "draws": draws,
        "records": records_meta,
    }
    with open(os.path.join(out_dir, "signals.f32"), "wb") as fh:
        fh.write(signals.tobytes())
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return CorpusHandle(out_dir, manifest)


def load_corpus(root):
    with open(os.path.join(root, "manifest.json")) as fh:
        manifest = json.load(fh)
    return CorpusHandle(root, manifest)
