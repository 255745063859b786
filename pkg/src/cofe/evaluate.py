"""Population evaluation: push test records toward the more severe state and
compare measured features of originals vs counterfactuals."""

from __future__ import annotations

import numpy as np

from . import engine as eg
from .cf import CfRequest, Direction, optimize_latent
from .errors import NoBeatsError, ValidationError
from .features.measure import measure_record
from .features.stats import TASK_FEATURES, EvalReport, paired_compare
from .nets.models import TASK_AF
from .nets.train import eval_chunked

HIGH_CONFIDENCE = 0.9
MORPH_LIMIT = 0.5


def predict_split(bundle, corpus, split="test"):
    """(ids, predicted target-prob or value) over a corpus split."""
    ids, signals = corpus.signals(split)
    x = signals[:, None, :]
    preds = eval_chunked(
        lambda xb: bundle.predictor.predict(eg.Tensor(xb)).data, x, chunk=128)
    if bundle.task == TASK_AF:
        return ids, preds[:, 1]
    return ids, preds[:, 0]


def select_eligible(bundle, corpus, n, split="test"):
    """The n test records with the lowest target-state prediction."""
    ids, scores = predict_split(bundle, corpus, split)
    eligible = [(s, rid) for s, rid in zip(scores, ids) if s < 0.5]
    if len(eligible) < n:
        raise ValidationError(
            "n", f"insufficient eligible records: wanted {n}, found "
                 f"{len(eligible)} with prediction < 0.5 in split '{split}'")
    eligible.sort(key=lambda pair: (pair[0], pair[1]))
    return [rid for _, rid in eligible[:n]]


def positive_direction(task):
    """Direction of 'more severe': toward the AF class / higher potassium."""
    return Direction.toward_class(1) if task == TASK_AF \
        else Direction.toward_value(1.0)


def evaluation_report(bundle, corpus, task=None, n=100, severity=1.0,
                      max_iters=200, step_size=0.05, target_tolerance=0.02,
                      split="test", progress=None):
    """Generate positive counterfactuals for n eligible records and emit the
    paired feature table plus per-record deltas."""
    task = task or bundle.task
    if task != bundle.task:
        raise ValidationError("task", f"bundle is for {bundle.task}")
    record_ids = select_eligible(bundle, corpus, n, split)
    direction = positive_direction(task)
    features = TASK_FEATURES[task]

    originals, counterfactuals, per_record = [], [], []
    stop_reasons = {}
    reached, confident, morph_violations, failures = 0, 0, 0, 0
    for i, rid in enumerate(record_ids):
        record = corpus.record(rid)
        request = CfRequest(record_id=rid, task=task, direction=direction,
                            severity=severity, max_iters=max_iters,
                            step_size=step_size,
                            target_tolerance=target_tolerance)
        result = optimize_latent(record, bundle, request)
        stop_reasons[result.stop_reason] = \
            stop_reasons.get(result.stop_reason, 0) + 1
        if result.stop_reason == "target_reached":
            reached += 1
        if result.final_prediction >= HIGH_CONFIDENCE:
            confident += 1
        if result.morph_rel_rmse > MORPH_LIMIT:
            morph_violations += 1
        try:
            orig_features = measure_record(record)
            cf_features = measure_record(result.counterfactual)
        except NoBeatsError:
            failures += 1
            continue
        originals.append(orig_features)
        counterfactuals.append(cf_features)
        entry = {"record_id": rid,
                 "final_prediction": result.final_prediction,
                 "stop_reason": result.stop_reason,
                 "accepted_steps": len(result.trajectory) - 1,
                 "morph_rel_rmse": result.morph_rel_rmse}
        for f in features:
            entry[f"delta_{f}"] = cf_features.value(f) - orig_features.value(f)
        per_record.append(entry)
        if progress:
            progress(i + 1, len(record_ids))

    if len(originals) < 2:
        raise ValidationError("n", "fewer than 2 measurable pairs")
    comparisons = paired_compare(originals, counterfactuals, features)
    n_runs = len(record_ids)
    return EvalReport(
        task=task,
        severity=severity,
        n_requested=n,
        n_evaluated=len(originals),
        comparisons=comparisons,
        per_record=per_record,
        target_reached_fraction=reached / n_runs,
        high_confidence_fraction=confident / n_runs,
        morphology_violation_fraction=morph_violations / n_runs,
        stop_reasons=stop_reasons,
    )
