"""Counterfactual generation: invert a record into latent space, then walk
the latent code down the counterfactual loss until the predictor's output
reaches the requested target.

The update is plain gradient descent w <- w - eta * grad L(w) with a
backtracking safeguard: a trial step is accepted only when it strictly
reduces the loss; eta is halved up to 10 times per iteration, and the run
stops on target_reached, max_iters (accepted steps), or step_underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as eg
from .ecg.records import EcgRecord
from .errors import CofeError, NonFiniteError, ShapeError, ValidationError
from .nets.models import TASK_AF, TASKS
from .util import rel_rmse

PROBABILITY_CEILING = 0.99
MAX_HALVINGS = 10

STOP_TARGET = "target_reached"
STOP_MAX_ITERS = "max_iters"
STOP_UNDERFLOW = "step_underflow"


class OptimizationAborted(CofeError):
    """Non-finite loss during latent descent; carries the trajectory prefix."""

    code = "NON_FINITE_LOSS"

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class Direction:
    kind: str    # "toward_class" | "toward_value"
    value: float

    @classmethod
    def toward_class(cls, class_index):
        return cls("toward_class", int(class_index))

    @classmethod
    def toward_value(cls, y):
        return cls("toward_value", float(y))

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["kind"]), float(d["value"]))


@dataclass
class CfRequest:
    record_id: str
    task: str
    direction: Direction
    severity: float
    max_iters: int = 200
    step_size: float = 0.05
    target_tolerance: float = 0.02
    include_latents: bool = False

    def validate(self):
        if self.task not in TASKS:
            raise ValidationError("task", f"unknown task '{self.task}'")
        if not 0.0 <= self.severity <= 1.0:
            raise ValidationError("severity", "must be in [0, 1]")
        if self.max_iters < 0:
            raise ValidationError("max_iters", "must be >= 0")
        if self.step_size <= 0:
            raise ValidationError("step_size", "must be positive")
        if self.target_tolerance <= 0:
            raise ValidationError("target_tolerance", "must be positive")
        if self.task == TASK_AF:
            if self.direction.kind != "toward_class" \
                    or self.direction.value not in (0, 1):
                raise ValidationError("direction",
                                      "classification needs toward_class(0|1)")
        elif self.direction.kind != "toward_value" \
                or not 0.0 <= self.direction.value <= 1.0:
            raise ValidationError("direction",
                                  "regression needs toward_value in [0, 1]")


@dataclass
class TrajectoryStep:
    t: int
    latent: np.ndarray
    prediction: float
    loss: float
    step_size: float

    def to_dict(self, include_latent=False):
        d = {"t": self.t, "loss": self.loss, "prediction": self.prediction,
             "step_size": self.step_size}
        if include_latent:
            d["latent"] = [float(v) for v in self.latent]
        return d


@dataclass
class CounterfactualResult:
    reconstruction: EcgRecord
    counterfactual: EcgRecord
    trajectory: list
    stop_reason: str
    original_prediction: object   # prob vector (classification) or float
    original_class: object        # argmax class index, None for regression
    target: float
    recon_rel_rmse: float
    morph_rel_rmse: float
    request: CfRequest = None

    @property
    def final_prediction(self):
        return self.trajectory[-1].prediction

    def trajectory_json(self, include_latents=None):
        include = self.request.include_latents if include_latents is None \
            else include_latents
        return [s.to_dict(include) for s in self.trajectory]


def _to_input(record, bundle):
    matrix = record.signal_matrix().astype(np.float32)
    if matrix.shape != (bundle.n_leads, 2500):
        raise ShapeError(f"record shape {matrix.shape} does not match bundle "
                         f"({bundle.n_leads}, 2500)")
    return matrix[None]


def _signal_record(matrix, template, record_id, provenance):
    return EcgRecord(
        record_id=record_id,
        leads=[(name, matrix[i]) for i, (name, _) in enumerate(template.leads)],
        sample_rate_hz=template.sample_rate_hz,
        duration_s=template.duration_s,
        provenance=provenance,
        parent_id=template.record_id,
    )


def predict_record(record, bundle):
    """Model output for one record: prob vector (AF) or scalar (potassium)."""
    x = eg.Tensor(_to_input(record, bundle))
    out = bundle.predictor.predict(x).data[0]
    if bundle.task == TASK_AF:
        return out.astype(np.float64)
    return float(out[0])


def invert(record, bundle):
    """w0 = E(x), reconstruction G(w0), and their relative RMSE vs x."""
    x = _to_input(record, bundle)
    w0 = bundle.encoder(eg.Tensor(x)).data[0].copy()
    recon = bundle.generator(eg.Tensor(w0[None])).data[0]
    err = float(rel_rmse(recon[None], x.astype(np.float64))[0])
    rec = _signal_record(recon.astype(np.float64), record,
                         f"{record.record_id}-recon", "reconstructed")
    return w0, rec, err


def map_severity(severity, task, original_prediction, direction):
    """Concrete optimization target from the severity slider.

    Classification: linear interpolation from the original target-class
    probability toward a 0.99 ceiling. Regression: toward 1 when the
    requested direction points at or above the original value, else toward 0;
    severity=0 always maps to the original prediction.
    """
    if not 0.0 <= severity <= 1.0:
        raise ValidationError("severity", "must be in [0, 1]")
    if task == TASK_AF:
        p_orig = float(original_prediction[int(direction.value)])
        return p_orig + severity * (PROBABILITY_CEILING - p_orig)
    y_orig = float(original_prediction)
    bound = 1.0 if direction.value >= y_orig else 0.0
    return y_orig + severity * (bound - y_orig)


def _descend(w0, evaluate, step_size, max_iters, target=None, tolerance=0.0,
             trajectory=None):
    """Shared descent loop. `evaluate(w, need_grad)` returns
    (loss, grad-or-None, prediction). Returns (trajectory, stop_reason);
    pass `trajectory` to retain the prefix if evaluation raises."""
    if trajectory is None:
        trajectory = []
    loss, grad, pred = evaluate(w0, True)
    trajectory.append(TrajectoryStep(0, w0.copy(), pred, loss, 0.0))
    if target is not None and abs(pred - target) <= tolerance:
        return trajectory, STOP_TARGET
    w = w0.copy()
    for t in range(1, max_iters + 1):
        step = step_size
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            trial_w = w - step * grad
            trial_loss, _, trial_pred = evaluate(trial_w, False)
            if trial_loss < loss:
                accepted = (trial_w, trial_loss, trial_pred, step)
                break
            step *= 0.5
        if accepted is None:
            return trajectory, STOP_UNDERFLOW
        w, loss, pred, used = accepted
        _, grad, _ = evaluate(w, True)
        trajectory.append(TrajectoryStep(t, w.copy(), pred, loss, used))
        if target is not None and abs(pred - target) <= tolerance:
            return trajectory, STOP_TARGET
    return trajectory, STOP_MAX_ITERS


def optimize_latent(record, bundle, request):
    """Run the full counterfactual optimization for one record."""
    request.validate()
    original_prediction = predict_record(record, bundle)
    original_class = int(np.argmax(original_prediction)) \
        if bundle.task == TASK_AF else None
    target = map_severity(request.severity, bundle.task, original_prediction,
                          request.direction)
    w0, recon_record, recon_err = invert(record, bundle)
    recon_matrix = recon_record.signal_matrix()

    cf_id = f"{record.record_id}-cf"

    def finish(trajectory, stop_reason, w_final):
        if np.array_equal(w_final, w0):
            matrix = recon_matrix
        else:
            matrix = bundle.generator(eg.Tensor(
                w_final[None].astype(np.float32))).data[0].astype(np.float64)
        cf_record = _signal_record(matrix, record, cf_id, "counterfactual")
        return CounterfactualResult(
            reconstruction=recon_record,
            counterfactual=cf_record,
            trajectory=trajectory,
            stop_reason=stop_reason,
            original_prediction=original_prediction,
            original_class=original_class,
            target=target,
            recon_rel_rmse=recon_err,
            morph_rel_rmse=float(rel_rmse(matrix[None], recon_matrix[None])[0]),
            request=request,
        )

    if request.severity == 0.0 or request.max_iters == 0:
        # zero-iteration identity: counterfactual equals the reconstruction
        loss, _, pred = _make_evaluator(bundle, request, target)(w0, False)
        step = TrajectoryStep(0, w0.copy(), pred, loss, 0.0)
        reason = STOP_TARGET if request.severity == 0.0 else (
            STOP_TARGET if abs(pred - target) <= request.target_tolerance
            else STOP_MAX_ITERS)
        return finish([step], reason, w0)

    evaluate = _make_evaluator(bundle, request, target)
    prefix = []
    try:
        trajectory, stop_reason = _descend(
            w0, evaluate, request.step_size, request.max_iters,
            target=target, tolerance=request.target_tolerance,
            trajectory=prefix)
    except NonFiniteError as exc:
        raise OptimizationAborted(str(exc), trajectory=prefix) from exc
    return finish(trajectory, stop_reason, trajectory[-1].latent)


def _make_evaluator(bundle, request, target):
    y_t = int(request.direction.value) if bundle.task == TASK_AF else None

    def evaluate(w, need_grad):
        wt = eg.Tensor(w[None].astype(np.float32), requires_grad=need_grad)
        signal = bundle.generator(wt)
        out = bundle.predictor.forward(signal)
        if bundle.task == TASK_AF:
            loss = eg.cross_entropy(eg.reshape(out, (2,)), y_t)
            probs = eg.softmax(out, axis=1).data[0]
            pred = float(probs[y_t])
        else:
            value = eg.sigmoid(out)
            pred = float(value.data[0, 0])
            diff = eg.sub(value, float(target))
            loss = eg.mean(eg.mul(diff, diff))
        loss_value = loss.item()
        if need_grad:
            eg.backward(loss)
            return loss_value, wt.grad[0].astype(np.float64), pred
        return loss_value, None, pred

    return evaluate


def quadratic_sanity(w_init, step_size, max_iters=25):
    """The identical descent loop on L(w) = ||w||^2 (test harness).

    Returns the list of TrajectoryStep; with step_size 0.5 the iterate lands
    exactly on zero in one step.
    """
    w0 = np.asarray(w_init, dtype=np.float64)

    def evaluate(w, need_grad):
        loss = float(np.dot(w, w))
        return loss, (2.0 * w if need_grad else None), loss

    trajectory, _ = _descend(w0, evaluate, step_size, max_iters)
    return trajectory
