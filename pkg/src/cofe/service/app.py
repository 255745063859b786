"""HTTP service: upload, diagnose, explain, compare.

Endpoints (JSON unless noted):
    POST /api/records                 upload a record (JSON or CSV body)
    GET  /api/records/{id}            fetch a stored record
    POST /api/predict                 {record_id, task} -> model output
    POST /api/counterfactuals         request body per CfRequest; long runs
                                      return 202 plus a poll URL
    GET  /api/counterfactuals/{id}    full result with trajectory
    GET  /api/counterfactuals/{id}/comparison   payload for the explorer view
    GET  /api/jobs/{id}               async job status
    GET  /api/schema[/{name}]         published response schemas
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
import logging
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..cf import CfRequest, Direction, OptimizationAborted, optimize_latent, predict_record
from ..ecg.records import record_from_csv, record_from_json
from ..errors import CofeError, NotFoundError, RecordFormatError, ValidationError
from ..evaluate import positive_direction
from ..features.measure import FEATURE_NAMES, measure_record
from ..nets.checkpoint import LoadedBundle
from ..nets.models import TASK_AF, TASKS
from ..errors import NoBeatsError
from ..saliency import saliency
from .store import ArtifactStore

log = logging.getLogger("cofe.service")

MAX_BODY_BYTES = 5 * 1024 * 1024
RUN_BUDGET_S = 10.0


@dataclass
class ServiceConfig:
    data_dir: str
    bundle_paths: dict = field(default_factory=dict)  # task -> checkpoint path
    host: str = "127.0.0.1"
    port: int = 8000
    step_size: float = 0.05
    max_iters: int = 200
    target_tolerance: float = 0.02
    cors_origins: list = field(default_factory=lambda: ["http://localhost:5173",
                                                        "http://localhost:3000"])
    run_budget_s: float = RUN_BUDGET_S
    max_body_bytes: int = MAX_BODY_BYTES
    static_dir: str = None


def load_schemas():
    schemas = {}
    root = importlib.resources.files("cofe.service") / "schemas"
    for entry in root.iterdir():
        if entry.name.endswith(".json"):
            schemas[entry.name[:-5]] = json.loads(entry.read_text())
    return schemas


def _error_response(status, code, message, extra=None):
    payload = {"error": code, "message": message}
    if extra:
        payload.update(extra)
    return JSONResponse(payload, status_code=status)


def _status_for(exc):
    if isinstance(exc, NotFoundError):
        return 404
    if isinstance(exc, ValidationError):
        return 422 if exc.field in ("severity", "direction") else 400
    if isinstance(exc, RecordFormatError):
        return 400
    if isinstance(exc, OptimizationAborted):
        return 500
    return 400


class CfRunner:
    """Executes counterfactual requests off the request thread and persists
    the full artifact set (result, records, saliency)."""

    def __init__(self, store, bundles, config):
        self.store = store
        self.bundles = bundles
        self.config = config
        self.executor = ThreadPoolExecutor(max_workers=2)
        self.jobs = {}
        self.jobs_lock = threading.Lock()

    def cf_id(self, record_id, task, request_dict):
        bundle = self.bundles[task]
        key = json.dumps({"record": record_id, "task": task,
                          "bundle": bundle.checksum, "request": request_dict},
                         sort_keys=True)
        return "cf" + hashlib.sha256(key.encode()).hexdigest()[:16]

    def run(self, cf_id, record, request):
        bundle = self.bundles[request.task]
        result = optimize_latent(record, bundle, request)
        sal = saliency(record, bundle.predictor, bundle.task)

        def features_or_none(rec):
            try:
                return measure_record(rec).to_dict()
            except NoBeatsError:
                return None

        orig_f = features_or_none(record)
        cf_f = features_or_none(result.counterfactual)
        deltas = {}
        for name in FEATURE_NAMES:
            if orig_f is None or cf_f is None:
                deltas[name] = None
            else:
                deltas[name] = cf_f[name] - orig_f[name]

        recon_pred = predict_record(result.reconstruction, bundle)
        if bundle.task == TASK_AF:
            idx = int(request.direction.value)
            original_scalar = float(result.original_prediction[idx])
            recon_scalar = float(recon_pred[idx])
        else:
            original_scalar = float(result.original_prediction)
            recon_scalar = float(recon_pred)

        payload = {
            "cf_id": cf_id,
            "record_id": record.record_id,
            "task": request.task,
            "severity": request.severity,
            "direction": request.direction.to_dict(),
            "stop_reason": result.stop_reason,
            "original_prediction": original_scalar,
            "original_class": result.original_class,
            "final_prediction": float(result.final_prediction),
            "reconstruction_prediction": recon_scalar,
            "target": float(result.target),
            "recon_rel_rmse": result.recon_rel_rmse,
            "morph_rel_rmse": result.morph_rel_rmse,
            "accepted_steps": len(result.trajectory) - 1,
            "feature_deltas": deltas,
            "features": {"original": orig_f, "counterfactual": cf_f},
            "trajectory": result.trajectory_json(),
        }
        latents = np.stack([s.latent for s in result.trajectory]) \
            if request.include_latents else None
        self.store.put_cf(cf_id, payload, result.reconstruction,
                          result.counterfactual, sal.to_dict(), latents=latents)
        return payload

    def submit(self, cf_id, record, request):
        future = self.executor.submit(self.run, cf_id, record, request)
        job_id = uuid.uuid4().hex[:12]
        with self.jobs_lock:
            self.jobs[job_id] = (future, cf_id)
        return job_id, future

    def job_status(self, job_id):
        with self.jobs_lock:
            entry = self.jobs.get(job_id)
        if entry is None:
            raise NotFoundError(f"job '{job_id}' not found")
        future, cf_id = entry
        if not future.done():
            return {"job_id": job_id, "status": "pending", "cf_id": cf_id}
        exc = future.exception()
        if exc is not None:
            code = exc.code if isinstance(exc, CofeError) else "INTERNAL"
            return {"job_id": job_id, "status": "failed", "error": code,
                    "message": str(exc)}
        return {"job_id": job_id, "status": "done", "cf_id": cf_id}


def create_app(config):
    app = FastAPI(title="cofe", docs_url=None, redoc_url=None)
    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware, allow_origins=list(config.cors_origins),
            allow_methods=["*"], allow_headers=["*"])

    store = ArtifactStore(config.data_dir)
    bundles = {}
    for task, path in config.bundle_paths.items():
        if task not in TASKS:
            raise ValidationError("bundle_paths", f"unknown task '{task}'")
        bundles[task] = LoadedBundle.from_path(path)
        log.info("loaded bundle for %s from %s", task, path)
    runner = CfRunner(store, bundles, config)
    schemas = load_schemas()

    app.state.store = store
    app.state.bundles = bundles
    app.state.runner = runner

    @app.exception_handler(CofeError)
    async def handle_cofe_error(request, exc):
        extra = None
        if isinstance(exc, OptimizationAborted):
            extra = {"trajectory_prefix":
                     [s.to_dict() for s in exc.trajectory]}
        return _error_response(_status_for(exc), exc.code, exc.message, extra)

    @app.post("/api/records", status_code=201)
    async def upload_record(request: Request):
        body = await request.body()
        if len(body) > config.max_body_bytes:
            return _error_response(413, "PAYLOAD_TOO_LARGE",
                                   f"body exceeds {config.max_body_bytes} bytes")
        content_type = request.headers.get("content-type", "")
        text = body.decode("utf-8", errors="replace")
        stripped = text.lstrip()
        if "csv" in content_type or (stripped and stripped[0] in "#" and
                                     "json" not in content_type):
            record = record_from_csv(text)
        elif stripped.startswith("{"):
            record = record_from_json(text)
        else:
            record = record_from_csv(text)
        record_id = store.put_record(record)
        return {"record_id": record_id}

    @app.get("/api/records/{record_id}")
    async def get_record(record_id: str):
        return store.get_record(record_id).to_dict()

    @app.post("/api/predict")
    async def predict(request: Request):
        body = await request.json()
        record_id = body.get("record_id")
        task = body.get("task")
        if task not in TASKS:
            return _error_response(400, "UNKNOWN_TASK",
                                   f"task must be one of {TASKS}")
        if not record_id or not store.has_record(record_id):
            raise NotFoundError(f"record '{record_id}' not found")
        if task not in bundles:
            return _error_response(409, "BUNDLE_MISSING",
                                   f"no bundle configured for task '{task}'")
        bundle = bundles[task]
        cached = store.get_prediction(record_id, task, bundle.checksum)
        if cached is not None:
            cached["cached"] = True
            return cached
        record = store.get_record(record_id)
        output = predict_record(record, bundle)
        if task == TASK_AF:
            prediction = {"class_probs": [float(p) for p in output],
                          "predicted_class": int(np.argmax(output))}
        else:
            prediction = {"value": float(output)}
        payload = {"record_id": record_id, "task": task,
                   "prediction": prediction, "cached": False}
        store.put_prediction(record_id, task, bundle.checksum, payload)
        return payload

    @app.post("/api/counterfactuals", status_code=201)
    async def create_counterfactual(request: Request, response: Response):
        body = await request.json()
        record_id = body.get("record_id")
        task = body.get("task")
        if task not in TASKS:
            return _error_response(400, "UNKNOWN_TASK",
                                   f"task must be one of {TASKS}")
        if not record_id or not store.has_record(record_id):
            raise NotFoundError(f"record '{record_id}' not found")
        if task not in bundles:
            return _error_response(409, "BUNDLE_MISSING",
                                   f"no bundle configured for task '{task}'")
        severity = body.get("severity")
        if not isinstance(severity, (int, float)) or not 0 <= severity <= 1:
            return _error_response(422, "INVALID_SEVERITY",
                                   "severity must be a number in [0, 1]")
        direction = Direction.from_dict(body["direction"]) \
            if "direction" in body else positive_direction(task)
        overrides = body.get("overrides") or {}
        cf_request = CfRequest(
            record_id=record_id, task=task, direction=direction,
            severity=float(severity),
            max_iters=int(overrides.get("max_iters", config.max_iters)),
            step_size=float(overrides.get("step_size", config.step_size)),
            target_tolerance=float(overrides.get("target_tolerance",
                                                 config.target_tolerance)),
            include_latents=bool(body.get("include_latents", False)))
        cf_request.validate()

        request_dict = {
            "severity": cf_request.severity,
            "direction": cf_request.direction.to_dict(),
            "max_iters": cf_request.max_iters,
            "step_size": cf_request.step_size,
            "target_tolerance": cf_request.target_tolerance,
            "include_latents": cf_request.include_latents,
        }
        cf_id = runner.cf_id(record_id, task, request_dict)
        if store.has_cf(cf_id):
            cached = store.get_cf(cf_id)
            response.status_code = 200
            return {"cf_id": cf_id, "cached": True,
                    "summary": _summary_of(cached)}
        record = store.get_record(record_id)
        job_id, future = runner.submit(cf_id, record, cf_request)
        try:
            payload = future.result(timeout=config.run_budget_s)
        except FutureTimeout:
            response.status_code = 202
            return {"job_id": job_id, "cf_id": cf_id,
                    "status": "pending", "status_url": f"/api/jobs/{job_id}"}
        except CofeError:
            raise
        return {"cf_id": cf_id, "cached": False, "summary": _summary_of(payload)}

    @app.get("/api/jobs/{job_id}")
    async def job_status(job_id: str):
        return runner.job_status(job_id)

    @app.get("/api/counterfactuals/{cf_id}")
    async def get_counterfactual(cf_id: str):
        return store.get_cf(cf_id)

    @app.get("/api/counterfactuals/{cf_id}/comparison")
    async def get_comparison(cf_id: str):
        result = store.get_cf(cf_id)
        original = store.get_record(result["record_id"])
        reconstruction = store.get_cf_record(cf_id, "reconstruction")
        counterfactual = store.get_cf_record(cf_id, "counterfactual")
        return {
            "cf_id": cf_id,
            "task": result["task"],
            "severity": result["severity"],
            "stop_reason": result["stop_reason"],
            "original": original.to_dict(),
            "reconstruction": reconstruction.to_dict(),
            "counterfactual": counterfactual.to_dict(),
            "saliency": store.get_cf_saliency(cf_id),
            "feature_deltas": result["feature_deltas"],
            "features": result.get("features", {}),
            "predictions": {
                "original": result["original_prediction"],
                "reconstruction": result["reconstruction_prediction"],
                "counterfactual": result["final_prediction"],
                "target": result["target"],
            },
        }

    @app.get("/api/schema")
    async def schema_index():
        return {"schemas": sorted(schemas)}

    @app.get("/api/schema/{name}")
    async def schema_by_name(name: str):
        if name not in schemas:
            raise NotFoundError(f"schema '{name}' not found")
        return schemas[name]

    if config.static_dir and os.path.isdir(config.static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=config.static_dir, html=True),
                  name="ui")

    return app


def _summary_of(payload):
    return {
        "record_id": payload["record_id"],
        "task": payload["task"],
        "severity": payload["severity"],
        "stop_reason": payload["stop_reason"],
        "original_prediction": payload["original_prediction"],
        "final_prediction": payload["final_prediction"],
        "target": payload["target"],
        "accepted_steps": payload["accepted_steps"],
        "recon_rel_rmse": payload["recon_rel_rmse"],
        "morph_rel_rmse": payload["morph_rel_rmse"],
        "feature_deltas": payload["feature_deltas"],
    }
