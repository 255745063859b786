"""Plain-file artifact store: content-addressed records, cached predictions,
counterfactual results. Artifacts are JSON documents (records embed their
samples; latents ride as binary float32 sidecars)."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass

import numpy as np

from ..ecg.records import EcgRecord, content_id, record_from_json, record_to_json
from ..errors import NotFoundError

KINDS = ("record", "counterfactual_result", "saliency", "report")


@dataclass
class StoredArtifact:
    artifact_id: str
    kind: str
    created_at: float
    payload_path: str
    parents: list


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}.{threading.get_ident()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


class ArtifactStore:
    def __init__(self, data_dir):
        self.root = str(data_dir)
        for sub in ("records", "cf", "predictions", "reports"):
            os.makedirs(os.path.join(self.root, sub), exist_ok=True)
        self._locks = {}
        self._locks_guard = threading.Lock()

    def _lock(self, artifact_id):
        with self._locks_guard:
            lock = self._locks.get(artifact_id)
            if lock is None:
                lock = self._locks[artifact_id] = threading.Lock()
            return lock

    # -- records -------------------------------------------------------------
    def record_path(self, record_id):
        return os.path.join(self.root, "records", f"{record_id}.json")

    def put_record(self, record):
        """Persist under the content-hash id; idempotent for equal content."""
        rid = content_id(record)
        stored = EcgRecord(
            record_id=rid,
            leads=record.leads,
            sample_rate_hz=record.sample_rate_hz,
            duration_s=record.duration_s,
            provenance=record.provenance,
            parent_id=record.parent_id,
        )
        path = self.record_path(rid)
        with self._lock(rid):
            if not os.path.exists(path):
                _atomic_write(path, record_to_json(stored))
        return rid

    def get_record(self, record_id):
        path = self.record_path(record_id)
        if not os.path.exists(path):
            raise NotFoundError(f"record '{record_id}' not found")
        with open(path) as fh:
            return record_from_json(fh.read())

    def has_record(self, record_id):
        return os.path.exists(self.record_path(record_id))

    # -- prediction cache ------------------------------------------------------
    def _prediction_path(self, record_id, task, bundle_checksum):
        return os.path.join(self.root, "predictions",
                            f"{record_id}-{task}-{bundle_checksum:08x}.json")

    def get_prediction(self, record_id, task, bundle_checksum):
        path = self._prediction_path(record_id, task, bundle_checksum)
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            return json.load(fh)

    def put_prediction(self, record_id, task, bundle_checksum, payload):
        path = self._prediction_path(record_id, task, bundle_checksum)
        _atomic_write(path, json.dumps(payload, sort_keys=True))

    # -- counterfactual results -------------------------------------------------
    def cf_dir(self, cf_id):
        return os.path.join(self.root, "cf", cf_id)

    def has_cf(self, cf_id):
        return os.path.exists(os.path.join(self.cf_dir(cf_id), "result.json"))

    def put_cf(self, cf_id, result_payload, reconstruction, counterfactual,
               saliency_payload, latents=None):
        directory = self.cf_dir(cf_id)
        with self._lock(cf_id):
            os.makedirs(directory, exist_ok=True)
            _atomic_write(os.path.join(directory, "reconstruction.json"),
                          record_to_json(reconstruction))
            _atomic_write(os.path.join(directory, "counterfactual.json"),
                          record_to_json(counterfactual))
            _atomic_write(os.path.join(directory, "saliency.json"),
                          json.dumps(saliency_payload, sort_keys=True))
            if latents is not None:
                arr = np.asarray(latents, dtype="<f4")
                tmp = os.path.join(directory, "latents.f32.tmp")
                with open(tmp, "wb") as fh:
                    fh.write(arr.tobytes())
                os.replace(tmp, os.path.join(directory, "latents.f32"))
                result_payload = dict(result_payload)
                result_payload["latents_shape"] = list(arr.shape)
            _atomic_write(os.path.join(directory, "result.json"),
                          json.dumps(result_payload, sort_keys=True))
        return cf_id

    def get_cf(self, cf_id):
        path = os.path.join(self.cf_dir(cf_id), "result.json")
        if not os.path.exists(path):
            raise NotFoundError(f"counterfactual '{cf_id}' not found")
        with open(path) as fh:
            return json.load(fh)

    def get_cf_record(self, cf_id, which):
        path = os.path.join(self.cf_dir(cf_id), f"{which}.json")
        if not os.path.exists(path):
            raise NotFoundError(f"{which} for '{cf_id}' not found")
        with open(path) as fh:
            return record_from_json(fh.read())

    def get_cf_saliency(self, cf_id):
        path = os.path.join(self.cf_dir(cf_id), "saliency.json")
        if not os.path.exists(path):
            raise NotFoundError(f"saliency for '{cf_id}' not found")
        with open(path) as fh:
            return json.load(fh)

    # -- reports ------------------------------------------------------------------
    def put_report(self, report_id, payload):
        _atomic_write(os.path.join(self.root, "reports", f"{report_id}.json"),
                      json.dumps(payload, sort_keys=True))

    def get_report(self, report_id):
        path = os.path.join(self.root, "reports", f"{report_id}.json")
        if not os.path.exists(path):
            raise NotFoundError(f"report '{report_id}' not found")
        with open(path) as fh:
            return json.load(fh)

    # -- listing --------------------------------------------------------------------
    def list_artifacts(self):
        out = []
        records_dir = os.path.join(self.root, "records")
        for name in sorted(os.listdir(records_dir)):
            if name.endswith(".json"):
                path = os.path.join(records_dir, name)
                out.append(StoredArtifact(name[:-5], "record",
                                          os.path.getmtime(path), path, []))
        cf_root = os.path.join(self.root, "cf")
        for cf_id in sorted(os.listdir(cf_root)):
            path = os.path.join(cf_root, cf_id, "result.json")
            if os.path.exists(path):
                with open(path) as fh:
                    parents = [json.load(fh).get("record_id")]
                out.append(StoredArtifact(cf_id, "counterfactual_result",
                                          os.path.getmtime(path), path, parents))
        for name in sorted(os.listdir(os.path.join(self.root, "reports"))):
            if name.endswith(".json"):
                path = os.path.join(self.root, "reports", name)
                out.append(StoredArtifact(name[:-5], "report",
                                          os.path.getmtime(path), path, []))
        return out


def utcnow():
    return time.time()
