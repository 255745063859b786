"""ECG record representation and JSON/CSV file formats.

JSON is the lossless interchange format; CSV round-trips samples up to
6-significant-digit decimal formatting. Both carry values in millivolts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import RecordFormatError, ValidationError

PROVENANCES = ("measured", "synthetic", "reconstructed", "counterfactual")


@dataclass
class EcgRecord:
    """Multi-lead fixed-rate waveform.

    `leads` is an ordered list of (lead_name, samples-in-mV) pairs; every lead
    must hold exactly round(sample_rate_hz * duration_s) finite samples.
    """

    record_id: str
    leads: list = field(default_factory=list)
    sample_rate_hz: int = 250
    duration_s: float = 10.0
    provenance: str = "synthetic"
    parent_id: str | None = None

    def __post_init__(self):
        self.leads = [(str(name), np.asarray(mv, dtype=np.float64))
                      for name, mv in self.leads]
        validate_record(self)

    @property
    def n_samples(self):
        return int(round(self.sample_rate_hz * self.duration_s))

    @property
    def lead_names(self):
        return [name for name, _ in self.leads]

    def lead(self, name):
        for lead_name, mv in self.leads:
            if lead_name == name:
                return mv
        raise KeyError(name)

    def signal_matrix(self):
        """(n_leads, n_samples) float array in lead order."""
        return np.stack([mv for _, mv in self.leads])

    def to_dict(self):
        return {
            "record_id": self.record_id,
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
            "provenance": self.provenance,
            "parent_id": self.parent_id,
            "leads": [{"name": name, "mv": [float(v) for v in mv]}
                      for name, mv in self.leads],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            leads = [(lead["name"], lead["mv"]) for lead in d["leads"]]
            return cls(
                record_id=str(d["record_id"]),
                leads=leads,
                sample_rate_hz=int(d["sample_rate_hz"]),
                duration_s=float(d["duration_s"]),
                provenance=str(d["provenance"]),
                parent_id=d.get("parent_id"),
            )
        except (KeyError, TypeError) as exc:
            raise RecordFormatError(f"missing or malformed field: {exc}",
                                    code="MALFORMED_HEADER") from exc


def validate_record(record):
    if record.sample_rate_hz <= 0:
        raise ValidationError("sample_rate_hz", "must be positive")
    if record.duration_s <= 0:
        raise ValidationError("duration_s", "must be positive")
    if record.provenance not in PROVENANCES:
        raise ValidationError("provenance", f"must be one of {PROVENANCES}")
    if not record.leads:
        raise ValidationError("leads", "at least one lead required")
    expected = record.n_samples
    names = set()
    for name, mv in record.leads:
        if name in names:
            raise ValidationError("leads", f"duplicate lead name '{name}'")
        names.add(name)
        if len(mv) != expected:
            raise RecordFormatError(
                f"lead '{name}' has {len(mv)} samples, expected {expected}",
                code="SAMPLE_COUNT_MISMATCH")
        if not np.all(np.isfinite(mv)):
            raise RecordFormatError(
                f"lead '{name}' contains non-finite samples",
                code="NON_FINITE_VALUES")


def content_id(record):
    """Stable content hash over waveform and acquisition metadata.

    Excludes record_id/provenance/parent_id so re-uploads of the same signal
    deduplicate to one artifact.
    """
    h = hashlib.sha256()
    h.update(f"{record.sample_rate_hz}|{record.duration_s}".encode())
    for name, mv in record.leads:
        h.update(name.encode())
        h.update(np.asarray(mv, dtype=np.float64).tobytes())
    return "r" + h.hexdigest()[:16]


# -- JSON format ---------------------------------------------------------------

def record_to_json(record):
    return json.dumps(record.to_dict(), sort_keys=True)


def record_from_json(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"invalid JSON: {exc}", code="BAD_FORMAT") from exc
    if not isinstance(d, dict):
        raise RecordFormatError("top-level JSON must be an object",
                                code="BAD_FORMAT")
    return EcgRecord.from_dict(d)


# -- CSV format ----------------------------------------------------------------
# Header comment lines, then lead names, then one row per sample:
#   # sample_rate_hz=250
#   # duration_s=10.0
#   II,V1
#   0.012,0.03
# Optional comments (# record_id=, # provenance=, # parent_id=) preserve
# identity across round trips; values are written with 6 significant digits.

def record_to_csv(record):
    lines = [
        f"# sample_rate_hz={record.sample_rate_hz}",
        f"# duration_s={record.duration_s}",
        f"# record_id={record.record_id}",
        f"# provenance={record.provenance}",
    ]
    if record.parent_id:
        lines.append(f"# parent_id={record.parent_id}")
    lines.append(",".join(name for name, _ in record.leads))
    matrix = record.signal_matrix()
    for row in matrix.T:
        lines.append(",".join(f"{v:.6g}" for v in row))
    return "\n".join(lines) + "\n"


def record_from_csv(text, default_id="uploaded"):
    headers = {}
    lead_names = None
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise RecordFormatError(f"malformed header line: {line!r}",
                                        code="MALFORMED_HEADER")
            key, value = body.split("=", 1)
            headers[key.strip()] = value.strip()
        elif lead_names is None:
            lead_names = [c.strip() for c in line.split(",")]
        else:
            rows.append(line.split(","))
    if "sample_rate_hz" not in headers or "duration_s" not in headers:
        raise RecordFormatError(
            "missing required header (# sample_rate_hz=..., # duration_s=...)",
            code="MALFORMED_HEADER")
    if lead_names is None or not rows:
        raise RecordFormatError("no lead data found", code="MALFORMED_HEADER")
    try:
        rate = int(headers["sample_rate_hz"])
        duration = float(headers["duration_s"])
    except ValueError as exc:
        raise RecordFormatError(f"non-numeric header value: {exc}",
                                code="MALFORMED_HEADER") from exc
    try:
        matrix = np.asarray([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise RecordFormatError(f"non-numeric sample value: {exc}",
                                code="BAD_FORMAT") from exc
    if matrix.shape[1] != len(lead_names):
        raise RecordFormatError(
            f"row width {matrix.shape[1]} != {len(lead_names)} lead names",
            code="BAD_FORMAT")
    return EcgRecord(
        record_id=headers.get("record_id", default_id),
        leads=[(name, matrix[:, i]) for i, name in enumerate(lead_names)],
        sample_rate_hz=rate,
        duration_s=duration,
        provenance=headers.get("provenance", "measured"),
        parent_id=headers.get("parent_id") or None,
    )


def write_record(record, path):
    path = str(path)
    if path.endswith(".csv"):
        payload = record_to_csv(record)
    else:
        payload = record_to_json(record)
    with open(path, "w") as fh:
        fh.write(payload)


def read_record(path):
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    stem = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    if path.endswith(".csv"):
        return record_from_csv(text, default_id=stem)
    return record_from_json(text)
