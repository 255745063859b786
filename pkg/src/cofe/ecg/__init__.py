"""ECG domain: record types, file formats, synthetic corpus generation."""

from .corpus import DEFAULT_RANGES, CorpusHandle, CorpusSpec, build_corpus, load_corpus
from .records import (
    EcgRecord,
    content_id,
    read_record,
    record_from_csv,
    record_from_json,
    record_to_csv,
    record_to_json,
    validate_record,
    write_record,
)
from .synth import (
    DEFAULT_RULE,
    GroundTruth,
    LabelRule,
    SynthParams,
    ground_truth,
    label_synthetic,
    synth_ecg,
)

__all__ = [
    "DEFAULT_RANGES", "CorpusHandle", "CorpusSpec", "build_corpus",
    "load_corpus", "EcgRecord", "content_id", "read_record",
    "record_from_csv", "record_from_json", "record_to_csv", "record_to_json",
    "validate_record", "write_record", "DEFAULT_RULE", "GroundTruth",
    "LabelRule", "SynthParams", "ground_truth", "label_synthetic", "synth_ecg",
]
