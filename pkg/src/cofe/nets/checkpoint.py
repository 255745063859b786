"""Binary checkpoint format and the loaded-bundle runtime wrapper.

Layout (all integers little-endian):
    magic   4 bytes  'COFE'
    version u16
    count   u32      number of named models
    per model:
        name_len u16, name bytes (utf-8)
        tensor_count u32
        per tensor: name_len u16, name bytes, rank u32, dims u32 * rank,
                    payload float32 * prod(dims)
    crc32   u32      of every preceding byte

Scalar metadata (latent dim, task code, which path trained the generator,
batchnorm momentum) rides along as the pseudo-model '__meta__' whose tensors
are shape-(1,) floats, keeping the format uniform.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from ..errors import CheckpointError
from .models import TASK_AF, TASK_POTASSIUM, Encoder, Generator, Predictor

MAGIC = b"COFE"
VERSION = 1

META_MODEL = "__meta__"
G_SOURCE_GAN = 0.0
G_SOURCE_AUTOENCODER = 1.0
TASK_CODES = {TASK_AF: 0.0, TASK_POTASSIUM: 1.0}
TASK_FROM_CODE = {v: k for k, v in TASK_CODES.items()}


class ModelBundle:
    """Named models, each a dict of named float32 tensors, plus metadata."""

    def __init__(self, models, meta=None):
        self.models = dict(models)
        if meta is not None:
            self.models[META_MODEL] = {
                k: np.asarray([v], dtype=np.float32) for k, v in meta.items()}

    @property
    def meta(self):
        return {k: float(v[0]) for k, v in self.models.get(META_MODEL, {}).items()}

    def model(self, name):
        return self.models[name]


def _pack_name(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(bundle, path):
    chunks = [MAGIC, struct.pack("<H", VERSION),
              struct.pack("<I", len(bundle.models))]
    for model_name in sorted(bundle.models):
        tensors = bundle.models[model_name]
        chunks.append(_pack_name(model_name))
        chunks.append(struct.pack("<I", len(tensors)))
        for tensor_name in sorted(tensors):
            array = np.ascontiguousarray(tensors[tensor_name], dtype="<f4")
            chunks.append(_pack_name(tensor_name))
            chunks.append(struct.pack("<I", array.ndim))
            chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
            chunks.append(array.tobytes())
    blob = b"".join(chunks)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)
    return zlib.crc32(blob[:-4]) & 0xFFFFFFFF


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint file ends prematurely",
                                  code="TRUNCATED")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def name(self):
        return self.take(self.u16()).decode("utf-8")


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 14:
        raise CheckpointError("file too short to be a checkpoint",
                              code="TRUNCATED")
    body, crc_bytes = blob[:-4], blob[-4:]
    expected = struct.unpack("<I", crc_bytes)[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    reader = _Reader(body)
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file",
                              code="BAD_MAGIC")
    version = reader.u16()
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, reader supports "
                              f"{VERSION}", code="VERSION_MISMATCH")
    if actual != expected:
        raise CheckpointError(
            f"checksum mismatch: stored {expected:#010x}, computed {actual:#010x}",
            code="CHECKSUM_MISMATCH")
    models = {}
    for _ in range(reader.u32()):
        model_name = reader.name()
        tensors = {}
        for _ in range(reader.u32()):
            tensor_name = reader.name()
            rank = reader.u32()
            dims = [reader.u32() for _ in range(rank)]
            count = int(np.prod(dims)) if dims else 1
            payload = reader.take(4 * count)
            tensors[tensor_name] = np.frombuffer(
                payload, dtype="<f4").reshape(dims).copy()
        models[model_name] = tensors
    if reader.pos != len(body):
        raise CheckpointError("trailing bytes after final tensor",
                              code="BAD_MAGIC")
    bundle = ModelBundle(models)
    bundle.checksum = actual
    return bundle


class LoadedBundle:
    """Instantiated networks plus identity, ready for inference."""

    def __init__(self, bundle, checksum=None):
        meta = bundle.meta
        self.meta = meta
        self.checksum = checksum if checksum is not None \
            else getattr(bundle, "checksum", 0)
        self.generator = Generator.from_state(bundle.model("generator"))
        self.encoder = Encoder.from_state(bundle.model("encoder"))
        task = TASK_FROM_CODE.get(meta.get("task_code"), None)
        self.predictor = Predictor.from_state(bundle.model("predictor"), task)
        self.task = self.predictor.task
        self.latent_dim = self.generator.latent_dim
        self.n_leads = self.generator.n_leads
        # loaded bundles are immutable shared reads: freezing the weights
        # keeps inference graphs latent-only
        for model in (self.generator, self.encoder, self.predictor):
            for tensor in model.trainable().values():
                tensor.requires_grad = False

    @classmethod
    def from_path(cls, path):
        return cls(load_checkpoint(path))


def bundle_from_parts(generator, encoder, predictor, task, g_source,
                      discriminator=None, extra_meta=None):
    models = {
        "generator": generator.state(),
        "encoder": encoder.state(),
        "predictor": predictor.state(),
    }
    if discriminator is not None:
        models["discriminator"] = discriminator.state()
    meta = {
        "format_version": float(VERSION),
        "latent_dim": float(generator.latent_dim),
        "n_leads": float(generator.n_leads),
        "task_code": TASK_CODES[task],
        "g_source": g_source,
        "bn_momentum": 0.9,
    }
    if extra_meta:
        meta.update(extra_meta)
    return ModelBundle(models, meta=meta)
