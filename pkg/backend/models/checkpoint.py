"""
Model checkpoint file
Layout (all integers little-endian):

    magic         4 bytes  b"CFCK"
    version       u16
    spec hash     32 bytes sha256 of the NetworkSpec JSON
    task count    u32
    manifest len  u32
    manifest      UTF-8 JSON: [{"name": ..., "shape": [...]}, ...] in partition order
    payload       '<f8' values of every tensor, in manifest order
"""

import logging
import os
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError

from models.architectures import NetworkSpec
from models.network import MultiTaskModel, build_model

logger = logging.getLogger(__name__)

MAGIC = b"CFCK"
VERSION = 1
_HEADER = struct.Struct("<4sH32sII")


class CheckpointError(ValueError):
    """Unreadable or mismatched checkpoint file"""


class ManifestEntry(BaseModel):
    name: str
    shape: Tuple[int, ...]


_MANIFEST = TypeAdapter(List[ManifestEntry])


def encode_checkpoint(model: MultiTaskModel) -> bytes:
    params = model.all_parameters()
    manifest = _MANIFEST.dump_json([ManifestEntry(name=p.name, shape=p.shape) for p in params])
    header = _HEADER.pack(MAGIC, VERSION, model.spec.spec_hash(), model.task_count, len(manifest))
    payload = b"".join(np.ascontiguousarray(p.values, dtype="<f8").tobytes() for p in params)
    return header + manifest + payload


def decode_checkpoint(blob: bytes, spec: NetworkSpec) -> MultiTaskModel:
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"checkpoint truncated: {len(blob)} bytes, header needs {_HEADER.size}")
    magic, version, spec_hash, task_count, manifest_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (reader supports {VERSION})")
    if spec_hash != spec.spec_hash():
        raise CheckpointError(f"checkpoint was written for a different network spec than '{spec.name}'")

    offset = _HEADER.size
    try:
        manifest = _MANIFEST.validate_json(blob[offset:offset + manifest_len])
    except ValidationError as e:
        raise CheckpointError(f"checkpoint manifest unreadable: {e}") from e
    offset += manifest_len

    # seed is irrelevant, every value is overwritten below
    model = build_model(spec, task_count, seed=0)
    params = model.all_parameters()
    if [(e.name, tuple(e.shape)) for e in manifest] != [(p.name, p.shape) for p in params]:
        raise CheckpointError("checkpoint manifest does not match the model partition layout")

    for entry, param in zip(manifest, params):
        count = int(np.prod(entry.shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"checkpoint payload truncated in {entry.name}")
        param.values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(entry.shape)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"checkpoint has {len(blob) - offset} unexpected trailing bytes")
    return model


def save_checkpoint(model: MultiTaskModel, path: Path) -> Path:
    """Write atomically next to the target, then rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(model))
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path} ({model.parameter_count()} parameters)")
    return path


def load_checkpoint(path: Path, spec: NetworkSpec) -> MultiTaskModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob, spec)
