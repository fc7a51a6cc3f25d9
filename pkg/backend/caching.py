"""
Caching module for CoopFlat
Internal binary cache of parsed LabeledSets, so MNIST IDX files are decoded once

Layout (little-endian):
    magic        4 bytes  b"CFDS"
    version      u16
    num_classes  u32
    ndim         u32
    shape        ndim x u64   (images shape, first axis = N)
    images       '<f8' x prod(shape)
    labels       '<i8' x N
"""
import hashlib
import logging
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from datasets import LabeledSet, load_mnist

logger = logging.getLogger(__name__)

MAGIC = b"CFDS"
VERSION = 1
_HEAD = struct.Struct("<4sHII")


class CacheFormatError(ValueError):
    """Cache file unreadable or inconsistent"""


class DatasetCache:
    """Encode/decode LabeledSets and keep them under a cache directory"""

    @staticmethod
    def encode(data: LabeledSet) -> bytes:
        shape = data.images.shape
        parts = [
            _HEAD.pack(MAGIC, VERSION, data.num_classes, len(shape)),
            struct.pack(f"<{len(shape)}Q", *shape),
            np.ascontiguousarray(data.images, dtype="<f8").tobytes(),
            np.ascontiguousarray(data.labels, dtype="<i8").tobytes(),
        ]
        return b"".join(parts)

    @staticmethod
    def decode(blob: bytes) -> LabeledSet:
        if len(blob) < _HEAD.size:
            raise CacheFormatError(f"cache blob truncated: {len(blob)} bytes")
        magic, version, num_classes, ndim = _HEAD.unpack_from(blob, 0)
        if magic != MAGIC:
            raise CacheFormatError(f"bad cache magic {magic!r}")
        if version != VERSION:
            raise CacheFormatError(f"unsupported cache version {version}")
        offset = _HEAD.size
        if ndim < 1 or len(blob) < offset + 8 * ndim:
            raise CacheFormatError(f"cache header declares {ndim} dimensions, blob too short")
        shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
        count = int(np.prod(shape, dtype=np.int64))
        n = shape[0]
        if len(blob) != offset + 8 * count + 8 * n:
            raise CacheFormatError(f"cache payload size {len(blob) - offset} does not match shape {shape}")
        images = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        labels = np.frombuffer(blob, dtype="<i8", count=n, offset=offset + 8 * count)
        return LabeledSet(images=images.astype(np.float64), labels=labels.astype(np.int64), num_classes=num_classes)

    @staticmethod
    def write(data: LabeledSet, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(DatasetCache.encode(data))
        os.replace(tmp, path)
        return path

    @staticmethod
    def read(path: Path) -> LabeledSet:
        try:
            blob = Path(path).read_bytes()
        except OSError as e:
            raise CacheFormatError(f"cannot read cache file {path}: {e}") from e
        return DatasetCache.decode(blob)


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cached_mnist(images: Path, labels: Path, cache_dir: Optional[Path], limit: Optional[int] = None) -> LabeledSet:
    """
    load_mnist backed by the cache; entries are keyed by the content hash of both
    source files, so edited files never hit a stale entry.
    """
    if cache_dir is None:
        return load_mnist(images, labels, limit)
    key = hashlib.sha256(f"{file_digest(images)}:{file_digest(labels)}".encode()).hexdigest()[:24]
    path = Path(cache_dir) / f"mnist-{key}.cfds"
    data: Optional[LabeledSet] = None
    if path.exists():
        try:
            data = DatasetCache.read(path)
            logger.info(f"Cache hit for {images.name}: {path}")
        except CacheFormatError as e:
            logger.warning(f"Ignoring unreadable cache entry {path}: {e}")
    if data is None:
        data = load_mnist(images, labels)
        DatasetCache.write(data, path)
        logger.info(f"Cached {len(data)} samples at {path}")
    return data.head(limit) if limit is not None else data
