"""
Shared pytest fixtures for the CoopFlat test suite
"""

import gzip
import struct

import numpy as np
import pytest

from datasets import IMAGE_MAGIC, LABEL_MAGIC, make_synthetic_benchmark
from models.architectures import dense_spec
from models.network import build_model
from schemas.experiment import LandscapeParams, SyntheticParams
from settings import get_settings


def idx_bytes(array: np.ndarray, magic: int) -> bytes:
    """Big-endian IDX container for a uint8 array"""
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Keep logs and caches of every test inside its tmp_path"""
    monkeypatch.setenv("COOPFLAT_LOG_FILE", "")
    monkeypatch.setenv("COOPFLAT_CACHE_DIR", str(tmp_path / "cache"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def small_spec():
    return dense_spec(6, (4,), 3, name="tiny")


@pytest.fixture
def small_model(small_spec):
    return build_model(small_spec, 2, seed=7)


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(3)
    return rng.standard_normal((8, 6)), rng.integers(0, 3, size=8)


@pytest.fixture
def synthetic_params():
    return SyntheticParams(input_dim=8, latent_dim=3, classes=3, noise=0.3, samples=200,
                           test_samples=100, hidden=(8, 4), seed=11)


@pytest.fixture
def synthetic_data(synthetic_params):
    return make_synthetic_benchmark(synthetic_params)


@pytest.fixture
def landscape_params():
    return LandscapeParams()


@pytest.fixture
def mnist_like_files(tmp_path):
    """Tiny gzip IDX image/label pair with all ten digits"""
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(40, 28, 28), dtype=np.uint8)
    labels = np.arange(40, dtype=np.uint8) % 10
    image_path = tmp_path / "images-idx3-ubyte.gz"
    label_path = tmp_path / "labels-idx1-ubyte.gz"
    image_path.write_bytes(gzip.compress(idx_bytes(images, IMAGE_MAGIC)))
    label_path.write_bytes(gzip.compress(idx_bytes(labels, LABEL_MAGIC)))
    return image_path, label_path, images, labels
