"""
Datasets for CoopFlat
MNIST IDX parsing, the even/odd two-task split, a synthetic two-task generator
with a shared latent factor, and seeded mini-batch streams.
"""

import gzip
import logging
import struct
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from schemas.experiment import SyntheticParams

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_PAYLOAD = 2 ** 31 - 1
_GZIP_HEADER = b"\x1f\x8b"


# ============================================================================
# Errors
# ============================================================================

class IdxFormatError(ValueError):
    """Malformed IDX container"""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxDimensionError(IdxFormatError):
    pass


class IdxTrailingBytesError(IdxFormatError):
    pass


class LabelError(ValueError):
    """Label outside the range the operation accepts"""


class SyntheticParamsError(ValueError):
    """Degenerate synthetic generator parameters"""


# ============================================================================
# Labeled sets
# ============================================================================

class LabeledSet(BaseModel):
    """Images (N, ...) as float64 and integer labels (N,)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    images: np.ndarray
    labels: np.ndarray
    num_classes: int = 10

    @field_validator("images")
    @classmethod
    def images_float(cls, v):
        v = np.asarray(v, dtype=np.float64).view()
        v.setflags(write=False)
        return v

    @field_validator("labels")
    @classmethod
    def labels_int(cls, v):
        v = np.asarray(v, dtype=np.int64).view()
        v.setflags(write=False)
        return v

    @model_validator(mode="after")
    def lengths_match(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"images ({self.images.shape[0]}) and labels ({self.labels.shape[0]}) differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        return self

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def head(self, n: int) -> "LabeledSet":
        return LabeledSet(images=self.images[:n], labels=self.labels[:n], num_classes=self.num_classes)


class TaskSplit(BaseModel):
    """Per-task sets with remapped labels and the digit -> (task, class) map"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    tasks: Tuple[LabeledSet, ...]
    digit_map: Dict[int, Tuple[int, int]]


# ============================================================================
# IDX parsing
# ============================================================================

def parse_idx(blob: bytes) -> np.ndarray:
    """
    Decode an IDX container (plain or gzip) into a numpy array.

    Images (magic 0x803) come back as float64 (N, 1, rows, cols) scaled to [0, 1];
    labels (magic 0x801) as int64 (N,).
    """
    if blob[:2] == _GZIP_HEADER:
        try:
            blob = gzip.decompress(blob)
        except (OSError, EOFError) as e:
            raise IdxTruncatedError(f"IDX: gzip stream is corrupt: {e}") from e

    if len(blob) < 4:
        raise IdxTruncatedError(f"IDX: {len(blob)} bytes is shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IMAGE_MAGIC:
        ndim = 3
    elif magic == LABEL_MAGIC:
        ndim = 1
    else:
        raise IdxMagicError(f"IDX: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x} or 0x{LABEL_MAGIC:08x}")

    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxTruncatedError(f"IDX: header needs {header_len} bytes, found {len(blob)}")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])

    expected = 1
    for d in dims:
        expected *= d
    if expected > MAX_PAYLOAD:
        raise IdxDimensionError(f"IDX: dimensions {dims} overflow the payload size limit ({expected} > {MAX_PAYLOAD} bytes)")
    payload = len(blob) - header_len
    if payload < expected:
        raise IdxTruncatedError(f"IDX: payload has {payload} bytes, dimensions {dims} need {expected}")
    if payload > expected:
        raise IdxTrailingBytesError(f"IDX: {payload - expected} trailing bytes after payload of dimensions {dims}")

    raw = np.frombuffer(blob, dtype=np.uint8, count=expected, offset=header_len)
    if ndim == 1:
        return raw.astype(np.int64)
    n, rows, cols = dims
    return (raw.astype(np.float64) / 255.0).reshape(n, 1, rows, cols)


def read_idx(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IdxFormatError(f"cannot read IDX file {path}: {e}") from e
    try:
        return parse_idx(blob)
    except IdxFormatError as e:
        raise type(e)(f"{path}: {e}") from e


def load_mnist(images: Path, labels: Path, limit: Optional[int] = None) -> LabeledSet:
    x = read_idx(images)
    y = read_idx(labels)
    if x.ndim != 4 or y.ndim != 1:
        raise IdxFormatError(f"{images} / {labels}: expected an image file and a label file")
    if limit is not None:
        x, y = x[:limit], y[:limit]
    logger.info(f"Loaded {len(y)} MNIST samples from {images.name}")
    return LabeledSet(images=x, labels=y, num_classes=10)


# ============================================================================
# Even / odd split
# ============================================================================

def even_odd_map() -> Dict[int, Tuple[int, int]]:
    """digit d -> (0, d/2) for even d, (1, (d-1)/2) for odd d"""
    return {d: (d % 2, d // 2) for d in range(10)}


def split_even_odd(data: LabeledSet) -> TaskSplit:
    labels = data.labels
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        bad = labels[(labels < 0) | (labels > 9)][0]
        raise LabelError(f"split_even_odd: label {int(bad)} outside [0, 10)")
    tasks = []
    for parity in (0, 1):
        mask = labels % 2 == parity
        tasks.append(LabeledSet(images=data.images[mask], labels=labels[mask] // 2, num_classes=5))
    return TaskSplit(tasks=tuple(tasks), digit_map=even_odd_map())


# ============================================================================
# Synthetic two-task generator
# ============================================================================

class SyntheticTwoTask(BaseModel):
    """
    Generative model: z ~ N(0, I_k), x = A z + noise * n with n ~ N(0, I_d),
    y_t = argmax(U_t z). Both tasks read the same latent z, so features
    useful to one task are useful to the other.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    params: SyntheticParams
    mixing: np.ndarray
    readouts: Tuple[np.ndarray, np.ndarray]

    @classmethod
    def from_params(cls, params: SyntheticParams) -> "SyntheticTwoTask":
        if params.latent_dim > params.input_dim:
            raise SyntheticParamsError(
                f"latent_dim {params.latent_dim} must not exceed input_dim {params.input_dim}"
            )
        if params.classes < 2 or params.latent_dim < 1:
            raise SyntheticParamsError(f"degenerate synthetic dimensions: {params}")
        rng = np.random.default_rng(np.random.SeedSequence([params.seed, 0x5717]))
        mixing = rng.standard_normal((params.input_dim, params.latent_dim))
        readouts = (rng.standard_normal((params.classes, params.latent_dim)),
                    rng.standard_normal((params.classes, params.latent_dim)))
        return cls(params=params, mixing=mixing, readouts=readouts)

    def sample(self, n: int, stream: int) -> Tuple[np.ndarray, np.ndarray, Tuple[np.ndarray, np.ndarray]]:
        rng = np.random.default_rng(np.random.SeedSequence([self.params.seed, 0xDA7A, stream]))
        z = rng.standard_normal((n, self.params.latent_dim))
        x = z @ self.mixing.T + self.params.noise * rng.standard_normal((n, self.params.input_dim))
        labels = tuple(np.argmax(z @ u.T, axis=1) for u in self.readouts)
        return x, z, labels

    def posterior_labels(self, x: np.ndarray, draws: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Bayes-optimal predictions: posterior of z given x is Gaussian, class probabilities by sampling"""
        a, sigma2 = self.mixing, self.params.noise ** 2
        k = self.params.latent_dim
        if sigma2 == 0:
            z_mean = x @ np.linalg.pinv(a).T
            cov_chol = np.zeros((k, k))
        else:
            precision = np.eye(k) + a.T @ a / sigma2
            cov = np.linalg.inv(precision)
            z_mean = x @ a @ cov / sigma2
            cov_chol = np.linalg.cholesky(cov)
        predictions = []
        for u in self.readouts:
            counts = np.zeros((x.shape[0], self.params.classes))
            rows = np.arange(x.shape[0])
            for _ in range(draws):
                z = z_mean + rng.standard_normal(z_mean.shape) @ cov_chol.T
                np.add.at(counts, (rows, np.argmax(z @ u.T, axis=1)), 1.0)
            predictions.append(np.argmax(counts, axis=1))
        return predictions[0], predictions[1]


def gen_synthetic(params: SyntheticParams, n: Optional[int] = None, stream: int = 0) -> Tuple[LabeledSet, LabeledSet]:
    """Two LabeledSets sharing inputs x, labelled by the two task readouts"""
    generator = SyntheticTwoTask.from_params(params)
    x, _, (y1, y2) = generator.sample(params.samples if n is None else n, stream)
    return (LabeledSet(images=x, labels=y1, num_classes=params.classes),
            LabeledSet(images=x, labels=y2, num_classes=params.classes))


def make_synthetic_benchmark(params: SyntheticParams) -> Tuple[Tuple[LabeledSet, LabeledSet], Tuple[LabeledSet, LabeledSet]]:
    """Train and test splits drawn from independent streams of one generator"""
    return (gen_synthetic(params, params.samples, stream=0),
            gen_synthetic(params, params.test_samples, stream=1))


def bayes_error(params: SyntheticParams, samples: int = 2000, draws: int = 64, seed: int = 0) -> Tuple[float, float]:
    """Monte-Carlo error rate of the Bayes classifier for each task"""
    generator = SyntheticTwoTask.from_params(params)
    x, _, (y1, y2) = generator.sample(samples, stream=0xBA7E5)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7E5]))
    p1, p2 = generator.posterior_labels(x, draws, rng)
    return float(np.mean(p1 != y1)), float(np.mean(p2 != y2))


# ============================================================================
# Batching
# ============================================================================

class BatchStream:
    """
    Endless mini-batches over a LabeledSet.

    Each epoch uses a fresh permutation derived from (seed, epoch); the final
    partial batch of an epoch is kept.
    """

    def __init__(self, data: LabeledSet, batch_size: int, seed: int):
        if len(data) == 0:
            raise LabelError("BatchStream needs a non-empty dataset")
        self.data = data
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self._order = self._permutation(0)
        self._cursor = 0

    def _permutation(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
        return rng.permutation(len(self.data))

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return self

    def __next__(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._cursor >= len(self._order):
            self.epoch += 1
            logger.debug(f"BatchStream seed={self.seed} starting epoch {self.epoch}")
            self._order = self._permutation(self.epoch)
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += len(idx)
        return self.data.images[idx], self.data.labels[idx]

    def batches_per_epoch(self) -> int:
        return -(-len(self.data) // self.batch_size)
