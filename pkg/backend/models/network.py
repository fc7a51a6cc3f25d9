"""
Partitioned Multi-Task Network
Shared encoder whose per-layer parameters are evenly split among tasks, with the
sub-layer outputs of all tasks concatenated (task index ascending) as the input of
the next layer, followed by one prediction head per task.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

import tensor_autodiff as ad
from tensor_autodiff import Tensor
from models.architectures import LayerSpec, NetworkSpec, parameter_count

logger = logging.getLogger(__name__)


class PartitionError(ValueError):
    """Layer width not divisible by the task count"""


class TaskIndexError(ValueError):
    """Task id outside [0, T)"""


class PerturbationShapeError(ValueError):
    """Noise arrays do not match a task's encoder parameters"""


@dataclass
class NoiseSample:
    """Per-tensor perturbation arrays, shape-matched to one task's encoder parameters"""
    task: int
    arrays: Tuple[np.ndarray, ...]

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(a))) for a in self.arrays if a.size), default=0.0)


Perturbation = Mapping[int, NoiseSample]


@dataclass
class TaskOutput:
    loss: Tensor
    probabilities: Optional[Tensor] = None


# ============================================================================
# Transient perturbation
# ============================================================================

def check_perturbation(model, perturbation: Optional[Perturbation]) -> None:
    """Every listed task's arrays must match its encoder parameters one-to-one"""
    if not perturbation:
        return
    for task, sample in perturbation.items():
        params = model.encoder_parameters(task)
        if sample.task != task or len(sample.arrays) != len(params):
            raise PerturbationShapeError(
                f"perturbation for task {task}: expected {len(params)} arrays, got {len(sample.arrays)}"
            )
        for param, eps in zip(params, sample.arrays):
            if param.shape != eps.shape:
                raise PerturbationShapeError(
                    f"perturbation for task {task} ({param.name}): shape {eps.shape} != parameter shape {param.shape}"
                )


@contextmanager
def perturbed(model, perturbation: Optional[Perturbation]) -> Iterator[None]:
    """
    Apply theta + eps to the listed tasks' encoder parameters for the block.

    The original value buffers are put back afterwards, so stored parameters
    are bit-identical once the block exits.
    """
    check_perturbation(model, perturbation)
    saved: List[Tuple[Tensor, np.ndarray]] = []
    try:
        for task, sample in (perturbation or {}).items():
            for param, eps in zip(model.encoder_parameters(task), sample.arrays):
                saved.append((param, param.values))
                param.values = param.values + eps
        yield
    finally:
        for param, original in reversed(saved):
            param.values = original


# ============================================================================
# Layer Partition
# ============================================================================

@dataclass
class LayerPartition:
    """Per-task weight and bias tensors of one encoder layer"""
    spec: LayerSpec
    weights: List[Tensor]
    biases: List[Tensor]
    widths: List[int]

    @property
    def kind(self) -> str:
        return self.spec.kind

    def task_parameters(self, task: int) -> List[Tensor]:
        return [self.weights[task], self.biases[task]]


# ============================================================================
# Multi-Task Model
# ============================================================================

class MultiTaskModel:
    """
    Encoder partitions (theta_i slices) plus heads (phi_i).

    parameters(task) returns the task's encoder slices followed by its head,
    layer by layer, weight before bias; the order is stable and used by noise
    sampling, clamping and checkpoints.
    """

    def __init__(self, spec: NetworkSpec, task_count: int,
                 encoder: List[LayerPartition], heads: List[Tuple[Tensor, Tensor]]):
        self.spec = spec
        self.task_count = task_count
        self.encoder = encoder
        self.heads = heads

    # Parameter views -----------------------------------------------------

    def _check_task(self, task: int) -> None:
        if not isinstance(task, (int, np.integer)) or not 0 <= task < self.task_count:
            raise TaskIndexError(f"task {task!r} outside [0, {self.task_count})")

    def encoder_parameters(self, task: int) -> List[Tensor]:
        self._check_task(task)
        params: List[Tensor] = []
        for layer in self.encoder:
            params.extend(layer.task_parameters(task))
        return params

    def head_parameters(self, task: int) -> List[Tensor]:
        self._check_task(task)
        return list(self.heads[task])

    def parameters(self, task: int, encoder_only: bool = False) -> List[Tensor]:
        params = self.encoder_parameters(task)
        if not encoder_only:
            params.extend(self.head_parameters(task))
        return params

    def all_parameters(self) -> List[Tensor]:
        params: List[Tensor] = []
        for task in range(self.task_count):
            params.extend(self.parameters(task))
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.all_parameters())

    def zero_grad(self) -> None:
        for p in self.all_parameters():
            p.zero_grad()

    # Forward -------------------------------------------------------------

    def forward(self, x, task: int, perturbation: Optional[Perturbation] = None,
                frozen_tasks: Iterable[int] = ()) -> Tensor:
        """
        Logits of `task` for the batch x.

        Encoder parameters of tasks in `frozen_tasks` enter as constants, so no
        gradient reaches them. Perturbed values are used for this pass only.
        """
        self._check_task(task)
        frozen = frozenset(frozen_tasks)
        for t in frozen:
            self._check_task(t)
        with perturbed(self, perturbation):
            h = ad.as_tensor(x)
            for layer in self.encoder:
                if layer.kind == "dense" and h.ndim > 2:
                    h = ad.flatten(h)
                outputs = []
                for t in range(self.task_count):
                    weight, bias = layer.weights[t], layer.biases[t]
                    if t in frozen:
                        weight, bias = Tensor.constant(weight.values), Tensor.constant(bias.values)
                    outputs.append(self._sublayer(layer.spec, h, weight, bias))
                h = outputs[0] if len(outputs) == 1 else ad.concat(outputs, axis=1)
            if h.ndim > 2:
                h = ad.flatten(h)
            head_weight, head_bias = self.heads[task]
            return ad.add_bias(ad.matmul(h, head_weight), head_bias)

    @staticmethod
    def _sublayer(spec: LayerSpec, h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        if spec.kind == "conv":
            z = ad.add_bias(ad.conv2d(h, weight, padding=spec.padding), bias)
            z = ad.relu(z)
            return ad.max_pool2(z) if spec.pool else z
        return ad.relu(ad.add_bias(ad.matmul(h, weight), bias))

    def task_loss(self, batch, task: int, perturbation: Optional[Perturbation] = None,
                  frozen_tasks: Iterable[int] = ()) -> TaskOutput:
        """Cross-entropy of `task` on (x, y) plus its softmax predictions"""
        x, y = batch
        logits = self.forward(x, task, perturbation, frozen_tasks)
        return TaskOutput(ad.cross_entropy(logits, y), ad.softmax(logits))

    def predict(self, x, task: int, chunk: int = 1000) -> np.ndarray:
        """Predicted class indices, evaluated without recording a graph"""
        x = np.asarray(x, dtype=np.float64)
        predictions = []
        with ad.no_grad():
            for start in range(0, x.shape[0], chunk):
                logits = self.forward(x[start:start + chunk], task)
                predictions.append(np.argmax(logits.values, axis=1))
        return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)

    def accuracy(self, x, y, task: int) -> float:
        y = np.asarray(y)
        if y.size == 0:
            return 0.0
        return float(np.mean(self.predict(x, task) == y))

    # State ---------------------------------------------------------------

    def state(self) -> Dict[str, np.ndarray]:
        """Named copies of every parameter in partition order"""
        return {p.name: p.values.copy() for p in self.all_parameters()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for p in self.all_parameters():
            values = np.asarray(state[p.name], dtype=np.float64)
            if values.shape != p.shape:
                raise ad.ShapeError(f"load_state: {p.name}: shape {values.shape} != {p.shape}")
            p.values = values.copy()


# ============================================================================
# Construction
# ============================================================================

def _uniform(rng: np.random.Generator, bound: float, shape: Sequence[int]) -> np.ndarray:
    return rng.uniform(-bound, bound, size=tuple(shape))


def build_model(spec: NetworkSpec, task_count: int, seed: int) -> MultiTaskModel:
    """
    Deterministically initialize a partitioned model.

    Every layer width must divide evenly by task_count. Weights and biases are drawn
    from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), layer by layer and task by task.
    """
    if task_count < 1:
        raise PartitionError(f"task_count must be >= 1, got {task_count}")
    for index, layer in enumerate(spec.layers):
        if layer.width % task_count:
            raise PartitionError(
                f"layer {index} ({layer.kind}) width {layer.width} is not divisible by {task_count} tasks"
            )

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    encoder: List[LayerPartition] = []
    for index, layer in enumerate(spec.layers):
        share = layer.width // task_count
        if layer.kind == "conv":
            channels = spec.input_shape[0] if index == 0 else spec.layers[index - 1].width
            fan_in = channels * layer.kernel * layer.kernel
            weight_shape = (share, channels, layer.kernel, layer.kernel)
        else:
            fan_in = spec.input_features(index)
            weight_shape = (fan_in, share)
        bound = 1.0 / np.sqrt(fan_in)
        weights, biases = [], []
        for t in range(task_count):
            weights.append(Tensor(_uniform(rng, bound, weight_shape), requires_grad=True,
                                  name=f"encoder.{index}.task{t}.weight"))
            biases.append(Tensor(_uniform(rng, bound, (share,)), requires_grad=True,
                                 name=f"encoder.{index}.task{t}.bias"))
        encoder.append(LayerPartition(layer, weights, biases, [share] * task_count))

    head_in = spec.input_features(len(spec.layers))
    bound = 1.0 / np.sqrt(head_in)
    heads = []
    for t in range(task_count):
        heads.append((
            Tensor(_uniform(rng, bound, (head_in, spec.num_classes)), requires_grad=True, name=f"head.task{t}.weight"),
            Tensor(_uniform(rng, bound, (spec.num_classes,)), requires_grad=True, name=f"head.task{t}.bias"),
        ))

    model = MultiTaskModel(spec, task_count, encoder, heads)
    expected = parameter_count(spec, task_count)
    if model.parameter_count() != expected:
        raise PartitionError(f"built {model.parameter_count()} parameters, closed form gives {expected}")
    logger.debug(f"Built {spec.name} with {task_count} task(s): {expected} parameters")
    return model
