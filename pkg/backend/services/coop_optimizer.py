"""
Cooperative Flat-Minima Optimizer
Warm-up on the jointly perturbed objective, then alternating per-task optimization
in which every task searches for parameters whose loss stays low under bounded
uniform noise on the other tasks' encoder parameters. Each task's encoder slice is
clamped to an l-inf box of radius b around its value at the start of the outer
iteration.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np

import tensor_autodiff as ad
from tensor_autodiff import Tensor
from models.network import NoiseSample, Perturbation, TaskOutput
from schemas.training import KLMode, RunRecord, TrainConfig, UpdateMode

logger = logging.getLogger(__name__)

NOISE_STREAM = 0x4E01


class NoiseBoundError(ValueError):
    """Noise bound b must be positive"""


class SnapshotMismatchError(ValueError):
    """Snapshot does not match the task's encoder parameters"""


class BoxConstraintViolation(RuntimeError):
    """An encoder coordinate left the box around its snapshot"""


class NonFiniteLossError(RuntimeError):
    """Loss became NaN or infinite"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class CooperativeModel(Protocol):
    task_count: int

    def encoder_parameters(self, task: int) -> List[Tensor]: ...

    def parameters(self, task: int, encoder_only: bool = False) -> List[Tensor]: ...

    def all_parameters(self) -> List[Tensor]: ...

    def task_loss(self, batch, task: int, perturbation: Optional[Perturbation] = None,
                  frozen_tasks: Iterable[int] = ()) -> TaskOutput: ...


# Evaluator returns per-task accuracies for the current model state
Evaluator = Callable[[CooperativeModel], List[float]]


# ============================================================================
# Noise and snapshots
# ============================================================================

def sample_noise(model: CooperativeModel, task: int, b: float, rng: np.random.Generator) -> NoiseSample:
    """epsilon_i ~ U(-b, b) coordinate-wise, shaped like the task's encoder parameters"""
    if not b > 0:
        raise NoiseBoundError(f"sample_noise: bound b must be > 0, got {b!r}")
    arrays = tuple(rng.uniform(-b, b, size=p.shape) for p in model.encoder_parameters(task))
    return NoiseSample(task=task, arrays=arrays)


def sample_others(model: CooperativeModel, task: int, b: float, rng: np.random.Generator) -> Dict[int, NoiseSample]:
    """One perturbation covering every task except `task`, drawn in ascending task order"""
    return {j: sample_noise(model, j, b, rng) for j in range(model.task_count) if j != task}


def sample_all(model: CooperativeModel, b: float, rng: np.random.Generator) -> Dict[int, NoiseSample]:
    return {j: sample_noise(model, j, b, rng) for j in range(model.task_count)}


@dataclass(frozen=True)
class ParamSnapshot:
    """Encoder values of one task at the start of an outer iteration"""
    task: int
    values: Tuple[np.ndarray, ...]

    @classmethod
    def take(cls, model: CooperativeModel, task: int) -> "ParamSnapshot":
        values = []
        for p in model.encoder_parameters(task):
            copy = p.values.copy()
            copy.setflags(write=False)
            values.append(copy)
        return cls(task, tuple(values))

    def max_deviation(self, model: CooperativeModel) -> float:
        params = model.encoder_parameters(self.task)
        return max((float(np.max(np.abs(p.values - s))) for p, s in zip(params, self.values) if s.size), default=0.0)


def clamp_to_snapshot(model: CooperativeModel, task: int, snapshot: ParamSnapshot, b: float) -> int:
    """
    Project the task's encoder parameters into [snapshot - b, snapshot + b].

    Head parameters are never touched. Returns the number of coordinates moved.
    """
    params = model.encoder_parameters(task)
    if snapshot.task != task or len(params) != len(snapshot.values):
        raise SnapshotMismatchError(
            f"clamp_to_snapshot: snapshot of task {snapshot.task} with {len(snapshot.values)} tensors "
            f"does not match task {task} with {len(params)} tensors"
        )
    clamped = 0
    for p, s in zip(params, snapshot.values):
        if p.shape != s.shape:
            raise SnapshotMismatchError(f"clamp_to_snapshot: {p.name} shape {p.shape} != snapshot shape {s.shape}")
        outside = np.abs(p.values - s) > b
        count = int(np.count_nonzero(outside))
        if not count:
            continue
        box = np.clip(p.values, s - b, s + b)
        # s +/- b can round outward; step those coordinates back toward s
        over = np.abs(box - s) > b
        while np.any(over):
            box = np.where(over, np.nextafter(box, s), box)
            over = np.abs(box - s) > b
        p.values = np.where(outside, box, p.values)
        clamped += count
    return clamped


def assert_box(model: CooperativeModel, snapshots: Sequence[ParamSnapshot], b: float, iteration: int) -> None:
    for snapshot in snapshots:
        deviation = snapshot.max_deviation(model)
        if deviation > b:
            raise BoxConstraintViolation(
                f"iteration {iteration}: task {snapshot.task} moved {deviation!r} > b={b!r} from its snapshot"
            )


# ============================================================================
# Losses
# ============================================================================

def empirical_flat_loss(model: CooperativeModel, batch, task: int, noises: Sequence[Optional[Perturbation]],
                        lam: float, kl_mode: KLMode = KLMode.LITERAL) -> Tensor:
    """
    (1/M) sum_j L_i(psi_i, theta_others + eps^(j)) + lam * (1/M) sum_j KL(p^(j) || ref)

    ref is the mean of the M perturbed predictions (literal) or the noise-free
    prediction (vs_clean). Other tasks' encoder parameters enter as constants.
    The KL term is skipped when lam is 0, when literal mode has a single sample,
    and for models without class predictions.
    """
    m = len(noises)
    if m == 0:
        raise ValueError("empirical_flat_loss: needs at least one noise sample (M >= 1)")
    others = [j for j in range(model.task_count) if j != task]
    outputs = [model.task_loss(batch, task, perturbation=noise, frozen_tasks=others) for noise in noises]

    loss = outputs[0].loss
    for out in outputs[1:]:
        loss = loss + out.loss
    loss = loss * (1.0 / m)

    regularize = lam > 0 and outputs[0].probabilities is not None
    if kl_mode is KLMode.LITERAL and m == 1:
        regularize = False
    if not regularize:
        return loss

    if kl_mode is KLMode.LITERAL:
        reference = outputs[0].probabilities
        for out in outputs[1:]:
            reference = reference + out.probabilities
        reference = reference * (1.0 / m)
    else:
        reference = model.task_loss(batch, task, perturbation=None, frozen_tasks=others).probabilities
    kl = ad.kl_divergence(outputs[0].probabilities, reference)
    for out in outputs[1:]:
        kl = kl + ad.kl_divergence(out.probabilities, reference)
    return loss + kl * (lam / m)


def warmup_loss(model: CooperativeModel, batches: Sequence, noises: Sequence[Optional[Perturbation]]) -> Tensor:
    """
    (1/M) sum_j sum_i L_i(theta + eps^(j)): every task's loss under the same paired sample j.
    """
    if not noises:
        raise ValueError("warmup_loss: needs at least one noise sample (M >= 1)")
    total = None
    for noise in noises:
        for task in range(model.task_count):
            term = model.task_loss(batches[task], task, perturbation=noise).loss
            total = term if total is None else total + term
    return total * (1.0 / len(noises))


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """Plain SGD, no momentum; gradients are cleared afterwards"""
    for p in params:
        p.values = p.values - lr * p.grad
        p.zero_grad()


def _check_finite(loss: Tensor, where: str, iteration: int) -> float:
    value = loss.item()
    if not math.isfinite(value):
        logger.error(f"Non-finite loss {value!r} in {where} at iteration {iteration}")
        raise NonFiniteLossError(f"{where}: loss became {value!r} at iteration {iteration}", iteration)
    return value


def _draw(model: CooperativeModel, config: TrainConfig, rng: np.random.Generator,
          task: Optional[int]) -> List[Optional[Perturbation]]:
    """M perturbations of the other tasks (or of all tasks when task is None)"""
    if not config.noise_enabled:
        return [None] * config.M
    if task is None:
        return [sample_all(model, config.b, rng) for _ in range(config.M)]
    return [sample_others(model, task, config.b, rng) for _ in range(config.M)]


def warmup_step(model: CooperativeModel, batches: Sequence, config: TrainConfig,
                rng: np.random.Generator, lr: Optional[float] = None) -> float:
    """One unconstrained SGD step (step size alpha) on the jointly perturbed objective"""
    with ad.graph_scope():
        loss = warmup_loss(model, batches, _draw(model, config, rng, None))
        value = _check_finite(loss, "warm-up", 0)
        ad.backward(loss)
    sgd_step(model.all_parameters(), config.alpha if lr is None else lr)
    return value


def inner_step(model: CooperativeModel, batch, task: int, config: TrainConfig,
               rng: np.random.Generator, iteration: int) -> float:
    """One step of size beta on psi_i only"""
    with ad.graph_scope():
        loss = empirical_flat_loss(model, batch, task, _draw(model, config, rng, task), config.lam, config.kl_mode)
        value = _check_finite(loss, f"task {task} update", iteration)
        ad.backward(loss)
    sgd_step(model.parameters(task), config.beta)
    return value


def probe_losses(model: CooperativeModel, probe_batches: Sequence, tasks: Iterable[int]) -> Dict[int, float]:
    """Noise-free losses on fixed probe batches"""
    with ad.no_grad():
        return {j: model.task_loss(probe_batches[j], j).loss.item() for j in tasks}


# ============================================================================
# Training
# ============================================================================

def noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, NOISE_STREAM]))


def run_warmup(model: CooperativeModel, streams: Sequence[Iterator], config: TrainConfig,
               rng: np.random.Generator) -> List[float]:
    losses = []
    for step in range(config.T_w):
        batches = [next(s) for s in streams]
        losses.append(warmup_step(model, batches, config, rng))
        if step == 0 or (step + 1) % max(1, config.T_w // 5) == 0:
            logger.info(f"Warm-up step {step + 1}/{config.T_w}: loss {losses[-1]:.6f}")
    return losses


def train(model: CooperativeModel, streams: Sequence[Iterator], config: TrainConfig,
          evaluator: Optional[Evaluator] = None, probe_batches: Optional[Sequence] = None) -> Iterator[RunRecord]:
    """
    Warm-up, then the outer loop; yields one RunRecord per outer iteration.

    streams[i] yields task-i batches forever. probe_batches[i] is the fixed batch
    on which the negative-transfer indicator is measured (defaults to the first
    batch drawn for each task after warm-up).
    """
    if len(streams) != model.task_count:
        raise ValueError(f"train: {len(streams)} data streams for {model.task_count} tasks")
    rng = noise_rng(config.seed)
    run_warmup(model, streams, config, rng)

    if probe_batches is None:
        probe_batches = [next(s) for s in streams]
    accuracies: Optional[List[float]] = None
    tasks = range(model.task_count)

    for t in range(1, config.outer_iters + 1):
        started = time.perf_counter()
        snapshots = [ParamSnapshot.take(model, i) for i in tasks]
        clamp_count = 0
        negative = 0

        if config.update_mode is UpdateMode.SIMULTANEOUS:
            batches = [next(s) for s in streams]
            with ad.graph_scope():
                loss = warmup_loss(model, batches, _draw(model, config, rng, None))
                _check_finite(loss, "simultaneous update", t)
                ad.backward(loss)
            sgd_step(model.all_parameters(), config.beta)
            if config.clamp_enabled:
                clamp_count += sum(clamp_to_snapshot(model, i, snapshots[i], config.b) for i in tasks)
        else:
            for i in tasks:
                later = range(i + 1, model.task_count)
                before = probe_losses(model, probe_batches, later)
                for _ in range(config.L):
                    inner_step(model, next(streams[i]), i, config, rng, t)
                    if config.clamp_enabled:
                        clamp_count += clamp_to_snapshot(model, i, snapshots[i], config.b)
                after = probe_losses(model, probe_batches, later)
                negative += sum(1 for j in later if after[j] > before[j])

        if config.clamp_enabled:
            assert_box(model, snapshots, config.b, t)

        with ad.no_grad():
            losses = [model.task_loss(probe_batches[i], i).loss.item() for i in tasks]
        for i, value in enumerate(losses):
            if not math.isfinite(value):
                logger.error(f"Non-finite task {i} loss {value!r} at iteration {t}")
                raise NonFiniteLossError(f"task {i} loss became {value!r} at iteration {t}", t)

        if evaluator is not None and (t % config.eval_every == 0 or t == config.outer_iters):
            accuracies = list(evaluator(model))
            logger.info(f"Iteration {t}: accuracy {', '.join(f'{a:.4f}' for a in accuracies)}")
        if clamp_count:
            logger.debug(f"Iteration {t}: clamped {clamp_count} coordinates")

        coordinates = getattr(model, "coordinates", None)
        record = RunRecord(
            iteration=t,
            losses=losses,
            accuracies=accuracies,
            negative_transfer=negative,
            clamp_count=clamp_count,
            wall_ms=(time.perf_counter() - started) * 1000.0,
            coordinates=list(coordinates) if coordinates is not None else None,
        )
        logger.debug(f"Iteration {t}: losses {losses} negative_transfer={negative}")
        yield record
