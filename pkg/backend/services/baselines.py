"""
Ablation baselines
Each baseline is the cooperative trainer run with a reduced configuration:

    vanilla      alternating updates only (no noise, no KL, no clamp)
    no_reg       full method with lambda = 0
    joint        one SGD stream on the summed task losses (no noise, no clamp, no warm-up)
    independent  one full-width single-task model per task, each trained like joint
"""

import logging
from typing import Callable, Iterator, List, Optional, Sequence

import numpy as np

from models.architectures import NetworkSpec
from models.network import MultiTaskModel, build_model
from schemas.training import BaselineKind, RunRecord, TrainConfig, UpdateMode
from services.coop_optimizer import CooperativeModel, Evaluator, train

logger = logging.getLogger(__name__)


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 32-bit seed for the stream named by `tags`"""
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def reduce_config(kind: BaselineKind, config: TrainConfig) -> TrainConfig:
    if kind is BaselineKind.VANILLA:
        return config.with_updates(noise_enabled=False, clamp_enabled=False, lam=0.0, M=1)
    if kind is BaselineKind.NO_REG:
        return config.with_updates(lam=0.0)
    if kind in (BaselineKind.JOINT, BaselineKind.INDEPENDENT):
        return config.with_updates(update_mode=UpdateMode.SIMULTANEOUS, noise_enabled=False,
                                   clamp_enabled=False, lam=0.0, M=1, T_w=0)
    raise ValueError(f"unknown baseline {kind!r}")


def train_joint(model: CooperativeModel, streams: Sequence[Iterator], config: TrainConfig,
                evaluator: Optional[Evaluator] = None, probe_batches: Optional[Sequence] = None) -> Iterator[RunRecord]:
    return train(model, streams, reduce_config(BaselineKind.JOINT, config), evaluator, probe_batches)


def train_vanilla(model: CooperativeModel, streams: Sequence[Iterator], config: TrainConfig,
                  evaluator: Optional[Evaluator] = None, probe_batches: Optional[Sequence] = None) -> Iterator[RunRecord]:
    return train(model, streams, reduce_config(BaselineKind.VANILLA, config), evaluator, probe_batches)


def train_no_reg(model: CooperativeModel, streams: Sequence[Iterator], config: TrainConfig,
                 evaluator: Optional[Evaluator] = None, probe_batches: Optional[Sequence] = None) -> Iterator[RunRecord]:
    return train(model, streams, reduce_config(BaselineKind.NO_REG, config), evaluator, probe_batches)


# ============================================================================
# Independent
# ============================================================================

def accuracy_evaluator(test_sets: Sequence) -> Callable[[MultiTaskModel], List[float]]:
    """Per-task test accuracy; test_sets[i] is evaluated on model task i"""
    def evaluate(model: MultiTaskModel) -> List[float]:
        return [model.accuracy(s.images, s.labels, i) for i, s in enumerate(test_sets)]
    return evaluate


def independent_models(spec: NetworkSpec, task_count: int, seed: int) -> List[MultiTaskModel]:
    """One single-task model at full nominal width per task"""
    return [build_model(spec, 1, derive_seed(seed, 0x1D, task)) for task in range(task_count)]


def train_independent(spec: NetworkSpec, train_sets: Sequence, test_sets: Optional[Sequence], config: TrainConfig,
                      stream_factory: Callable[[object, int], Iterator]) -> List[Iterator[RunRecord]]:
    """
    One record stream per task. Model i only ever sees train_sets[i]; its data
    stream comes from stream_factory(train_sets[i], i).
    """
    reduced = reduce_config(BaselineKind.INDEPENDENT, config)
    models = independent_models(spec, len(train_sets), config.seed)
    total = sum(m.parameter_count() for m in models)
    logger.info(f"Independent baseline: {len(models)} models, {total} parameters in total")
    runs = []
    for task, (model, data) in enumerate(zip(models, train_sets)):
        evaluator = accuracy_evaluator([test_sets[task]]) if test_sets is not None else None
        runs.append(train(model, [stream_factory(data, task)], reduced, evaluator))
    return runs


def merge_records(runs: Sequence[Iterator[RunRecord]]) -> Iterator[RunRecord]:
    """Zip single-task record streams into multi-task records, task order preserved"""
    for records in zip(*runs):
        accuracies = None
        if all(r.accuracies is not None for r in records):
            accuracies = [r.accuracies[0] for r in records]
        yield RunRecord(
            iteration=records[0].iteration,
            losses=[r.losses[0] for r in records],
            accuracies=accuracies,
            negative_transfer=0,
            clamp_count=0,
            wall_ms=sum(r.wall_ms for r in records),
        )
