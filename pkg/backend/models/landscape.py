"""
Two-coordinate cooperative landscape
Task i owns coordinate theta_i. Each task loss has two wells of equal depth:

    L_i = -A * (g_s,i + g_f - g_s,i * g_f)

g_f is an isotropic broad well around the flat center. g_s,i sits on the sharp
center and is broad along the task's own coordinate but narrow (width s) along
the other task's coordinate, i.e. exactly along the direction that gets
perturbed while task i is optimized.
"""

import logging
from typing import Iterable, List, Optional, Tuple

import numpy as np

import tensor_autodiff as ad
from tensor_autodiff import Tensor
from models.network import Perturbation, TaskIndexError, TaskOutput, perturbed
from schemas.experiment import LandscapeParams

logger = logging.getLogger(__name__)


def landscape_losses(theta1, theta2, params: LandscapeParams) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (L_1, L_2) over broadcastable coordinate arrays"""
    t1 = np.asarray(theta1, dtype=np.float64)
    t2 = np.asarray(theta2, dtype=np.float64)
    (a1, a2), (c1, c2) = params.sharp_center, params.flat_center
    wide = 2.0 * params.flat_width ** 2
    narrow = 2.0 * params.sharp_width ** 2

    g_f = np.exp(-((t1 - c1) ** 2 + (t2 - c2) ** 2) / wide)
    g_s1 = np.exp(-(t1 - a1) ** 2 / wide - (t2 - a2) ** 2 / narrow)
    g_s2 = np.exp(-(t1 - a1) ** 2 / narrow - (t2 - a2) ** 2 / wide)
    depth = params.depth
    return (-depth * (g_s1 + g_f - g_s1 * g_f),
            -depth * (g_s2 + g_f - g_s2 * g_f))


class LandscapeModel:
    """
    Cooperative model over two scalar coordinates, no heads.

    Satisfies the same interface as MultiTaskModel so the optimizer and the
    baselines run on it unchanged; batches are ignored.
    """

    task_count = 2

    def __init__(self, params: LandscapeParams, start: Tuple[float, float]):
        self.params = params
        self.theta = [
            Tensor(np.array([start[0]]), requires_grad=True, name="theta.task0"),
            Tensor(np.array([start[1]]), requires_grad=True, name="theta.task1"),
        ]

    @classmethod
    def near_sharp(cls, params: LandscapeParams, seed: int) -> "LandscapeModel":
        """Start at the sharp center offset by U(-jitter, jitter) per coordinate"""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A4D]))
        offset = rng.uniform(-params.init_jitter, params.init_jitter, size=2)
        a = np.asarray(params.sharp_center, dtype=np.float64)
        return cls(params, tuple(a + offset))

    def _check_task(self, task: int) -> None:
        if task not in (0, 1):
            raise TaskIndexError(f"task {task!r} outside [0, 2)")

    def encoder_parameters(self, task: int) -> List[Tensor]:
        self._check_task(task)
        return [self.theta[task]]

    def parameters(self, task: int, encoder_only: bool = False) -> List[Tensor]:
        return self.encoder_parameters(task)

    def all_parameters(self) -> List[Tensor]:
        return list(self.theta)

    def zero_grad(self) -> None:
        for p in self.theta:
            p.zero_grad()

    @property
    def coordinates(self) -> List[float]:
        return [float(p.values[0]) for p in self.theta]

    def task_loss(self, batch, task: int, perturbation: Optional[Perturbation] = None,
                  frozen_tasks: Iterable[int] = ()) -> TaskOutput:
        self._check_task(task)
        frozen = frozenset(frozen_tasks)
        p = self.params
        with perturbed(self, perturbation):
            t1, t2 = (Tensor.constant(th.values) if k in frozen else th for k, th in enumerate(self.theta))
            d1s, d2s = t1 - p.sharp_center[0], t2 - p.sharp_center[1]
            d1f, d2f = t1 - p.flat_center[0], t2 - p.flat_center[1]
            wide = -1.0 / (2.0 * p.flat_width ** 2)
            narrow = -1.0 / (2.0 * p.sharp_width ** 2)

            g_f = ad.exp((d1f * d1f + d2f * d2f) * wide)
            if task == 0:
                g_s = ad.exp(d1s * d1s * wide + d2s * d2s * narrow)
            else:
                g_s = ad.exp(d1s * d1s * narrow + d2s * d2s * wide)
            loss = ad.total((g_s + g_f - g_s * g_f) * (-p.depth))
        return TaskOutput(loss, None)

    def losses(self) -> Tuple[float, float]:
        l1, l2 = landscape_losses(*self.coordinates, self.params)
        return float(l1), float(l2)

    def in_flat_basin(self, radius: Optional[float] = None) -> bool:
        """Closer to the flat center than to the sharp one (or within `radius` of it)"""
        point = np.asarray(self.coordinates)
        to_flat = np.linalg.norm(point - np.asarray(self.params.flat_center))
        if radius is not None:
            return bool(to_flat <= radius)
        return bool(to_flat < np.linalg.norm(point - np.asarray(self.params.sharp_center)))
