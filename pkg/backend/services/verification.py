"""
Verification oracles
Finite-difference gradients, Monte-Carlo flatness probes and a dense-grid
quadrature oracle for the two-coordinate landscape. run_oracle_suite() bundles
them into the checks behind `coopflat verify`.
"""

import itertools
import logging
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import tensor_autodiff as ad
from tensor_autodiff import Tensor
from datasets import BatchStream, make_synthetic_benchmark
from models.architectures import dense_spec
from models.landscape import LandscapeModel, landscape_losses
from models.network import build_model
from schemas.experiment import LandscapeParams, SyntheticParams
from schemas.training import KLMode, TrainConfig, UpdateMode
from services.coop_optimizer import (
    NonFiniteLossError, empirical_flat_loss, sample_all, sample_others, train, warmup_loss,
)
from services.baselines import derive_seed, train_joint, train_vanilla

logger = logging.getLogger(__name__)

QUADRATURE_NODES = 64
TIE_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-5


class OracleResolutionError(ValueError):
    """Grid too coarse to tell the basins apart"""


class ProbeError(ValueError):
    """Invalid flatness probe request"""


# ============================================================================
# Finite differences
# ============================================================================

def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every coordinate"""
    if not h > 0:
        raise ValueError(f"finite_diff_grad: step h must be > 0, got {h!r}")
    x = np.array(params, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + h
        f_plus = float(loss_fn(x))
        x[idx] = original - h
        f_minus = float(loss_fn(x))
        x[idx] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteLossError(f"finite_diff_grad: non-finite loss at coordinate {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / scale


class GradCheckResult(BaseModel):
    max_relative_error: float
    per_tensor: List[float]

    def passed(self, tolerance: float = GRADIENT_TOLERANCE) -> bool:
        return self.max_relative_error < tolerance


def gradient_check(closure: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5) -> GradCheckResult:
    """
    Compare backward() against central differences for every tensor in `tensors`.

    closure() must rebuild the scalar loss from the current tensor values.
    """
    for t in tensors:
        t.zero_grad()
    with ad.graph_scope():
        ad.backward(closure())
    analytic = [t.grad.copy() for t in tensors]
    for t in tensors:
        t.zero_grad()

    errors = []
    with ad.no_grad():
        for t, grad in zip(tensors, analytic):
            original = t.values

            def evaluate(values: np.ndarray) -> float:
                t.values = values
                return closure().item()

            try:
                numeric = finite_diff_grad(evaluate, original, h)
            finally:
                t.values = original
            errors.append(relative_error(grad, numeric))
    return GradCheckResult(max_relative_error=max(errors, default=0.0), per_tensor=errors)


# ============================================================================
# Flatness probe
# ============================================================================

class FlatnessReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    variance: float = Field(..., ge=0)
    max: float
    samples: int


def flatness_probe(loss_fn: Callable[[np.ndarray], float], point, b: float, K: int,
                   rng: np.random.Generator, block: Optional[Sequence[int]] = None) -> FlatnessReport:
    """
    Loss statistics over K draws of eps ~ U(-b, b) added to the coordinates in
    `block` (all coordinates when None).
    """
    if K < 2:
        raise ProbeError(f"flatness_probe: needs K >= 2 samples, got {K}")
    if b < 0:
        raise ProbeError(f"flatness_probe: radius b must be >= 0, got {b!r}")
    x0 = np.array(point, dtype=np.float64).ravel()
    coords = np.arange(x0.size) if block is None else np.asarray(block, dtype=np.int64)
    values = np.empty(K)
    for k in range(K):
        x = x0.copy()
        if b > 0:
            x[coords] += rng.uniform(-b, b, size=coords.size)
        values[k] = float(loss_fn(x))
    if not np.all(np.isfinite(values)):
        raise NonFiniteLossError("flatness_probe: non-finite loss among samples")
    # centred on the first draw, so identical samples give exactly zero variance
    shifted = values - values[0]
    return FlatnessReport(
        mean=float(values[0] + shifted.mean()),
        variance=float(np.var(shifted, ddof=1)),
        max=float(values.max()),
        samples=K,
    )


# ============================================================================
# Grid quadrature oracle
# ============================================================================

def quadrature_nodes(b: float, nodes: int = QUADRATURE_NODES) -> np.ndarray:
    """Midpoint rule on [-b, b]"""
    return -b + (np.arange(nodes) + 0.5) * (2.0 * b / nodes)


def smoothed_losses(theta1, theta2, params: LandscapeParams, b: float,
                    nodes: int = QUADRATURE_NODES) -> Tuple[np.ndarray, np.ndarray]:
    """
    E[L_1(theta1, theta2 + eps)] and E[L_2(theta1 + eps, theta2)], eps ~ U(-b, b),
    each task smoothed along the other task's coordinate.
    """
    t1 = np.asarray(theta1, dtype=np.float64)[..., None]
    t2 = np.asarray(theta2, dtype=np.float64)[..., None]
    eps = quadrature_nodes(b, nodes) if b > 0 else np.zeros(1)
    l1, _ = landscape_losses(t1, t2 + eps, params)
    _, l2 = landscape_losses(t1 + eps, t2, params)
    return l1.mean(axis=-1), l2.mean(axis=-1)


def smoothed_value(params: LandscapeParams, point, b: float, nodes: int = QUADRATURE_NODES) -> float:
    l1, l2 = smoothed_losses(point[0], point[1], params, b, nodes)
    return float(l1 + l2)


class GridOracleResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    argmin: Tuple[float, float]
    value: float
    tie: bool
    unsmoothed_minima: List[Tuple[float, float]]
    axis: np.ndarray
    smoothed: np.ndarray
    unsmoothed: np.ndarray

    def in_flat_basin(self, params: LandscapeParams) -> bool:
        point = np.asarray(self.argmin)
        return bool(np.linalg.norm(point - params.flat_center) < np.linalg.norm(point - params.sharp_center))


def grid_oracle(params: LandscapeParams, resolution: Optional[int] = None, b: float = 0.05,
                nodes: int = QUADRATURE_NODES) -> GridOracleResult:
    """
    Exhaustive minimization of the b-smoothed objective L_1 + L_2 over the box.

    A tie is reported when a second grid point, separated from the argmin by more
    than a quarter of the basin separation, is within TIE_TOLERANCE of the minimum.
    """
    resolution = resolution or params.resolution
    lo, hi = params.box
    axis = np.linspace(lo, hi, resolution)
    spacing = (hi - lo) / (resolution - 1)
    separation = float(np.min(np.abs(np.subtract(params.flat_center, params.sharp_center))))
    if spacing >= separation / 4.0:
        raise OracleResolutionError(
            f"grid_oracle: spacing {spacing:g} at resolution {resolution} cannot separate basins "
            f"{separation:g} apart (needs spacing < {separation / 4.0:g})"
        )

    t1, t2 = np.meshgrid(axis, axis, indexing="ij")
    l1, l2 = landscape_losses(t1, t2, params)
    unsmoothed = l1 + l2
    s1, s2 = smoothed_losses(t1, t2, params, b, nodes)
    smoothed = s1 + s2

    best = np.unravel_index(int(np.argmin(smoothed)), smoothed.shape)
    value = float(smoothed[best])
    best_point = np.array([axis[best[0]], axis[best[1]]])
    near = np.argwhere(smoothed <= value + TIE_TOLERANCE)
    distances = np.linalg.norm(axis[near] - best_point, axis=1)
    tie = bool(np.any(distances > separation / 4.0))

    floor = unsmoothed.min()
    minima = [(float(axis[i]), float(axis[j])) for i, j in np.argwhere(unsmoothed <= floor + TIE_TOLERANCE)]
    if tie:
        logger.info(f"grid_oracle: smoothed minimum {value!r} attained in more than one basin")
    return GridOracleResult(
        argmin=(float(best_point[0]), float(best_point[1])),
        value=value,
        tie=tie,
        unsmoothed_minima=minima,
        axis=axis,
        smoothed=smoothed,
        unsmoothed=unsmoothed,
    )


# ============================================================================
# Landscape runs
# ============================================================================

LANDSCAPE_CONFIG = TrainConfig(b=0.05, alpha=0.1, beta=0.1, lam=0.1, M=1, L=1, T_w=0, outer_iters=60)


def landscape_trajectory(params: LandscapeParams, config: TrainConfig, seed: int) -> Tuple[LandscapeModel, list]:
    """Train from a jittered start in the sharp basin; returns the model and its records"""
    model = LandscapeModel.near_sharp(params, seed)
    streams = [itertools.repeat(None) for _ in range(model.task_count)]
    records = list(train(model, streams, config.with_updates(seed=seed)))
    return model, records


# ============================================================================
# Oracle suite
# ============================================================================

class OracleCheck(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class SuiteReport(BaseModel):
    checks: List[OracleCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[OracleCheck]:
        return [c for c in self.checks if not c.passed]


def _leaf(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    sign = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(sign * (0.05 + rng.random(shape)), requires_grad=True)


def op_cases(rng: np.random.Generator) -> Iterator[Tuple[str, Callable[[], Tensor], List[Tensor]]]:
    """One randomized (name, closure, tensors) case per op kind"""
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    r = rng.standard_normal((3, 2))
    yield "matmul", (lambda r=r: ad.total(ad.mul(ad.matmul(a, b), Tensor.constant(r)))), [a, b]

    x, w = _leaf(rng, 2, 3, 5, 5), _leaf(rng, 4, 3, 3, 3, scale=0.5)
    r = rng.standard_normal((2, 4, 3, 3))
    yield "conv2d", (lambda r=r: ad.total(ad.mul(ad.conv2d(x, w), Tensor.constant(r)))), [x, w]

    xs, ws = _leaf(rng, 1, 2, 6, 6), _leaf(rng, 3, 2, 3, 3, scale=0.5)
    r = rng.standard_normal((1, 3, 3, 3))
    yield "conv2d_stride_pad", (lambda r=r: ad.total(ad.mul(ad.conv2d(xs, ws, stride=2, padding=1), Tensor.constant(r)))), [xs, ws]

    h, bias = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 3)
    r = rng.standard_normal((2, 3, 4, 4))
    yield "add_bias", (lambda r=r: ad.total(ad.mul(ad.add_bias(h, bias), Tensor.constant(r)))), [h, bias]

    z = _away_from_zero(rng, 4, 5)
    r = rng.standard_normal((4, 5))
    yield "relu", (lambda r=r: ad.total(ad.mul(ad.relu(z), Tensor.constant(r)))), [z]

    grid = (rng.permutation(2 * 2 * 4 * 4) * 0.01).reshape(2, 2, 4, 4)
    p = Tensor(grid, requires_grad=True)
    r = rng.standard_normal((2, 2, 2, 2))
    yield "max_pool2", (lambda r=r: ad.total(ad.mul(ad.max_pool2(p), Tensor.constant(r)))), [p]

    f = _leaf(rng, 2, 3, 2, 2)
    r = rng.standard_normal((2, 12))
    yield "flatten", (lambda r=r: ad.total(ad.mul(ad.flatten(f), Tensor.constant(r)))), [f]

    c1, c2 = _leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 3, 3, 3)
    r = rng.standard_normal((1, 5, 3, 3))
    yield "concat", (lambda r=r: ad.total(ad.mul(ad.concat([c1, c2], axis=1), Tensor.constant(r)))), [c1, c2]

    s = _leaf(rng, 3, 5)
    r = rng.standard_normal((3, 5))
    yield "softmax", (lambda r=r: ad.total(ad.mul(ad.softmax(s), Tensor.constant(r)))), [s]

    ls = _leaf(rng, 3, 5)
    r = rng.standard_normal((3, 5))
    yield "log_softmax", (lambda r=r: ad.total(ad.mul(ad.log_softmax(ls), Tensor.constant(r)))), [ls]

    g = _leaf(rng, 5, 3)
    idx = rng.integers(0, 5, size=7)
    r = rng.standard_normal((7, 3))
    yield "gather_rows", (lambda r=r: ad.total(ad.mul(ad.gather_rows(g, idx), Tensor.constant(r)))), [g]

    e = _leaf(rng, 3, 4, scale=0.5)
    r = rng.standard_normal((3, 4))
    yield "exp", (lambda r=r: ad.total(ad.mul(ad.exp(e), Tensor.constant(r)))), [e]

    pos = Tensor(0.5 + rng.random((3, 4)), requires_grad=True)
    r = rng.standard_normal((3, 4))
    yield "log", (lambda r=r: ad.total(ad.mul(ad.log(pos), Tensor.constant(r)))), [pos]

    logits = _leaf(rng, 4, 5)
    labels = rng.integers(0, 5, size=4)
    yield "cross_entropy", (lambda: ad.cross_entropy(logits, labels)), [logits]

    kp, kq = _leaf(rng, 4, 5), _leaf(rng, 4, 5)
    yield "kl_divergence", (lambda: ad.kl_divergence(ad.softmax(kp), ad.softmax(kq))), [kp, kq]

    m = _leaf(rng, 3, 4)
    yield "mean", (lambda: ad.mean(ad.mul(m, m))), [m]


def composite_cases(rng: np.random.Generator, seed: int) -> Iterator[Tuple[str, Callable[[], Tensor], List[Tensor]]]:
    """Losses of the training objectives on a tiny dense two-task model with fixed noise"""
    model = build_model(dense_spec(6, (4,), 3, name="oracle"), 2, seed)
    x = rng.standard_normal((5, 6))
    y = rng.integers(0, 3, size=5)
    batch = (x, y)
    noise_rng = np.random.default_rng(seed)

    hidden = model.parameters(0)
    yield "two_layer_cross_entropy", (lambda: model.task_loss(batch, 0).loss), hidden

    triple = [sample_others(model, 0, 0.05, noise_rng) for _ in range(3)]
    yield "flat_loss_literal_m3", (
        lambda: empirical_flat_loss(model, batch, 0, triple, 0.5, KLMode.LITERAL)), model.parameters(0)

    second = [sample_others(model, 1, 0.05, noise_rng) for _ in range(2)]
    yield "flat_loss_task2_vs_clean", (
        lambda: empirical_flat_loss(model, batch, 1, second, 0.5, KLMode.VS_CLEAN)), model.parameters(1)

    paired = [sample_all(model, 0.05, noise_rng) for _ in range(2)]
    yield "warmup_paired", (lambda: warmup_loss(model, [batch, batch], paired)), model.all_parameters()


def gradient_suite(seed: int = 0, repeats: int = 5) -> List[OracleCheck]:
    checks = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x96AD, r]))
        cases = itertools.chain(op_cases(rng), composite_cases(rng, seed + r))
        for name, closure, tensors in cases:
            result = gradient_check(closure, tensors)
            checks.append(OracleCheck(
                name=f"grad/{name}/{r}",
                passed=result.passed(),
                detail=f"max relative error {result.max_relative_error:.3e}",
            ))
    return checks


def landscape_suite(params: Optional[LandscapeParams] = None, seeds: int = 10,
                    config: TrainConfig = LANDSCAPE_CONFIG) -> List[OracleCheck]:
    params = params or LandscapeParams()
    oracle = grid_oracle(params, b=config.b)
    checks = [OracleCheck(
        name="landscape/oracle_flat",
        passed=oracle.in_flat_basin(params) and not oracle.tie,
        detail=f"smoothed argmin {oracle.argmin}",
    )]
    target = np.asarray(oracle.argmin)
    coop_hits, vanilla_hits = 0, 0
    for seed in range(seeds):
        model, _ = landscape_trajectory(params, config, seed)
        coop_hits += int(np.linalg.norm(np.asarray(model.coordinates) - target) <= config.b)

        control = LandscapeModel.near_sharp(params, seed)
        streams = [itertools.repeat(None), itertools.repeat(None)]
        for _ in train_vanilla(control, streams, config.with_updates(seed=seed)):
            pass
        vanilla_hits += int(not control.in_flat_basin())
    checks.append(OracleCheck(name="landscape/coop_reaches_flat", passed=coop_hits == seeds,
                              detail=f"{coop_hits}/{seeds} seeds within b of the smoothed argmin"))
    checks.append(OracleCheck(name="landscape/vanilla_stays_sharp", passed=vanilla_hits == seeds,
                              detail=f"{vanilla_hits}/{seeds} seeds remain in the sharp basin"))
    return checks


def reduction_suite(seed: int = 0, steps: int = 50) -> List[OracleCheck]:
    """Baselines must coincide bit-exactly with the equivalent cooperative configuration"""
    params = SyntheticParams(samples=256, test_samples=0, seed=seed)
    (train_sets, _) = make_synthetic_benchmark(params)
    spec = dense_spec(params.input_dim, params.hidden, params.classes, name="synthetic")
    base = TrainConfig(outer_iters=steps, T_w=5, batch_size=32, seed=seed)

    def run(trainer, config) -> Dict[str, np.ndarray]:
        model = build_model(spec, 2, derive_seed(seed, 0x30DE1))
        streams = [BatchStream(s, config.batch_size, derive_seed(seed, 0xDA7A, i)) for i, s in enumerate(train_sets)]
        for _ in trainer(model, streams, config):
            pass
        return model.state()

    def same(a: Dict[str, np.ndarray], b: Dict[str, np.ndarray]) -> bool:
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    joint = run(train_joint, base)
    reduced = run(train, base.with_updates(update_mode=UpdateMode.SIMULTANEOUS, noise_enabled=False,
                                           clamp_enabled=False, lam=0.0, T_w=0))
    vanilla = run(train_vanilla, base)
    disabled = run(train, base.with_updates(noise_enabled=False, clamp_enabled=False, lam=0.0))
    return [
        OracleCheck(name="reduction/joint", passed=same(joint, reduced),
                    detail=f"{steps} simultaneous noise-free steps vs joint training"),
        OracleCheck(name="reduction/vanilla", passed=same(vanilla, disabled),
                    detail=f"{steps} alternating steps with noise, clamp and KL disabled vs vanilla"),
    ]


def run_oracle_suite(seed: int = 0, landscape_seeds: int = 10) -> SuiteReport:
    report = SuiteReport()
    report.checks.extend(gradient_suite(seed))
    report.checks.extend(reduction_suite(seed))
    report.checks.extend(landscape_suite(seeds=landscape_seeds))
    for check in report.failures:
        logger.error(f"Oracle check {check.name} failed: {check.detail}")
    logger.info(f"Oracle suite: {len(report.checks) - len(report.failures)}/{len(report.checks)} checks passed")
    return report
