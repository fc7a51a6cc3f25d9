"""
Experiment Harness
Validates experiment files, runs repeated seeds (optionally in parallel and over a
lambda sweep), persists one CSV per run plus a summary, and reads CSVs back.
"""

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from pydantic import ValidationError

from caching import cached_mnist
from datasets import BatchStream, LabeledSet, make_synthetic_benchmark, split_even_odd
from models.architectures import NetworkSpec, dense_spec, lenet_spec
from models.checkpoint import save_checkpoint
from models.landscape import LandscapeModel
from models.network import build_model
from monitoring import RunTimer, get_system_metrics, metrics_collector
from report_generator import ReportGenerator
from schemas.experiment import DatasetKind, ExperimentConfig, Method, RunSummary, TaskStatistic
from schemas.training import RunRecord, TrainConfig
from services.baselines import (
    accuracy_evaluator, derive_seed, merge_records, train_independent,
    train_joint, train_no_reg, train_vanilla,
)
from services.comparison import COMPARISON_FILE, compare_ladder, write_comparisons
from services.coop_optimizer import BoxConstraintViolation, NonFiniteLossError, train
from services.verification import grid_oracle
from settings import get_settings

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REPEAT_TAG = 0x4E9
MODEL_TAG = 0x30DE1
DATA_TAG = 0xDA7A


class ConfigValidationError(ValueError):
    """Experiment file rejected; diagnostics holds one `key.path: message` line per violation"""

    def __init__(self, path: Path, diagnostics: List[str]):
        self.path = path
        self.diagnostics = diagnostics
        super().__init__(f"{path}: " + "; ".join(diagnostics))


class CsvSchemaError(ValueError):
    def __init__(self, path: Path, row: int, column: str, message: str):
        self.path, self.row, self.column = path, row, column
        super().__init__(f"{path}: row {row}, column '{column}': {message}")


class NoRunsFoundError(FileNotFoundError):
    pass


class RunAbortedError(RuntimeError):
    pass


# ============================================================================
# Config validation
# ============================================================================

_CONSTRAINTS = {
    "greater_than": ("gt", ">"),
    "greater_than_equal": ("ge", ">="),
    "less_than": ("lt", "<"),
    "less_than_equal": ("le", "<="),
}


def describe_error(error: Dict[str, Any]) -> str:
    """One pydantic error as `key.path: message`"""
    key = ".".join(str(part) for part in error["loc"]) or "<root>"
    kind = error["type"]
    if kind in _CONSTRAINTS:
        ctx_key, symbol = _CONSTRAINTS[kind]
        field = str(error["loc"][-1])
        return f"{key}: must satisfy {field} {symbol} {error['ctx'][ctx_key]} (got {error.get('input')!r})"
    if kind == "extra_forbidden":
        return f"{key}: unknown key"
    if kind == "missing":
        return f"{key}: required key is missing"
    message = error["msg"].removeprefix("Value error, ")
    return f"{key}: {message}"


def parse_config(data: Any, source: Path = Path("<memory>")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigValidationError(source, ["<root>: expected a mapping of configuration keys"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(source, [describe_error(err) for err in e.errors()]) from e


def validate_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigValidationError(path, [f"<file>: cannot read config: {e.strerror or e}"]) from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigValidationError(path, [f"<file>: not valid YAML: {e}"]) from e
    config = parse_config(data, path)
    logger.info(f"Validated config {path}: method={config.method.value} dataset={config.dataset.kind.value}")
    return config


# ============================================================================
# CSV persistence
# ============================================================================

def csv_header(task_count: int, coordinates: int = 0) -> List[str]:
    return (["schema_version", "iteration"]
            + [f"loss_task{i}" for i in range(task_count)]
            + [f"accuracy_task{i}" for i in range(task_count)]
            + ["negative_transfer", "clamp_count"]
            + [f"coord_{k}" for k in range(coordinates)])


def csv_row(record: RunRecord) -> List[str]:
    accuracies = [repr(a) for a in record.accuracies] if record.accuracies is not None else [""] * record.task_count
    return ([str(SCHEMA_VERSION), str(record.iteration)]
            + [repr(v) for v in record.losses]
            + accuracies
            + [str(record.negative_transfer), str(record.clamp_count)]
            + [repr(c) for c in record.coordinates or []])


def write_run_csv(records: Sequence[RunRecord], path: Path) -> Path:
    task_count = records[0].task_count if records else 0
    coordinates = len(records[0].coordinates or []) if records else 0
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(csv_header(task_count, coordinates))
            writer.writerows(csv_row(r) for r in records)
        with open(path.with_suffix(".timing.csv"), "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["iteration", "wall_ms"])
            writer.writerows([r.iteration, f"{r.wall_ms:.3f}"] for r in records)
    except OSError as e:
        raise RunAbortedError(f"cannot write run CSV {path}: {e}") from e
    return path


def parse_cell(path: Path, row: int, column: str, text: str, kind):
    try:
        return kind(text)
    except ValueError:
        raise CsvSchemaError(path, row, column, f"cannot parse {text!r} as {kind.__name__}")


def read_run_csv(path: Path) -> List[RunRecord]:
    """Parse a run CSV back into records; wall_ms lives in the timing sidecar and reads as 0"""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise CsvSchemaError(path, 1, "schema_version", "file is empty")
    header = rows[0]
    if not header or header[0] != "schema_version":
        raise CsvSchemaError(path, 1, header[0] if header else "", "first column must be schema_version")
    task_count = sum(1 for h in header if h.startswith("loss_task"))
    coordinates = sum(1 for h in header if h.startswith("coord_"))
    if header != csv_header(task_count, coordinates):
        raise CsvSchemaError(path, 1, ",".join(header), "header does not match the run CSV schema")
    if len(rows) < 2:
        raise CsvSchemaError(path, 2, "iteration", "no data rows after the header")

    records: List[RunRecord] = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvSchemaError(path, number, "*", f"expected {len(header)} columns, found {len(row)}")
        cells = dict(zip(header, row))
        version = parse_cell(path, number, "schema_version", cells["schema_version"], int)
        if version != SCHEMA_VERSION:
            raise CsvSchemaError(path, number, "schema_version",
                                 f"version {version} is not supported (reader supports {SCHEMA_VERSION})")
        iteration = parse_cell(path, number, "iteration", cells["iteration"], int)
        if records and iteration <= records[-1].iteration:
            raise CsvSchemaError(path, number, "iteration", f"iteration {iteration} does not increase")
        losses = [parse_cell(path, number, f"loss_task{i}", cells[f"loss_task{i}"], float) for i in range(task_count)]
        raw_acc = [cells[f"accuracy_task{i}"] for i in range(task_count)]
        accuracies = None
        if any(raw_acc):
            accuracies = [parse_cell(path, number, f"accuracy_task{i}", a, float) for i, a in enumerate(raw_acc)]
        coords = [parse_cell(path, number, f"coord_{k}", cells[f"coord_{k}"], float) for k in range(coordinates)]
        try:
            records.append(RunRecord(
                iteration=iteration,
                losses=losses,
                accuracies=accuracies,
                negative_transfer=parse_cell(path, number, "negative_transfer", cells["negative_transfer"], int),
                clamp_count=parse_cell(path, number, "clamp_count", cells["clamp_count"], int),
                coordinates=coords or None,
            ))
        except ValidationError as e:
            raise CsvSchemaError(path, number, "*", str(e.errors()[0]["msg"])) from e
    return records


def write_landscape_csv(config: ExperimentConfig, path: Path) -> Path:
    """Grid of the raw and b-smoothed objective, consumed by the contour plot"""
    params = config.dataset.landscape
    oracle = grid_oracle(params, b=config.train.b)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["theta_0", "theta_1", "loss", "smoothed"])
        for (i, a), (j, b) in itertools.product(enumerate(oracle.axis), repeat=2):
            writer.writerow([repr(float(a)), repr(float(b)), repr(float(oracle.unsmoothed[i, j])),
                             repr(float(oracle.smoothed[i, j]))])
    return path


# ============================================================================
# Single repeat
# ============================================================================

@dataclass
class TaskData:
    train: Tuple[LabeledSet, ...]
    test: Tuple[LabeledSet, ...]
    spec: NetworkSpec


def load_task_data(config: ExperimentConfig) -> Optional[TaskData]:
    dataset = config.dataset
    if dataset.kind is DatasetKind.SYNTHETIC:
        params = dataset.synthetic
        train_sets, test_sets = make_synthetic_benchmark(params)
        return TaskData(train_sets, test_sets, dense_spec(params.input_dim, params.hidden, params.classes, "synthetic"))
    if dataset.kind is DatasetKind.MNIST_EVEN_ODD:
        paths = dataset.mnist
        cache_dir = get_settings().cache_dir
        train_full = cached_mnist(paths.train_images, paths.train_labels, cache_dir, paths.train_subset)
        test_full = cached_mnist(paths.test_images, paths.test_labels, cache_dir)
        return TaskData(split_even_odd(train_full).tasks, split_even_odd(test_full).tasks, lenet_spec(5))
    return None


def _records_for(config: ExperimentConfig, data: Optional[TaskData], seed: int,
                 checkpoint: Optional[Path]) -> List[RunRecord]:
    train_config = config.train.with_updates(seed=seed)

    if config.dataset.kind is DatasetKind.LANDSCAPE:
        model = LandscapeModel.near_sharp(config.dataset.landscape, seed)
        streams = [itertools.repeat(None) for _ in range(model.task_count)]
        evaluator = None
        probes = None
    else:
        def stream(dataset: LabeledSet, task: int) -> BatchStream:
            return BatchStream(dataset, train_config.batch_size, derive_seed(seed, DATA_TAG, task))

        evaluator = accuracy_evaluator(data.test) if all(len(s) for s in data.test) else None
        if config.method is Method.INDEPENDENT:
            runs = train_independent(data.spec, data.train, data.test if evaluator else None, train_config, stream)
            return list(merge_records(runs))
        model = build_model(data.spec, len(data.train), derive_seed(seed, MODEL_TAG))
        streams = [stream(s, i) for i, s in enumerate(data.train)]
        probes = [(p.images, p.labels) for p in (s.head(train_config.probe_size) for s in data.train)]

    trainer = {
        Method.MT_COOL: train,
        Method.VANILLA: train_vanilla,
        Method.NO_REG: train_no_reg,
        Method.JOINT: train_joint,
    }[config.method]
    records = list(trainer(model, streams, train_config, evaluator, probes))
    if checkpoint is not None and config.dataset.kind is not DatasetKind.LANDSCAPE:
        save_checkpoint(model, checkpoint)
    return records


def execute_repeat(config: ExperimentConfig, repeat: int, run_dir: Path) -> Tuple[int, List[RunRecord]]:
    """Run one repeat and write its CSV; picklable entry point for worker processes"""
    seed = repeat_seed(config.train.seed, repeat)
    data = load_task_data(config)
    checkpoint = run_dir / f"run_{repeat:02d}.cfck" if config.save_checkpoints else None
    with RunTimer("repeat") as timer:
        try:
            records = _records_for(config, data, seed, checkpoint)
        except (NonFiniteLossError, BoxConstraintViolation) as e:
            iteration = getattr(e, "iteration", None)
            logger.error(f"Repeat {repeat} (seed {seed}) aborted at iteration {iteration}: {e}")
            raise RunAbortedError(f"repeat {repeat} (seed {seed}) aborted: {e}") from e
    write_run_csv(records, run_dir / f"run_{repeat:02d}.csv")
    logger.info(f"Repeat {repeat} (seed {seed}) finished in {timer.duration_ms / 1000:.1f} s")
    return repeat, records


def repeat_seed(master: int, repeat: int) -> int:
    return derive_seed(master, REPEAT_TAG, repeat)


# ============================================================================
# Summary
# ============================================================================

def statistic(values: Sequence[float]) -> TaskStatistic:
    """Sample mean and Bessel-corrected std (0 for a single value)"""
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return TaskStatistic(mean=float(np.mean(arr)), std=std, values=[float(v) for v in arr])


def negative_transfer_rate(records: Sequence[RunRecord]) -> float:
    if not records:
        return 0.0
    pairs = max(1, records[0].task_count - 1)
    return sum(r.negative_transfer for r in records) / (len(records) * pairs)


def summarize(config: ExperimentConfig, runs: Sequence[Sequence[RunRecord]], wall_seconds: float,
              csv_files: List[str]) -> RunSummary:
    finals = [records[-1] for records in runs]
    task_count = finals[0].task_count
    accuracy = []
    if all(r.accuracies is not None for r in finals):
        accuracy = [statistic([r.accuracies[i] for r in finals]) for i in range(task_count)]
    return RunSummary(
        name=config.name,
        method=config.method,
        dataset=config.dataset.kind,
        lam=config.train.lam,
        repeats=config.repeats,
        seeds=[repeat_seed(config.train.seed, r) for r in range(config.repeats)],
        accuracy=accuracy,
        final_loss=[statistic([r.losses[i] for r in finals]) for i in range(task_count)],
        negative_transfer_rate=statistic([negative_transfer_rate(records) for records in runs]),
        wall_seconds=wall_seconds,
        system=get_system_metrics(),
        csv_files=csv_files,
    )


def summary_from_csvs(run_dir: Path, config: ExperimentConfig) -> RunSummary:
    """Recompute a summary from the persisted CSVs (timing and system metrics excluded)"""
    files = sorted(Path(run_dir).glob("run_[0-9][0-9].csv"))
    if not files:
        raise NoRunsFoundError(f"no runs found in {run_dir}")
    runs = [read_run_csv(f) for f in files]
    return summarize(config, runs, 0.0, [f.name for f in files])


# ============================================================================
# Orchestration
# ============================================================================

def _run_one(config: ExperimentConfig, run_dir: Path) -> RunSummary:
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RunAbortedError(f"cannot create output directory {run_dir}: {e}") from e

    metrics_collector.reset()
    with RunTimer("experiment") as timer:
        if config.workers > 1 and config.repeats > 1:
            with ProcessPoolExecutor(max_workers=min(config.workers, config.repeats)) as pool:
                futures = [pool.submit(execute_repeat, config, r, run_dir) for r in range(config.repeats)]
                results = [f.result() for f in futures]
        else:
            results = [execute_repeat(config, r, run_dir) for r in range(config.repeats)]
    results.sort(key=lambda item: item[0])

    if config.dataset.kind is DatasetKind.LANDSCAPE:
        write_landscape_csv(config, run_dir / "landscape.csv")

    csv_files = [f"run_{r:02d}.csv" for r, _ in results]
    summary = summarize(config, [records for _, records in results], timer.duration_ms / 1000.0, csv_files)
    summary = summary.model_copy(update={"timings": metrics_collector.snapshot()})
    (run_dir / "summary.json").write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    (run_dir / "config.json").write_text(config.model_dump_json(indent=2, by_alias=True), encoding="utf-8")
    _log_summary(summary)
    return summary


def _log_summary(summary: RunSummary) -> None:
    for i, stat in enumerate(summary.accuracy):
        logger.info(f"{summary.name} lambda={summary.lam:g} task {i + 1}: accuracy "
                    f"{100 * stat.mean:.2f} ± {100 * stat.std:.4f} over {summary.repeats} repeats")
    logger.info(f"{summary.name}: negative transfer rate {summary.negative_transfer_rate.mean:.4f}")


def run(config: ExperimentConfig, output_dir: Optional[Path] = None) -> List[RunSummary]:
    """
    Execute all repeats (for every lambda of the sweep, if one is configured) and
    write run_XX.csv, run_XX.timing.csv, summary.json and optionally report.pdf.
    """
    base = Path(output_dir or config.output_dir) / config.name
    sweep = config.train.lambda_sweep
    if sweep:
        jobs = [(config.model_copy(update={"train": config.train.with_updates(lam=lam)}), base / f"lambda_{lam:g}")
                for lam in sweep]
    else:
        jobs = [(config, base)]

    summaries = [_run_one(job, run_dir) for job, run_dir in jobs]

    if config.write_report:
        report = base / "report.pdf"
        ReportGenerator.generate_run_summary(summaries, str(report))
        logger.info(f"Wrote report {report}")
    if sweep:
        (base / "sweep.json").write_text(
            json.dumps([s.model_dump(mode="json") for s in summaries], indent=2), encoding="utf-8")
        if len(summaries) > 1 and all(s.accuracy for s in summaries):
            write_comparisons(compare_ladder(summaries), base / COMPARISON_FILE)
    return summaries
