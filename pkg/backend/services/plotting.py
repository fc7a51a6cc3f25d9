"""
Run plots
Reads the run CSVs of one output directory and writes SVG figures next to them.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from schemas.training import RunRecord  # noqa: E402
from services.harness import CsvSchemaError, NoRunsFoundError, parse_cell, read_run_csv  # noqa: E402

logger = logging.getLogger(__name__)

GRID_HEADER = ["theta_0", "theta_1", "loss", "smoothed"]


def load_runs(run_dir: Path) -> Dict[str, List[RunRecord]]:
    files = sorted(Path(run_dir).glob("run_[0-9][0-9].csv"))
    if not files:
        raise NoRunsFoundError(f"no run CSVs found in {run_dir}")
    return {f.stem: read_run_csv(f) for f in files}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_losses(runs: Dict[str, List[RunRecord]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, records in runs.items():
        iterations = [r.iteration for r in records]
        for task in range(records[0].task_count):
            ax.plot(iterations, [r.losses[task] for r in records], label=f"{name} task {task + 1}", linewidth=1)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("task loss")
    ax.set_title("Per-task loss")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_accuracies(runs: Dict[str, List[RunRecord]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, records in runs.items():
        evaluated = [r for r in records if r.accuracies is not None]
        for task in range(records[0].task_count):
            ax.plot([r.iteration for r in evaluated], [100 * r.accuracies[task] for r in evaluated],
                    label=f"{name} task {task + 1}", linewidth=1)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("test accuracy (%)")
    ax.set_title("Per-task accuracy")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_negative_transfer(runs: Dict[str, List[RunRecord]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    names = list(runs)
    counts = [sum(r.negative_transfer for r in runs[n]) for n in names]
    ax.bar(names, counts, color="#0A3D91")
    ax.set_ylabel("negative-transfer events")
    ax.set_title("Negative transfer per run")
    return _save(fig, path)


def read_landscape_grid(path: Path):
    """Axis, raw loss grid and smoothed loss grid from landscape.csv"""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != GRID_HEADER:
            raise CsvSchemaError(path, 1, ",".join(header or []), "unexpected landscape grid header")
        cells = []
        for number, row in enumerate(reader, start=2):
            if len(row) != len(GRID_HEADER):
                raise CsvSchemaError(path, number, "*", f"expected {len(GRID_HEADER)} columns, found {len(row)}")
            cells.append([parse_cell(path, number, column, text, float) for column, text in zip(GRID_HEADER, row)])
    if not cells:
        raise CsvSchemaError(path, 2, GRID_HEADER[0], "no grid rows after the header")
    rows = np.array(cells, dtype=np.float64)
    axis = np.unique(rows[:, 0])
    n = axis.size
    if rows.shape[0] != n * n:
        raise CsvSchemaError(path, rows.shape[0] + 1, "*", f"expected {n * n} grid rows, found {rows.shape[0]}")
    return axis, rows[:, 2].reshape(n, n), rows[:, 3].reshape(n, n)


def plot_landscape(grid_path: Path, runs: Dict[str, List[RunRecord]], path: Path) -> Path:
    axis, raw, smoothed = read_landscape_grid(grid_path)
    T1, T2 = np.meshgrid(axis, axis, indexing="ij")
    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    for ax, grid, title in zip(axes, (raw, smoothed), ("L1 + L2", "smoothed L1 + L2")):
        contour = ax.contourf(T1, T2, grid, levels=30, cmap="viridis")
        fig.colorbar(contour, ax=ax)
        for name, records in runs.items():
            traj = np.array([r.coordinates for r in records if r.coordinates])
            if traj.size:
                ax.plot(traj[:, 0], traj[:, 1], marker=".", markersize=2, linewidth=1, label=name)
        ax.set_xlabel("theta_1")
        ax.set_ylabel("theta_2")
        ax.set_title(title)
    axes[0].legend(fontsize=7)
    return _save(fig, path)


def emit_plots(run_dir: Path) -> List[Path]:
    """Write loss, accuracy, negative-transfer and (landscape runs) contour SVGs"""
    run_dir = Path(run_dir)
    runs = load_runs(run_dir)
    written = [
        plot_losses(runs, run_dir / "losses.svg"),
        plot_negative_transfer(runs, run_dir / "negative_transfer.svg"),
    ]
    if any(r.accuracies is not None for records in runs.values() for r in records):
        written.append(plot_accuracies(runs, run_dir / "accuracy.svg"))
    grid = run_dir / "landscape.csv"
    if grid.exists():
        written.append(plot_landscape(grid, runs, run_dir / "landscape.svg"))
    return written
