"""
Experiment configuration and summary schemas
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from schemas.training import TrainConfig


class Method(str, Enum):
    MT_COOL = "mt_cool"
    VANILLA = "vanilla"
    NO_REG = "no_reg"
    JOINT = "joint"
    INDEPENDENT = "independent"


class DatasetKind(str, Enum):
    MNIST_EVEN_ODD = "mnist_even_odd"
    SYNTHETIC = "synthetic"
    LANDSCAPE = "landscape"


# ============================================================================
# Dataset sections
# ============================================================================

class MnistPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    train_subset: Optional[int] = Field(None, ge=1, description="first N training images; None = all 60,000")

    @field_validator("train_images", "train_labels", "test_images", "test_labels")
    @classmethod
    def path_exists(cls, v: Path) -> Path:
        if not v.exists():
            raise ValueError(f"path does not exist: {v}")
        return v


class SyntheticParams(BaseModel):
    """Generator parameters of the two-task benchmark with a shared latent factor"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = Field(16, ge=1)
    latent_dim: int = Field(4, ge=1)
    classes: int = Field(5, ge=2)
    noise: float = Field(0.5, ge=0)
    samples: int = Field(2000, ge=1)
    test_samples: int = Field(1000, ge=0)
    hidden: Tuple[int, ...] = (16, 8)
    seed: int = Field(0, ge=0)


class LandscapeParams(BaseModel):
    """Two-coordinate landscape with a sharp and a flat basin of equal depth"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    sharp_center: Tuple[float, float] = (-0.25, -0.25)
    flat_center: Tuple[float, float] = (0.25, 0.25)
    sharp_width: float = Field(0.02, gt=0)
    flat_width: float = Field(0.5, gt=0)
    depth: float = Field(1.0, gt=0)
    box: Tuple[float, float] = (-1.0, 1.0)
    resolution: int = Field(81, ge=3)
    init_jitter: float = Field(0.001, ge=0, description="uniform offset radius of the start point")

    @model_validator(mode="after")
    def box_ordered(self):
        if self.box[0] >= self.box[1]:
            raise ValueError(f"box lower bound {self.box[0]} must be below upper bound {self.box[1]}")
        return self


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind
    mnist: Optional[MnistPaths] = None
    synthetic: Optional[SyntheticParams] = None
    landscape: Optional[LandscapeParams] = None

    @model_validator(mode="after")
    def section_present(self):
        if self.kind is DatasetKind.MNIST_EVEN_ODD and self.mnist is None:
            raise ValueError("dataset.kind=mnist_even_odd requires a 'mnist' section with file paths")
        if self.kind is DatasetKind.SYNTHETIC and self.synthetic is None:
            self.synthetic = SyntheticParams()
        if self.kind is DatasetKind.LANDSCAPE and self.landscape is None:
            self.landscape = LandscapeParams()
        return self


# ============================================================================
# Experiment
# ============================================================================

class ExperimentConfig(BaseModel):
    """One experiment file: method, algorithm knobs, data and repeat policy"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field("experiment", min_length=1)
    method: Method
    train: TrainConfig = TrainConfig()
    dataset: DatasetConfig
    repeats: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    output_dir: Path = Path("runs")
    write_report: bool = False
    save_checkpoints: bool = False

    @model_validator(mode="after")
    def landscape_methods(self):
        if self.dataset.kind is DatasetKind.LANDSCAPE and self.method in (Method.INDEPENDENT, Method.JOINT):
            raise ValueError(f"method {self.method.value} is not defined on the landscape dataset")
        return self


class TaskStatistic(BaseModel):
    mean: float
    std: float
    values: List[float]


class RunSummary(BaseModel):
    """Per-task mean ± std of the final accuracy over repeats"""
    name: str
    method: Method
    dataset: DatasetKind
    lam: float
    repeats: int
    seeds: List[int]
    accuracy: List[TaskStatistic] = Field(default_factory=list)
    final_loss: List[TaskStatistic]
    negative_transfer_rate: TaskStatistic
    wall_seconds: float
    system: Dict[str, float] = Field(default_factory=dict)
    timings: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    csv_files: List[str]


class PairedComparison(BaseModel):
    """
    Candidate against baseline over repeats that share seeds.

    Accuracies are the per-repeat means over tasks. p-values are one-sided
    (candidate greater); they are None when fewer than two repeats exist.
    """
    baseline: str
    candidate: str
    repeats: int
    seeds: List[int]
    baseline_mean: float
    candidate_mean: float
    mean_difference: float
    wins: int = Field(description="repeats where candidate accuracy >= baseline accuracy")
    t_statistic: Optional[float] = None
    t_pvalue: Optional[float] = None
    wilcoxon_pvalue: Optional[float] = None
