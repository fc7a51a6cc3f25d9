"""
Training configuration and per-iteration record schemas
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class KLMode(str, Enum):
    """Reference distribution for the flatness regularizer"""
    LITERAL = "literal"      # KL to the mean of the M perturbed predictions
    VS_CLEAN = "vs_clean"    # KL to the noise-free prediction


class UpdateMode(str, Enum):
    ALTERNATING = "alternating"
    SIMULTANEOUS = "simultaneous"


class BaselineKind(str, Enum):
    """Ablation rows, each a documented reduction of the full method"""
    INDEPENDENT = "independent"
    JOINT = "joint"
    VANILLA = "vanilla"
    NO_REG = "no_reg"


# ============================================================================
# Train Config
# ============================================================================

class TrainConfig(BaseModel):
    """All algorithmic knobs of cooperative training"""
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    b: float = Field(0.05, gt=0, description="noise bound / clamp radius")
    alpha: float = Field(0.1, gt=0, description="warm-up step size")
    beta: float = Field(0.1, gt=0, description="inner step size")
    lam: float = Field(0.1, ge=0, alias="lambda", description="KL weight")
    M: int = Field(1, ge=1, description="noise samples per loss")
    L: int = Field(1, ge=1, description="inner iterations per task")
    T_w: int = Field(200, ge=0, description="warm-up iterations")
    outer_iters: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)
    kl_mode: KLMode = KLMode.LITERAL

    update_mode: UpdateMode = UpdateMode.ALTERNATING
    noise_enabled: bool = True
    clamp_enabled: bool = True
    batch_size: int = Field(128, ge=1)
    eval_every: int = Field(1, ge=1)
    probe_size: int = Field(256, ge=1)
    lambda_sweep: Optional[List[float]] = None

    @field_validator("lambda_sweep")
    @classmethod
    def sweep_values_non_negative(cls, v):
        if v is not None:
            if not v:
                raise ValueError("lambda_sweep must not be empty")
            if any(x < 0 for x in v):
                raise ValueError("lambda_sweep values must satisfy lambda >= 0")
        return v

    @model_validator(mode="after")
    def finite_steps(self):
        for name in ("alpha", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        return self

    def with_updates(self, **changes) -> "TrainConfig":
        """Copy with validated changes (model_copy skips validation)"""
        return TrainConfig.model_validate({**self.model_dump(), **changes})


# ============================================================================
# Run Record
# ============================================================================

class RunRecord(BaseModel):
    """Metrics of one outer iteration"""
    model_config = ConfigDict(frozen=True)

    iteration: int = Field(..., ge=0)
    losses: List[float]
    accuracies: Optional[List[float]] = None
    negative_transfer: int = Field(0, ge=0)
    clamp_count: int = Field(0, ge=0)
    wall_ms: float = Field(0.0, ge=0)
    coordinates: Optional[List[float]] = None

    @model_validator(mode="after")
    def numerics_finite(self):
        values = list(self.losses) + list(self.accuracies or []) + list(self.coordinates or [])
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"iteration {self.iteration}: non-finite metric in record")
        return self

    @property
    def task_count(self) -> int:
        return len(self.losses)
