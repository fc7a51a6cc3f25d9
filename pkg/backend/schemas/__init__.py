"""
Pydantic schemas for configuration, records and summaries
CoopFlat - cooperative multi-task training with flat-minima search
"""

from .training import (
    KLMode, UpdateMode, BaselineKind,
    TrainConfig, RunRecord
)

from .experiment import (
    Method, DatasetKind,
    MnistPaths, SyntheticParams, LandscapeParams, DatasetConfig,
    ExperimentConfig, TaskStatistic, RunSummary, PairedComparison
)

__all__ = [
    # Training
    'KLMode', 'UpdateMode', 'BaselineKind',
    'TrainConfig', 'RunRecord',

    # Experiment
    'Method', 'DatasetKind',
    'MnistPaths', 'SyntheticParams', 'LandscapeParams', 'DatasetConfig',
    'ExperimentConfig', 'TaskStatistic', 'RunSummary', 'PairedComparison',
]
