"""
CoopFlat Models
Partitioned multi-task networks, their architectures and checkpoints,
plus the two-coordinate landscape used as a verification substrate.
"""

from .architectures import LayerSpec, NetworkSpec, lenet_spec, dense_spec, parameter_count
from .network import (
    NoiseSample,
    TaskOutput,
    LayerPartition,
    MultiTaskModel,
    build_model,
    perturbed,
    PartitionError,
    PerturbationShapeError,
    TaskIndexError,
)
from .checkpoint import CheckpointError, save_checkpoint, load_checkpoint, encode_checkpoint, decode_checkpoint
from .landscape import LandscapeModel, landscape_losses

__all__ = [
    # Architectures
    'LayerSpec',
    'NetworkSpec',
    'lenet_spec',
    'dense_spec',
    'parameter_count',

    # Network
    'NoiseSample',
    'TaskOutput',
    'LayerPartition',
    'MultiTaskModel',
    'build_model',
    'perturbed',
    'PartitionError',
    'PerturbationShapeError',
    'TaskIndexError',

    # Checkpoints
    'CheckpointError',
    'save_checkpoint',
    'load_checkpoint',
    'encode_checkpoint',
    'decode_checkpoint',

    # Landscape
    'LandscapeModel',
    'landscape_losses',
]
