"""
Network architecture descriptions
LeNet-style stack for MNIST and dense stacks for the synthetic benchmark
"""

import hashlib
from typing import Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class LayerSpec(BaseModel):
    """One encoder layer at its nominal (all-task) width"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["conv", "dense"]
    width: int = Field(..., ge=1)
    kernel: int = Field(0, ge=0)
    padding: int = Field(0, ge=0)
    pool: bool = False

    @model_validator(mode="after")
    def conv_needs_kernel(self):
        if self.kind == "conv" and self.kernel < 1:
            raise ValueError("conv layer needs kernel >= 1")
        if self.kind == "dense" and (self.kernel or self.padding or self.pool):
            raise ValueError("dense layer takes no kernel, padding or pool")
        return self


class NetworkSpec(BaseModel):
    """Encoder stack plus per-task head output size"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]
    num_classes: int = Field(..., ge=2)

    @model_validator(mode="after")
    def conv_before_dense(self):
        seen_dense = False
        for layer in self.layers:
            if layer.kind == "dense":
                seen_dense = True
            elif seen_dense:
                raise ValueError("conv layers must precede dense layers")
        if any(l.kind == "conv" for l in self.layers) and len(self.input_shape) != 3:
            raise ValueError("conv stacks need input_shape (C, H, W)")
        return self

    def spec_hash(self) -> bytes:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).digest()

    def feature_shapes(self) -> Tuple[Tuple[int, ...], ...]:
        """Shape (without batch axis) of the concatenated output of every layer"""
        shapes = []
        current = tuple(self.input_shape)
        for layer in self.layers:
            if layer.kind == "conv":
                _, h, w = current
                h = h + 2 * layer.padding - layer.kernel + 1
                w = w + 2 * layer.padding - layer.kernel + 1
                if layer.pool:
                    h, w = h // 2, w // 2
                current = (layer.width, h, w)
            else:
                current = (layer.width,)
            shapes.append(current)
        return tuple(shapes)

    def input_features(self, index: int) -> int:
        """Flattened width entering layer `index` (or the head when index == len(layers))"""
        previous = self.input_shape if index == 0 else self.feature_shapes()[index - 1]
        size = 1
        for extent in previous:
            size *= extent
        return size


def lenet_spec(num_classes: int = 5) -> NetworkSpec:
    """
    LeNet-5-style stack: conv 5x5 (10) -> pool -> conv 5x5 (20) -> pool -> dense 50.

    The final dense layer holds 50 hidden units in total; each task head maps
    the 50 concatenated features to `num_classes` logits.
    """
    return NetworkSpec(
        name="lenet",
        input_shape=(1, 28, 28),
        layers=(
            LayerSpec(kind="conv", width=10, kernel=5, pool=True),
            LayerSpec(kind="conv", width=20, kernel=5, pool=True),
            LayerSpec(kind="dense", width=50),
        ),
        num_classes=num_classes,
    )


def dense_spec(input_dim: int, hidden: Tuple[int, ...], num_classes: int, name: str = "dense") -> NetworkSpec:
    return NetworkSpec(
        name=name,
        input_shape=(input_dim,),
        layers=tuple(LayerSpec(kind="dense", width=w) for w in hidden),
        num_classes=num_classes,
    )


def parameter_count(spec: NetworkSpec, task_count: int) -> int:
    """
    Closed-form parameter count of a model built from `spec` with `task_count` tasks.

    Encoder: sum over layers of (fan_in * width + width) where fan_in is the full
    concatenated input; heads: task_count * (final_width * classes + classes).
    """
    count = 0
    for index, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            channels = spec.input_shape[0] if index == 0 else spec.layers[index - 1].width
            fan_in = channels * layer.kernel * layer.kernel
        else:
            fan_in = spec.input_features(index)
        count += fan_in * layer.width + layer.width
    head_in = spec.input_features(len(spec.layers))
    count += task_count * (head_in * spec.num_classes + spec.num_classes)
    return count
