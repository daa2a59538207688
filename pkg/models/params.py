"""
Model parameters, their initialisation and checkpoint files.

Parameters live in a flat dict keyed by dotted paths such as
``trunk.0.weight`` or ``ann_head.bias``; gradients use the same structure so
optimisers can walk both in lockstep.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np

from grid.errors import InvariantError, ShapeError, TensorFormatError
from grid.rng import Rng
from grid.tensor_io import atomic_write_text, read_tensor, write_tensor
from models.arch import KERNEL_SIZE, CmMode, ModelArch

CHECKPOINT_VERSION = 1
IDENTITY_MARGIN = 1000.0
ANN_WEIGHT_SCALE = 0.1
LOW_RANK_BIAS_SCALE = 0.1


def identity_logit(num_classes: int) -> float:
    """Diagonal pre-exponential value making every column at least 1 - 1e-3 diagonal."""
    return math.log(IDENTITY_MARGIN * num_classes)


@dataclass
class ModelParams:
    """Architecture plus its named parameter tensors."""

    arch: ModelArch
    tensors: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(sorted(self.tensors.items()))

    @property
    def names(self) -> List[str]:
        return sorted(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {name: value.copy() for name, value in self.tensors.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.arch, {name: np.zeros_like(value) for name, value in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.tensors.values()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for value in self.tensors.values())

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        if self.names != other.names:
            return False
        return all(np.allclose(self[name], other[name], rtol=0.0, atol=atol) for name in self.names)

    def validate(self):
        """Check shapes against the architecture and finiteness."""
        expected = param_shapes(self.arch)
        if set(expected) != set(self.tensors):
            raise ShapeError(f"parameter names {sorted(self.tensors)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise InvariantError(f"{name} contains non-finite values")


def param_shapes(arch: ModelArch) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    channels = arch.in_channels
    for layer in range(arch.trunk_layers):
        shapes[f"trunk.{layer}.weight"] = (KERNEL_SIZE, KERNEL_SIZE, channels, arch.trunk_channels)
        shapes[f"trunk.{layer}.bias"] = (arch.trunk_channels,)
        channels = arch.trunk_channels
    shapes["seg_head.weight"] = (channels, arch.num_classes)
    shapes["seg_head.bias"] = (arch.num_classes,)
    shapes["ann_head.weight"] = (channels, arch.ann_outputs)
    shapes["ann_head.bias"] = (arch.ann_outputs,)
    if arch.cm_mode == CmMode.LOW_RANK:
        shapes["ann_head.diag"] = (arch.num_annotators, arch.num_classes)
    return shapes


def init_params(arch: ModelArch, rng: Rng) -> ModelParams:
    """
    Fresh parameters with identity-dominated annotator CMs.

    Trunk layers use He-uniform weights with zero biases, the segmentation head
    uniform(+-1/sqrt(fan_in)). The annotator head starts with small weights and a
    bias whose diagonal logit (full mode) or diagonal channel (low rank) is
    ln(1000 L), so on a zero image every CM column is diagonal within 1e-3.
    """
    tensors = {}
    L, R = arch.num_classes, arch.num_annotators
    channels = arch.in_channels
    for layer in range(arch.trunk_layers):
        fan_in = KERNEL_SIZE * KERNEL_SIZE * channels
        bound = math.sqrt(6.0 / fan_in)
        shape = (KERNEL_SIZE, KERNEL_SIZE, channels, arch.trunk_channels)
        tensors[f"trunk.{layer}.weight"] = rng.child(0, layer).generator.uniform(-bound, bound, size=shape)
        tensors[f"trunk.{layer}.bias"] = np.zeros(arch.trunk_channels)
        channels = arch.trunk_channels

    bound = 1.0 / math.sqrt(channels)
    tensors["seg_head.weight"] = rng.child(1, 0).generator.uniform(-bound, bound, size=(channels, L))
    tensors["seg_head.bias"] = rng.child(1, 1).generator.uniform(-bound, bound, size=(L,))

    tensors["ann_head.weight"] = rng.child(2, 0).generator.uniform(
        -ANN_WEIGHT_SCALE * bound, ANN_WEIGHT_SCALE * bound, size=(channels, arch.ann_outputs)
    )
    if arch.cm_mode == CmMode.FULL:
        bias = np.zeros((R, L, L))
        bias[:, np.arange(L), np.arange(L)] = identity_logit(L)
        tensors["ann_head.bias"] = bias.reshape(-1)
    else:
        # factors must start away from zero or their gradients vanish
        tensors["ann_head.bias"] = rng.child(2, 1).generator.uniform(
            -LOW_RANK_BIAS_SCALE, LOW_RANK_BIAS_SCALE, size=(arch.ann_outputs,)
        )
        tensors["ann_head.diag"] = np.full((R, L), identity_logit(L))

    params = ModelParams(arch, tensors)
    params.validate()
    return params


def save_params(params: ModelParams, directory: Union[str, Path], metadata: Dict = None) -> Path:
    """Write ``arch.json`` plus one binary tensor per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, value in params:
        write_tensor(directory / f"{name}.nlsg", value)
    descriptor = {
        "format_version": CHECKPOINT_VERSION,
        "arch": params.arch.model_dump(mode="json"),
        "parameters": params.names,
        "metadata": metadata or {},
    }
    atomic_write_text(directory / "arch.json", json.dumps(descriptor, indent=2, sort_keys=True) + "\n")
    return directory


def load_params(directory: Union[str, Path]) -> ModelParams:
    """Read a checkpoint written by save_params."""
    directory = Path(directory)
    try:
        descriptor = json.loads((directory / "arch.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise TensorFormatError(f"{directory}: unreadable checkpoint descriptor: {e}") from e
    if descriptor.get("format_version") != CHECKPOINT_VERSION:
        raise TensorFormatError(f"{directory}: unsupported checkpoint version {descriptor.get('format_version')}")

    arch = ModelArch(**descriptor["arch"])
    tensors = {name: read_tensor(directory / f"{name}.nlsg").astype(np.float64) for name in descriptor["parameters"]}
    params = ModelParams(arch, tensors)
    params.validate()
    return params
