"""
Experiment configuration.

Configs are JSON (YAML accepted by file extension) validated by pydantic with
unknown keys rejected. Problems surface as ConfigError carrying the offending
field path or line number.
"""

import hashlib
import json
import os
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from grid.errors import ConfigError
from models.arch import CmMode, ModelArch
from simulation.dataset import LabelRegime
from simulation.profiles import AnnotatorProfile, default_profiles
from training.trainer import TrainConfig

WORKERS_ENV = "NLSG_WORKERS"


class DatasetKind(str, Enum):
    SYNTHETIC = "synthetic"
    IDX = "idx"


class Method(str, Enum):
    MEAN = "mean"
    MODE = "mode"
    STAPLE = "staple"
    SPATIAL_STAPLE = "spatial_staple"
    OURS_NO_TRACE = "ours_no_trace"
    OURS = "ours"
    ORACLE = "oracle"
    NAIVE = "naive"


class DatasetSpec(BaseModel):
    """Where images and ground truth come from."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: DatasetKind = DatasetKind.SYNTHETIC
    train_size: int = Field(default=200, ge=1)
    test_size: int = Field(default=50, ge=1)
    width: int = Field(default=28, ge=4, description="Synthetic image width")
    height: int = Field(default=28, ge=4, description="Synthetic image height")
    num_classes: int = Field(default=2, ge=2, le=16)
    noise_std: float = Field(default=0.3, ge=0.0, description="Synthetic intensity noise")
    images_path: Optional[str] = Field(default=None, description="IDX image file")
    labels_path: Optional[str] = Field(default=None, description="Optional IDX digit-label file")
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0, description="IDX foreground threshold")

    @model_validator(mode="after")
    def _check_idx(self):
        if self.kind == DatasetKind.IDX:
            if not self.images_path:
                raise ValueError("idx datasets need images_path")
            if self.num_classes != 2:
                raise ValueError("idx datasets are binary (num_classes = 2)")
        return self


class NetworkConfig(BaseModel):
    """Trunk and CM parametrisation; class and annotator counts come from the experiment."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    trunk_layers: int = Field(default=2, ge=1)
    trunk_channels: int = Field(default=8, ge=1)
    cm_mode: CmMode = CmMode.FULL
    rank: int = Field(default=1, ge=1)


class FusionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    staple_max_iters: int = Field(default=100, ge=1)
    staple_tol: float = Field(default=1e-6, gt=0.0)
    window: int = Field(default=8, ge=4, description="Spatial STAPLE window side")
    stride: int = Field(default=4, ge=1, description="Spatial STAPLE window step")

    @model_validator(mode="after")
    def _check_stride(self):
        if self.stride > self.window:
            raise ValueError(f"stride ({self.stride}) must not exceed window ({self.window})")
        return self


class ExperimentConfig(BaseModel):
    """A complete, reproducible experiment."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "toy"
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    annotators: List[AnnotatorProfile] = Field(default_factory=default_profiles, min_length=1)
    label_regime: LabelRegime = LabelRegime.DENSE
    methods: List[Method] = Field(
        default_factory=lambda: [Method.MEAN, Method.MODE, Method.STAPLE, Method.OURS_NO_TRACE, Method.OURS],
        min_length=1,
    )
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    output_dir: str = "results"
    noise_levels: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    lambdas: List[float] = Field(default_factory=lambda: [0.001, 0.01, 0.1, 0.4, 0.7, 0.9], min_length=1)

    @model_validator(mode="after")
    def _check_consistency(self):
        try:
            self.model_arch()
        except ValidationError as e:
            raise ValueError(f"invalid network: {e.errors()[0]['msg']}") from e
        for profile in self.annotators:
            if profile.target_class >= self.dataset.num_classes:
                raise ValueError(f"annotator target_class {profile.target_class} outside {self.dataset.num_classes} classes")
        if any(seed < 0 for seed in self.seeds):
            raise ValueError("seeds must be non-negative")
        return self

    def model_arch(self, in_channels: int = 1) -> ModelArch:
        return ModelArch(
            in_channels=in_channels,
            trunk_layers=self.network.trunk_layers,
            trunk_channels=self.network.trunk_channels,
            num_classes=self.dataset.num_classes,
            num_annotators=len(self.annotators),
            cm_mode=self.network.cm_mode,
            rank=self.network.rank,
        )


def emit_config(config: ExperimentConfig) -> str:
    """Canonical JSON text of a config (sorted keys)."""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    """First 12 hex digits of the SHA-256 of the compact canonical JSON."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _validation_to_config_error(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    field = ".".join(str(part) for part in first["loc"])
    return ConfigError(first["msg"], field=field or None)


def parse_config(text: str, fmt: str = "json") -> ExperimentConfig:
    """Parse config text; ``fmt`` is ``json`` or ``yaml``."""
    try:
        if fmt == "yaml":
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from e
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {e}", line=mark.line + 1 if mark else None) from e
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise _validation_to_config_error(e) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    fmt = "yaml" if path.suffix.lower() in (".yml", ".yaml") else "json"
    return parse_config(text, fmt)


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def worker_count() -> int:
    """Parallel run cap from NLSG_WORKERS (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {workers}")
    return workers
