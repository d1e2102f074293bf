"""Run configuration loaded from JSON experiment files."""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

Method = Literal["exacfs", "uniform_significance", "finetune_only", "last_stage_only"]
Strategy = Literal["herding", "random", "closest_to_mean"]

METHODS: Tuple[str, ...] = ("exacfs", "uniform_significance", "finetune_only", "last_stage_only")
STRATEGIES: Tuple[str, ...] = ("herding", "random", "closest_to_mean")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Section):
    kind: Literal["blobs", "patches", "csv", "binary"] = "blobs"
    classes: int = Field(10, ge=2)
    dims: Optional[int] = Field(None, ge=1)
    shape: Optional[Tuple[int, int, int]] = None
    samples_per_class: int = Field(250, ge=5)
    separation: float = Field(4.0, ge=0)
    noise: float = Field(1.0, ge=0)
    path: Optional[Path] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "DatasetConfig":
        if self.kind == "blobs":
            if self.shape is not None:
                raise ValueError("shape only applies to kind 'patches'")
            if self.dims is None:
                self.dims = 16
        elif self.kind == "patches":
            if self.dims is not None:
                raise ValueError("dims only applies to kind 'blobs'")
            if self.shape is None:
                self.shape = (1, 8, 8)
            if min(self.shape) < 1:
                raise ValueError("shape dimensions must be positive")
        elif self.path is None:
            raise ValueError(f"kind '{self.kind}' requires a path")
        return self


class NetworkConfig(_Section):
    """Conv stages (channels_out, kernel, stride), embedder width and cosine scale."""

    stages: List[Tuple[int, int, int]] = Field(
        default_factory=lambda: [(32, 1, 1), (32, 1, 1)], min_length=1
    )
    embed_dim: int = Field(16, ge=2)
    eta: float = Field(10.0, gt=0)
    learn_eta: bool = True

    @model_validator(mode="after")
    def _check_stages(self) -> "NetworkConfig":
        for index, stage in enumerate(self.stages):
            if min(stage) < 1:
                raise ValueError(f"stage {index} has a non-positive dimension: {list(stage)}")
        return self

    @property
    def num_features(self) -> int:
        """L: conv stages plus the embedder."""
        return len(self.stages) + 1


class OptimizerConfig(_Section):
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    epochs: int = Field(12, ge=1)
    batch_size: int = Field(32, ge=1)


class DistillConfig(_Section):
    alpha: float = Field(4.0, ge=0)
    stages: Optional[List[int]] = Field(None, min_length=1)
    include_new: bool = True
    new_class_significance: float = Field(1.0, ge=0)
    frobenius_normalize: bool = True
    eps_norm: float = Field(1e-8, gt=0)


class SignificanceConfig(_Section):
    beta: float = Field(0.4, ge=0, le=1)


class ExemplarConfig(_Section):
    strategy: Strategy = "herding"
    budget: int = Field(20, ge=1)


class StreamConfig(_Section):
    base_classes: int = Field(5, ge=1)
    increment: int = Field(1, ge=1)
    ordering_seed: int = Field(0, ge=0)


class FinetuneConfig(_Section):
    epochs: int = Field(20, ge=0)


class RunConfig(_Section):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    significance: SignificanceConfig = Field(default_factory=SignificanceConfig)
    exemplars: ExemplarConfig = Field(default_factory=ExemplarConfig)
    stream: StreamConfig = Field(default_factory=StreamConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    method: Method = "exacfs"
    seed: int = Field(0, ge=0)
    label: Optional[str] = Field(None, min_length=1, pattern=r"^[A-Za-z0-9_.\-]+$")

    @model_validator(mode="after")
    def _check_cross_fields(self) -> "RunConfig":
        classes, base, increment = self.dataset.classes, self.stream.base_classes, self.stream.increment
        if base >= classes:
            raise ValueError(f"stream.base_classes ({base}) must be below dataset.classes ({classes})")
        if (classes - base) % increment:
            raise ValueError(
                f"{classes - base} incremental classes cannot be split into increments of {increment}"
            )
        if self.distill.stages is not None:
            num_features = self.network.num_features
            bad = [j for j in self.distill.stages if not 1 <= j <= num_features]
            if bad:
                raise ValueError(f"distill.stages {bad} outside 1..{num_features}")
        return self

    @property
    def run_label(self) -> str:
        return self.label or self.method


def _field_path(loc: Tuple[Union[str, int], ...]) -> str:
    return ".".join(str(part) for part in loc)


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Validate a parsed config, turning pydantic errors into a ConfigError."""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError([(_field_path(err["loc"]), err["msg"]) for err in e.errors()]) from e


def load_config(path: Union[str, Path]) -> RunConfig:
    """Load and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise ConfigError([("", f"config file not found: {path}")]) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([("", f"{path}: invalid JSON at line {e.lineno}: {e.msg}")]) from e
    if not isinstance(data, dict):
        raise ConfigError([("", f"{path}: top level must be an object")])
    return config_from_dict(data)


def with_updates(config: RunConfig, updates: Dict[str, Any]) -> RunConfig:
    """Copy a config with dotted-path updates, e.g. {"exemplars.budget": 5}, re-validated."""
    data = config.model_dump(mode="json")
    for dotted, value in updates.items():
        target = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            target = target[key]
        target[leaf] = value
    return config_from_dict(data)


def dump_config(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
