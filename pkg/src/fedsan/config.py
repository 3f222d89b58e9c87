"""Configuration models for FEDSAN experiments."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from .attacks import TriggerSpec
from .fltrain.federation import TrainConfig

OUTPUT_ENV_VAR = "FEDSAN_OUTPUT"
FALLBACK_OUTPUT_DIR = "runs/latest"
MNIST_CLASSES = 10
MNIST_SHAPE = (28, 28)
MNIST_DIM = MNIST_SHAPE[0] * MNIST_SHAPE[1]

SEED_OFFSETS = {
    "data": 0,
    "partition": 1,
    "attack": 2,
    "projection": 3,
    "clustering": 4,
    "training": 5,
}

DATASET_SOURCES = ("synthetic", "mnist")
PARTITION_SCHEMES = ("iid", "dirichlet")
ATTACK_KINDS = ("none", "label_flip", "backdoor", "hybrid")
PROJECTION_KINDS = ("identity", "random_linear")


class ConfigError(ValueError):
    """A configuration file could not be parsed or failed validation."""

    def __init__(self, violations: List[str]) -> None:
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class MnistConfig:
    """Locations of the four MNIST IDX files (``.gz`` accepted).

    Attributes:
        train_limit: Keep only the first N training samples (desk-scale runs).
        test_limit: Keep only the first N test samples.
    """

    train_images: str = "data/mnist/train-images-idx3-ubyte.gz"
    train_labels: str = "data/mnist/train-labels-idx1-ubyte.gz"
    test_images: str = "data/mnist/t10k-images-idx3-ubyte.gz"
    test_labels: str = "data/mnist/t10k-labels-idx1-ubyte.gz"
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None


@dataclass
class SyntheticConfig:
    """Gaussian blob data; the test split is drawn from the same blobs with another seed."""

    num_classes: int = 4
    per_class: int = 250
    dim: int = 16
    spread: float = 0.5
    center_gap: float = 3.0
    test_per_class: int = 50


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    mnist: MnistConfig = field(default_factory=MnistConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class PartitionConfig:
    num_clients: int = 10
    scheme: str = "iid"
    alpha: float = 1.0


@dataclass
class TriggerConfig:
    """Rectangular trigger patch. Negative row/col count from the bottom/right edge."""

    shape: str = "rect"
    row: int = -3
    col: int = -3
    height: int = 3
    width: int = 3
    value: float = 1.0


@dataclass
class LabelFlipConfig:
    source: int = 3
    target: int = 2


@dataclass
class BackdoorConfig:
    target: int = 0
    trigger: TriggerConfig = field(default_factory=TriggerConfig)


@dataclass
class AttackConfig:
    """Threat model. ``kind`` is one of none, label_flip, backdoor, hybrid."""

    kind: str = "none"
    label_flip: LabelFlipConfig = field(default_factory=LabelFlipConfig)
    backdoor: BackdoorConfig = field(default_factory=BackdoorConfig)
    poison_ratio: float = 0.5
    adversary_fraction: float = 0.5
    hybrid_flip_share: float = 0.5


@dataclass
class DefenseConfig:
    enabled: bool = False


@dataclass
class ProjectionConfig:
    """Shared feature map; ``out_dim`` only applies to ``random_linear``."""

    kind: str = "identity"
    out_dim: int = 64


@dataclass
class ClusteringConfig:
    """Federated clustering knobs.

    Attributes:
        k: Global meta-cluster count; ``None`` uses the dataset's class count.
        local_k: Per-client cluster count; ``None`` uses ``k``.
        local_k_from_labels: Use each client's distinct label count as its local k.
        m_const: Separation constant for the cluster separation check.
        restarts: k-means++ restarts per client (best cost wins).
        max_iters: Lloyd iteration cap.
    """

    k: Optional[int] = None
    local_k: Optional[int] = None
    local_k_from_labels: bool = False
    m_const: float = 4.0
    restarts: int = 5
    max_iters: int = 100


@dataclass
class ExperimentConfig:
    """Top level configuration for one experiment run."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    output_dir: Optional[str] = None
    record_wall_time: bool = False
    workers: int = 1
    master_seed: int = 0

    def seed_for(self, component: str) -> int:
        return self.master_seed + SEED_OFFSETS[component]

    def num_classes(self) -> int:
        if self.dataset.source == "synthetic":
            return self.dataset.synthetic.num_classes
        return MNIST_CLASSES

    def input_dim(self) -> int:
        if self.dataset.source == "synthetic":
            return self.dataset.synthetic.dim
        return MNIST_DIM

    def image_shape(self) -> Tuple[int, int]:
        if self.dataset.source == "synthetic":
            return (1, self.dataset.synthetic.dim)
        return MNIST_SHAPE


def default_config() -> ExperimentConfig:
    """Produce a usable default configuration (synthetic data, no attack, no defense)."""

    return ExperimentConfig()


# --------------------------------------------------------------------------
# dict <-> dataclass
# --------------------------------------------------------------------------


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _type_name(tp: Any) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value: Any, tp: Any, path: str, errors: List[str]) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        options = [arg for arg in get_args(tp) if arg is not type(None)]
        if value is None:
            return None
        return _coerce(value, options[0], path, errors)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            errors.append(f"{path}: expected an object, got {type(value).__name__}")
            return tp()
        return _build(tp, value, path, errors)
    if tp is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            errors.append(f"{path}: expected a string, got {value!r}")
        return value
    errors.append(f"{path}: unsupported type {_type_name(tp)}")
    return value


def _build(cls: Any, data: Mapping[str, Any], prefix: str, errors: List[str]) -> Any:
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            errors.append(f"{prefix + '.' if prefix else ''}{key}: unknown key")
    kwargs = {}
    for name in known:
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], f"{prefix + '.' if prefix else ''}{name}", errors)
    return cls(**kwargs)


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    """Strictly build and validate a config; every problem is reported at once."""

    if not isinstance(data, Mapping):
        raise ConfigError([f"top level: expected an object, got {type(data).__name__}"])
    errors: List[str] = []
    cfg = _build(ExperimentConfig, data, "", errors)
    if errors:
        raise ConfigError(errors)
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def read_document(path: Path) -> Any:
    """Parse a JSON (or, by suffix, YAML) document, reporting syntax errors with line/column."""

    text = Path(path).read_text()
    if Path(path).suffix in (".yaml", ".yml"):
        try:
            return yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
            raise ConfigError([f"{where}: {exc.problem}"]) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from exc


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: no such file"])
    return config_from_dict(read_document(path))


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Copy of ``data`` with dotted-key overrides applied; keys must already exist."""

    result = copy.deepcopy(dict(data))
    for dotted, value in overrides.items():
        node: Any = result
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError([f"override {dotted!r}: unknown config key"])
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError([f"override {dotted!r}: unknown config key"])
        node[parts[-1]] = value
    return result


def resolve_output_dir(cfg: ExperimentConfig, override: Optional[str | Path] = None) -> Path:
    """CLI override, then the config, then ``$FEDSAN_OUTPUT``, then ``runs/latest``."""

    if override is not None:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUTPUT_ENV_VAR) or FALLBACK_OUTPUT_DIR)


# --------------------------------------------------------------------------
# Semantic validation
# --------------------------------------------------------------------------


def _choice(problems: List[str], name: str, value: str, options: tuple) -> None:
    if value not in options:
        problems.append(f"{name} must be one of {', '.join(options)}, got {value!r}")


def validate_config(cfg: ExperimentConfig) -> List[str]:
    """Every semantic violation in ``cfg``; an empty list means valid."""

    problems: List[str] = []
    _choice(problems, "dataset.source", cfg.dataset.source, DATASET_SOURCES)
    syn = cfg.dataset.synthetic
    for name in ("num_classes", "per_class", "dim", "test_per_class"):
        if getattr(syn, name) < 1:
            problems.append(f"dataset.synthetic.{name} must be >= 1")
    if not syn.spread > 0:
        problems.append("dataset.synthetic.spread must be > 0")
    if not syn.center_gap > 0:
        problems.append("dataset.synthetic.center_gap must be > 0")
    for name in ("train_limit", "test_limit"):
        limit = getattr(cfg.dataset.mnist, name)
        if limit is not None and limit < 1:
            problems.append(f"dataset.mnist.{name} must be >= 1")

    part = cfg.partition
    if part.num_clients < 1:
        problems.append("partition.num_clients must be >= 1")
    _choice(problems, "partition.scheme", part.scheme, PARTITION_SCHEMES)
    if part.scheme == "dirichlet" and not part.alpha > 0:
        problems.append("partition.alpha must be > 0")
    if cfg.dataset.source == "synthetic" and part.num_clients > syn.num_classes * syn.per_class:
        problems.append("partition.num_clients exceeds the number of synthetic samples")

    num_classes = cfg.num_classes()
    attack = cfg.attack
    _choice(problems, "attack.kind", attack.kind, ATTACK_KINDS)
    if not 0.0 < attack.poison_ratio <= 1.0:
        problems.append(f"attack.poison_ratio must lie in (0, 1], got {attack.poison_ratio}")
    if not 0.0 <= attack.adversary_fraction <= 1.0:
        problems.append(f"attack.adversary_fraction must lie in [0, 1], got {attack.adversary_fraction}")
    if not 0.0 <= attack.hybrid_flip_share <= 1.0:
        problems.append("attack.hybrid_flip_share must lie in [0, 1]")
    if attack.kind in ("label_flip", "hybrid"):
        flip = attack.label_flip
        if flip.source == flip.target:
            problems.append("attack.label_flip.source and target must differ")
        for name in ("source", "target"):
            if not 0 <= getattr(flip, name) < num_classes:
                problems.append(f"attack.label_flip.{name} must lie in [0, {num_classes})")
    if attack.kind in ("backdoor", "hybrid"):
        if not 0 <= attack.backdoor.target < num_classes:
            problems.append(f"attack.backdoor.target must lie in [0, {num_classes})")
        trigger = attack.backdoor.trigger
        if trigger.shape != "rect":
            problems.append(f"attack.backdoor.trigger.shape must be rect, got {trigger.shape!r}")
        if trigger.height < 1 or trigger.width < 1:
            problems.append("attack.backdoor.trigger height and width must be >= 1")
        else:
            try:
                TriggerSpec.rect(cfg.image_shape(), trigger.row, trigger.col, trigger.height, trigger.width)
            except ValueError as exc:
                problems.append(f"attack.backdoor.trigger: {exc}")
        if not 0.0 <= trigger.value <= 1.0:
            problems.append("attack.backdoor.trigger.value must lie in [0, 1]")

    _choice(problems, "projection.kind", cfg.projection.kind, PROJECTION_KINDS)
    if cfg.projection.kind == "random_linear" and not 1 <= cfg.projection.out_dim <= cfg.input_dim():
        problems.append(f"projection.out_dim must lie in [1, {cfg.input_dim()}]")

    clus = cfg.clustering
    if clus.k is not None and clus.k < 1:
        problems.append("clustering.k must be >= 1")
    if clus.local_k is not None and clus.local_k < 1:
        problems.append("clustering.local_k must be >= 1")
    if not clus.m_const > 0:
        problems.append("clustering.m_const must be > 0")
    if clus.restarts < 1:
        problems.append("clustering.restarts must be >= 1")
    if clus.max_iters < 1:
        problems.append("clustering.max_iters must be >= 1")

    problems.extend(cfg.training.violations(max(part.num_clients, 1)))
    if cfg.workers < 1:
        problems.append("workers must be >= 1")
    return problems


__all__ = [
    "OUTPUT_ENV_VAR",
    "SEED_OFFSETS",
    "ConfigError",
    "MnistConfig",
    "SyntheticConfig",
    "DatasetConfig",
    "PartitionConfig",
    "TriggerConfig",
    "LabelFlipConfig",
    "BackdoorConfig",
    "AttackConfig",
    "DefenseConfig",
    "ProjectionConfig",
    "ClusteringConfig",
    "ExperimentConfig",
    "TrainConfig",
    "default_config",
    "config_to_dict",
    "config_to_json",
    "config_hash",
    "config_from_dict",
    "read_document",
    "parse_config",
    "apply_overrides",
    "resolve_output_dir",
    "validate_config",
]
