"""
Experiment configuration.

A config file (JSON, or TOML) maps onto the frozen ExperimentConfig below.
Missing keys take the defaults of the toy benchmark; unknown keys are
rejected so a typo never silently falls back to a default.
"""

import json
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from distill_lab.data import SyntheticDatasetSpec
from distill_lab.errors import ConfigError, LabError
from distill_lab.losses import AlphaMode, CombinedLossConfig, MarginConfig
from distill_lab.models import MlpSpec
from distill_lab.optim import DEFAULT_MILESTONE_FRACTIONS, LrSchedule

METHODS = ("standalone", "mse_kd", "amldistill", "adadistill_alpha", "adadistill_alpha_prime")
CENTER_INITS = ("classifier", "warmup")

# (lambda, beta) per method: task loss only, task + MSE, or the distillation loss alone
DEFAULT_LOSS_WEIGHTS = {
    "standalone": (1.0, 0.0),
    "mse_kd": (1.0, 1.0),
    "amldistill": (0.0, 1.0),
    "adadistill_alpha": (0.0, 1.0),
    "adadistill_alpha_prime": (0.0, 1.0),
}

DEFAULT_STUDENT_WIDTHS = (16, 24, 24, 8)

# Rank-1 keeps one holdout sample per class as gallery and needs at least one probe;
# with the 20% holdout this means samples_per_class >= 8
MIN_HOLDOUT_PER_CLASS = 2


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestone_fractions: Tuple[float, ...] = DEFAULT_MILESTONE_FRACTIONS
    decay_factor: float = 0.1

    def schedule(self, total_iterations: int) -> LrSchedule:
        return LrSchedule.from_fractions(self.lr, total_iterations, self.milestone_fractions, self.decay_factor)


@dataclass(frozen=True)
class EvalConfig:
    """Holdout pair sampling (None = every eligible pair) and the reported FAR targets."""

    n_genuine: Optional[int] = None
    n_impostor: Optional[int] = None
    far_targets: Tuple[float, ...] = (1e-2, 1e-3)
    pair_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    student_spec: MlpSpec = field(default_factory=lambda: MlpSpec(DEFAULT_STUDENT_WIDTHS))
    teacher_spec: Optional[MlpSpec] = None
    margin: MarginConfig = field(default_factory=lambda: MarginConfig.arcface(guarded=True))
    teacher_margin: MarginConfig = field(default_factory=lambda: MarginConfig.arcface(guarded=True))
    method: str = "adadistill_alpha_prime"
    loss_weights: Optional[CombinedLossConfig] = None
    total_iterations: int = 5000
    teacher_iterations: Optional[int] = None
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seeds: Tuple[int, ...] = (0, 1, 2)
    center_init: str = "classifier"
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    log_every: int = 500
    checkpoint_count: int = 20
    name: Optional[str] = None

    def __post_init__(self):
        if self.teacher_spec is None:
            object.__setattr__(self, "teacher_spec", self.student_spec.widened(2))
        if self.teacher_iterations is None:
            object.__setattr__(self, "teacher_iterations", self.total_iterations)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self._validate()

    def _validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}'. Available: {list(METHODS)}")
        if self.center_init not in CENTER_INITS:
            raise ConfigError(f"Unknown center_init '{self.center_init}'. Available: {list(CENTER_INITS)}")
        for label, spec in (("student_spec", self.student_spec), ("teacher_spec", self.teacher_spec)):
            if spec.input_dim != self.dataset.input_dim:
                raise ConfigError(
                    f"{label} input width {spec.input_dim} does not match dataset input_dim {self.dataset.input_dim}"
                )
        if self.method != "standalone" and self.teacher_spec.embedding_dim != self.student_spec.embedding_dim:
            raise ConfigError(
                f"Method '{self.method}' needs teacher and student embeddings of equal size "
                f"({self.teacher_spec.embedding_dim} vs {self.student_spec.embedding_dim})"
            )
        if self.dataset.holdout_per_class < MIN_HOLDOUT_PER_CLASS:
            raise ConfigError(
                f"dataset.samples_per_class={self.dataset.samples_per_class} holds out "
                f"{self.dataset.holdout_per_class} sample(s) per class; evaluation needs "
                f"{MIN_HOLDOUT_PER_CLASS} (samples_per_class >= 8)"
            )
        if self.total_iterations < 1 or self.teacher_iterations < 1:
            raise ConfigError("Iteration counts must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"Batch size must be positive, got {self.batch_size}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")
        if self.log_every < 1 or self.checkpoint_count < 1:
            raise ConfigError("log_every and checkpoint_count must be positive")
        for far in self.evaluation.far_targets:
            if not 0 < far <= 1:
                raise ConfigError(f"FAR targets must lie in (0, 1], got {far}")

    @property
    def weights(self) -> CombinedLossConfig:
        if self.loss_weights is not None:
            return self.loss_weights
        lambda_, beta = DEFAULT_LOSS_WEIGHTS[self.method]
        return CombinedLossConfig(lambda_, beta)

    @property
    def alpha_mode(self) -> Optional[AlphaMode]:
        if self.method == "adadistill_alpha":
            return AlphaMode.PLAIN
        if self.method == "adadistill_alpha_prime":
            return AlphaMode.HARD_WEIGHTED
        return None

    @property
    def lr_schedule(self) -> LrSchedule:
        return self.optimizer.schedule(self.total_iterations)

    @property
    def teacher_lr_schedule(self) -> LrSchedule:
        return self.optimizer.schedule(self.teacher_iterations)

    @property
    def checkpoint_every(self) -> int:
        return max(1, self.total_iterations // self.checkpoint_count)

    @property
    def display_name(self) -> str:
        """Method name in the usual naming: ArcDistill, AdaCosDistill(alpha'), ..."""
        kind = "Cos" if self.margin.mode == "cos" else "Arc"
        return {
            "standalone": f"Student ({kind}Face)",
            "mse_kd": "Vanilla KD",
            "amldistill": f"{kind}Distill",
            "adadistill_alpha": f"Ada{kind}Distill(alpha)",
            "adadistill_alpha_prime": f"Ada{kind}Distill(alpha')",
        }[self.method]

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.display_name} m={self.margin.margin_value:g}"


_NESTED = {
    "dataset": SyntheticDatasetSpec,
    "student_spec": MlpSpec,
    "teacher_spec": MlpSpec,
    "margin": MarginConfig,
    "teacher_margin": MarginConfig,
    "loss_weights": CombinedLossConfig,
    "optimizer": OptimizerConfig,
    "evaluation": EvalConfig,
}

_TUPLE_FIELDS = {"layer_widths", "milestone_fractions", "far_targets", "seeds"}


def _build(cls, data: Dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"'{where}' must be a table/object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{where}': {unknown}. Known: {sorted(known)}")
    kwargs = {}
    for key, value in data.items():
        if cls is ExperimentConfig and key in _NESTED and value is not None:
            value = _build(_NESTED[key], value, key)
        elif key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    if cls is MarginConfig:
        # training recipe keeps the obtuse-angle guard unless a file turns it off
        kwargs.setdefault("guarded", True)
    try:
        return cls(**kwargs)
    except LabError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid '{where}': {e.message}", e.details)
    except TypeError as e:
        raise ConfigError(f"Invalid '{where}': {e}")


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    data = dict(data)
    weights = data.get("loss_weights")
    if isinstance(weights, dict) and "lambda" in weights:
        weights = dict(weights)
        weights["lambda_"] = weights.pop("lambda")
        data["loss_weights"] = weights
    return _build(ExperimentConfig, data, "config")


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Plain JSON-ready dict; config_from_dict(config_to_dict(c)) == c."""
    data = asdict(cfg)
    if data["loss_weights"] is not None:
        data["loss_weights"]["lambda"] = data["loss_weights"].pop("lambda_")

    def lists(value):
        if isinstance(value, dict):
            return {k: lists(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [lists(v) for v in value]
        return value

    return lists(data)


def load_config(path: str) -> ExperimentConfig:
    """
    Read an experiment config from a .json or .toml file.

    Raises:
        ConfigError: unreadable file, unsupported suffix, unknown key or invalid value
    """
    suffix = os.path.splitext(path)[1].lower()
    try:
        if suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        elif suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            raise ConfigError(f"Unsupported config format '{suffix}' (use .json or .toml)")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot parse config {path}: {e}")
    return config_from_dict(data)


def with_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    method: Optional[str] = None,
    margin: Optional[MarginConfig] = None,
    name: Optional[str] = None,
    log_every: Optional[int] = None,
) -> ExperimentConfig:
    """Copy of cfg with command-line overrides applied; a seed override replaces the seed list."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["seeds"] = (int(seed),)
    if method is not None:
        changes["method"] = method
    if margin is not None:
        changes["margin"] = margin
    if name is not None:
        changes["name"] = name
    if log_every is not None:
        changes["log_every"] = int(log_every)
    return replace(cfg, **changes) if changes else cfg
