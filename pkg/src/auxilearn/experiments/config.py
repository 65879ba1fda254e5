"""Experiment configuration: per-experiment defaults plus strict TOML overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import tomli
import tomli_w

from auxilearn.combiner import KINDS, Combiner
from auxilearn.errors import ConfigurationError
from auxilearn.experiments.tasks import IllustrativeTask, NoisyAuxTask, SubclassTask
from auxilearn.trainer.config import TrainConfig, build_dataclass
from auxilearn.trainer.optim import OptimizerConfig

EXPERIMENTS = ("illustrative", "noisy-aux", "aux-on-train", "poly-kernel", "labelgen-toy", "custom")
GENERATORS = {"illustrative": IllustrativeTask, "noisy-aux": NoisyAuxTask}


@dataclass(frozen=True)
class CombinerSpec:
    kind: str = "linear"
    monotone: bool = True
    depth: int = 5
    width: int = 10
    degree: int = 2
    weight_norm: bool = False
    init_weight: float | None = 1.0

    def __post_init__(self):
        if self.kind not in KINDS or self.kind == "convnet":
            raise ConfigurationError(f"combiner kind must be one of {[k for k in KINDS if k != 'convnet']}")

    def build(self, n_aux: int) -> Combiner:
        return Combiner(self.kind, n_aux, monotone=self.monotone, depth=self.depth, width=self.width,
                        degree=self.degree, weight_norm=self.weight_norm, init_weight=self.init_weight)


@dataclass(frozen=True)
class RegressionModelSpec:
    bias: bool = False


@dataclass(frozen=True)
class LabelGenModelSpec:
    M: int = 5
    student_hidden: tuple[int, ...] = (32,)
    generator_hidden: tuple[int, ...] = (32,)
    aux_scale: float = 1.0
    masking: bool = True


@dataclass(frozen=True)
class GridSpec:
    lo: float = -1.0
    hi: float = 3.0
    n: int = 100

    def __post_init__(self):
        if self.n < 2 or not self.hi > self.lo:
            raise ConfigurationError("grid needs n >= 2 and hi > lo")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    task: Any
    train: TrainConfig
    combiner: CombinerSpec | None = None
    model: Any = None
    grid: GridSpec | None = None
    generator: str | None = None  # task generator of the custom experiment

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for key in ("task", "combiner", "model", "grid"):
            value = getattr(self, key)
            if value is not None:
                out[key] = _plain(dataclasses.asdict(value))
        if self.generator is not None:
            out["task"] = {"generator": self.generator, **out["task"]}
        out["train"] = self.train.to_dict()
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _regression_train(**changes) -> TrainConfig:
    base = TrainConfig(
        train_steps=500,
        inner_steps=5,
        optimizer_w=OptimizerConfig("adam", lr=0.05),
        optimizer_phi=OptimizerConfig("sgd", lr=0.01, momentum=0.9),
    )
    return base.replace(**changes)


def default_config(experiment: str) -> ExperimentConfig:
    if experiment in ("illustrative", "aux-on-train"):
        return ExperimentConfig(experiment, IllustrativeTask(), _regression_train(), CombinerSpec(),
                                RegressionModelSpec(), GridSpec())
    if experiment == "poly-kernel":
        return ExperimentConfig(experiment, IllustrativeTask(), _regression_train(),
                                CombinerSpec(kind="poly_linear", init_weight=0.2), RegressionModelSpec())
    if experiment == "noisy-aux":
        train = _regression_train(optimizer_phi=OptimizerConfig("sgd", lr=3e-3, momentum=0.9))
        return ExperimentConfig(experiment, NoisyAuxTask(), train, CombinerSpec(init_weight=0.01),
                                RegressionModelSpec(bias=True))
    if experiment == "labelgen-toy":
        train = TrainConfig(
            train_steps=600,
            inner_steps=5,
            optimizer_w=OptimizerConfig("adam", lr=1e-2),
            optimizer_phi=OptimizerConfig("sgd", lr=1e-2, momentum=0.9),
        )
        return ExperimentConfig(experiment, SubclassTask(), train, None, LabelGenModelSpec())
    if experiment == "custom":
        return ExperimentConfig(experiment, IllustrativeTask(), _regression_train(), CombinerSpec(),
                                RegressionModelSpec(), None, generator="illustrative")
    raise ConfigurationError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")


def load_config(experiment: str, data: dict[str, Any] | None = None) -> ExperimentConfig:
    """Defaults for ``experiment`` overridden by the sections of ``data``; unknown keys are errors."""
    cfg = default_config(experiment)
    data = dict(data or {})
    allowed = {"task", "train", "combiner", "model", "grid"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown section(s): {', '.join(unknown)}")
    changes: dict[str, Any] = {}
    if "task" in data:
        task_data = dict(data["task"]) if isinstance(data["task"], dict) else data["task"]
        task_cls, base = type(cfg.task), cfg.task
        if experiment == "custom" and isinstance(task_data, dict) and "generator" in task_data:
            gen = task_data.pop("generator")
            if gen not in GENERATORS:
                raise ConfigurationError(f"[task] generator must be one of {sorted(GENERATORS)}")
            changes["generator"] = gen
            task_cls = GENERATORS[gen]
            base = task_cls() if task_cls is not type(cfg.task) else cfg.task
        changes["task"] = build_dataclass(task_cls, task_data, "task", base)
    if "train" in data:
        train = cfg.train.to_dict()
        section = data["train"]
        if not isinstance(section, dict):
            raise ConfigurationError("[train] must be a table")
        for key, value in section.items():
            if isinstance(value, dict) and isinstance(train.get(key), dict):
                train[key] = {**train[key], **value}
            else:
                train[key] = value
        if "outer_steps" not in section:
            train.pop("outer_steps", None)
        changes["train"] = TrainConfig.from_dict(train)
    for key in ("combiner", "model", "grid"):
        if key in data:
            base = getattr(cfg, key)
            if base is None:
                raise ConfigurationError(f"experiment {experiment!r} has no [{key}] section")
            changes[key] = build_dataclass(type(base), data[key], key, base)
    return dataclasses.replace(cfg, **changes)


def parse_toml(text: str) -> dict[str, Any]:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from exc
