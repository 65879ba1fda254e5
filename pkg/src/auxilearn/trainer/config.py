"""Training configuration and its strict dict (TOML) round trip."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

from auxilearn.errors import ConfigurationError
from auxilearn.hypergrad import HypergradConfig
from auxilearn.trainer.optim import OptimizerConfig


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the alternating loop.

    ``train_steps`` counts inner (W) steps; an outer (phi) step follows every
    ``inner_steps`` of them. ``outer_steps=None`` means no cap and ``0`` trains
    the main task alone. ``freeze_phi`` keeps the auxiliary term but never
    updates phi. ``aux_on_train`` evaluates L_A on training batches.
    """

    train_steps: int = 500
    inner_steps: int = 5
    outer_steps: int | None = None
    batch_size: int | None = None
    aux_batch_size: int | None = None
    aux_fraction: float = 0.2
    optimizer_w: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("adam", lr=1e-2))
    optimizer_phi: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd", lr=1e-2, momentum=0.9))
    hypergrad: HypergradConfig = field(default_factory=HypergradConfig)
    monotone: bool = True
    aux_on_train: bool = False
    freeze_phi: bool = False
    patience: int = 20
    reestimate_alpha: bool = False
    halve_alpha_on_divergence: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.train_steps < 1 or self.inner_steps < 1:
            raise ConfigurationError("train_steps and inner_steps must be >= 1")
        if self.outer_steps is not None and self.outer_steps < 0:
            raise ConfigurationError("outer_steps must be >= 0")
        for name in ("batch_size", "aux_batch_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 < self.aux_fraction < 1.0:
            raise ConfigurationError("aux_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")

    @property
    def single_task(self) -> bool:
        return self.outer_steps == 0

    @property
    def updates_phi(self) -> bool:
        return not self.single_task and not self.freeze_phi

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Plain nested dict; ``None`` entries are dropped (TOML has no null)."""
        return _drop_none(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        nested = {"optimizer_w": OptimizerConfig, "optimizer_phi": OptimizerConfig, "hypergrad": HypergradConfig}
        for key, sub in nested.items():
            if key in data:
                base = getattr(cls(), key)
                data[key] = build_dataclass(sub, data[key], f"train.{key}", base)
        return build_dataclass(cls, data, "train")


def aux_on_train_mode(config: TrainConfig) -> TrainConfig:
    """Config whose auxiliary-set loss is evaluated on training batches instead."""
    return config.replace(aux_on_train=True)


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_drop_none(v) for v in obj]
    return obj


def build_dataclass(cls, data: dict[str, Any], where: str, base=None):
    """Instantiate ``cls`` from ``data``, rejecting unknown keys and invalid values."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"[{where}] must be a table, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    values = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)} if base is not None else {}
    values.update(data)
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid [{where}]: {exc}") from exc
