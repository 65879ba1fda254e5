"""SGD with momentum and Adam over ParamSets."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from auxilearn.autodiff import ParamSet
from auxilearn.errors import ConfigurationError


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-2
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")


class Optimizer:
    def __init__(self, config: OptimizerConfig, params: ParamSet):
        self.config = config
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        cfg = self.config
        self.t += 1
        new, m_new, v_new = [], [], []
        for name, p in params.items():
            g = grads[name]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            if cfg.kind == "sgd":
                m = cfg.momentum * self.m[name] + g
                p = p - cfg.lr * m
                v = self.v[name]
            else:
                m = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * g
                v = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * g * g
                m_hat = m / (1 - cfg.beta1**self.t)
                v_hat = v / (1 - cfg.beta2**self.t)
                p = p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            new.append((name, p))
            m_new.append((name, m))
            v_new.append((name, v))
        self.m, self.v = ParamSet(m_new), ParamSet(v_new)
        return ParamSet(new)

    def state_dict(self) -> dict:
        return {"config": asdict(self.config), "t": self.t, "m": self.m.to_json(), "v": self.v.to_json()}

    def load_state_dict(self, state: dict) -> None:
        self.config = OptimizerConfig(**state["config"])
        self.t = int(state["t"])
        self.m = ParamSet.from_json(state["m"])
        self.v = ParamSet.from_json(state["v"])
