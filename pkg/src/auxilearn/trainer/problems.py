"""Primary-network / auxiliary-module pairings the training loop can drive.

A problem knows how to initialize W and phi, build the training objective
L_T(W; phi) and the main-task loss on a batch, and score a split.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from auxilearn.autodiff import DualGraph, Node, ParamSet, matmul, multiply, reduce_mean, stack
from auxilearn.combiner import Combiner, LossVector, combine, monomial_labels, project_monotone
from auxilearn.errors import ContractError
from auxilearn.labelgen import LabelGenerator, StudentNet, generate_labels, student_train_loss
from auxilearn.nn import cross_entropy
from auxilearn.trainer.data import Samples

Params = Mapping[str, Node]


class Problem:
    """Interface; ``metric_mode`` says whether a larger metric is better."""

    metric_name = "loss"
    metric_mode = "min"

    def init_w(self, rng: np.random.Generator) -> ParamSet:
        raise NotImplementedError

    def init_phi(self, rng: np.random.Generator) -> ParamSet:
        raise NotImplementedError

    def train_loss(self, w: Params, phi: Params, batch: Samples, use_aux: bool = True) -> Node:
        raise NotImplementedError

    def main_loss(self, w: Params, batch: Samples) -> Node:
        raise NotImplementedError

    def metric(self, w: ParamSet, samples: Samples) -> float:
        raise NotImplementedError

    def project(self, phi: ParamSet) -> ParamSet:
        return project_monotone(phi)

    def task_weights(self, phi: ParamSet) -> dict[str, float]:
        """Per-task weights worth logging, empty when the auxiliary module has none."""
        return {}


@dataclass(frozen=True)
class LinearRegressor:
    """Shared linear predictor x -> w.x (+ b) used for every task."""

    dim: int
    bias: bool = False
    prefix: str = "w.lin"

    def init(self, rng: np.random.Generator) -> ParamSet:
        entries = [(f"{self.prefix}.weight", rng.normal(0.0, 0.1, self.dim))]
        if self.bias:
            entries.append((f"{self.prefix}.bias", np.zeros(())))
        return ParamSet(entries)

    def __call__(self, params: Params, x: Node) -> Node:
        out = matmul(x, params[f"{self.prefix}.weight"])
        if self.bias:
            out = out + params[f"{self.prefix}.bias"]
        return out


def _graph_constant(params: Params, value: np.ndarray) -> Node:
    graph: DualGraph = next(iter(params.values())).graph
    return graph.constant(value)


@dataclass
class RegressionCombinerProblem(Problem):
    """One shared regressor, squared-error per task, tasks combined by ``combiner``."""

    model: LinearRegressor
    combiner: Combiner

    metric_name = "mse"
    metric_mode = "min"

    def init_w(self, rng):
        return self.model.init(rng)

    def init_phi(self, rng):
        return self.combiner.init(rng)

    def _targets(self, batch: Samples, use_aux: bool) -> np.ndarray:
        y = np.asarray(batch.y, dtype=np.float64)[:, None]
        if not use_aux:
            return y
        if batch.aux is None or batch.aux.shape[1] != self.combiner.n_aux:
            raise ContractError(f"batch needs {self.combiner.n_aux} auxiliary label columns")
        return np.concatenate([y, batch.aux], axis=1)

    def loss_vector(self, w: Params, batch: Samples, use_aux: bool = True) -> LossVector:
        x = _graph_constant(w, batch.x)
        pred = self.model(w, x)
        targets = self._targets(batch, use_aux)
        pred_cols = stack([pred] * targets.shape[1], axis=1)
        diff = pred_cols - targets
        return LossVector(multiply(diff, diff))

    def train_loss(self, w, phi, batch, use_aux=True):
        losses = self.loss_vector(w, batch, use_aux)
        if not use_aux:
            return reduce_mean(losses.main)
        return combine(self.combiner, phi, losses)

    def main_loss(self, w, batch):
        return reduce_mean(self.loss_vector(w, batch, use_aux=False).main)

    def predict(self, w: ParamSet, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64) @ w[f"{self.model.prefix}.weight"]
        if self.model.bias:
            out = out + w[f"{self.model.prefix}.bias"]
        return out

    def metric(self, w, samples):
        return float(np.mean((self.predict(w, samples.x) - samples.y) ** 2))

    def task_weights(self, phi):
        if self.combiner.kind in ("linear", "deep_linear"):
            vec = self.combiner.collapse(phi)
            return {f"aux{j + 1}": float(v) for j, v in enumerate(vec)}
        if self.combiner.kind == "poly_linear":
            layer = self.combiner.network().layers[0]
            vec = phi[f"{layer.name}.weight"][0]
            labels = monomial_labels(self.combiner.n_aux, self.combiner.degree)
            return dict(zip(labels, map(float, vec)))
        return {}


@dataclass
class LabelGenProblem(Problem):
    """Student classifier trained on its main labels plus teacher-generated soft labels."""

    student: StudentNet
    generator: LabelGenerator
    aux_scale: float = 1.0

    metric_name = "accuracy"
    metric_mode = "max"

    def __post_init__(self):
        if (self.student.n_main, self.student.M) != (self.generator.n_main, self.generator.M):
            raise ContractError("student and generator disagree on the auxiliary label layout")

    def init_w(self, rng):
        return self.student.init(rng)

    def init_phi(self, rng):
        return self.generator.init(rng)

    def train_loss(self, w, phi, batch, use_aux=True):
        x = _graph_constant(w, batch.x)
        y = np.asarray(batch.y)
        out = self.student(w, x)
        if not use_aux:
            return cross_entropy(out.main_logits, y)
        labels = generate_labels(self.generator, phi, x, y)
        return student_train_loss(out, y, labels, self.generator.M, self.aux_scale, self.generator.masking)

    def main_loss(self, w, batch):
        x = _graph_constant(w, batch.x)
        return cross_entropy(self.student(w, x).main_logits, np.asarray(batch.y))

    def _eval(self, fn, params: ParamSet, x: np.ndarray) -> np.ndarray:
        graph = DualGraph()
        with graph.no_record():
            nodes = {k: graph.constant(v) for k, v in params.items()}
            return fn(nodes, graph.constant(np.asarray(x, dtype=np.float64)))

    def predict(self, w: ParamSet, x: np.ndarray) -> np.ndarray:
        logits = self._eval(lambda p, xn: self.student(p, xn).main_logits.value, w, x)
        return np.argmax(logits, axis=1)

    def metric(self, w, samples):
        return float(np.mean(self.predict(w, samples.x) == samples.y))

    def hard_aux_labels(self, phi: ParamSet, x: np.ndarray, main_class: np.ndarray) -> np.ndarray:
        """argmax of the generated soft labels: a global auxiliary class id per sample."""
        labels = self._eval(lambda p, xn: generate_labels(self.generator, p, xn, main_class).value, phi, x)
        return np.argmax(labels, axis=1)

    def project(self, phi):
        return phi
