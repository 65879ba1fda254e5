"""Teacher network producing soft auxiliary labels, and the student loss that consumes them.

Each main class owns a block of M auxiliary classes. The teacher predicts a
distribution over the block of the sample's main class; the label is zero
elsewhere, and the student is penalized only inside that block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from auxilearn.autodiff import DualGraph, Node, ParamSet, as_float64, log_softmax, multiply, reduce_mean, reduce_sum, reshape, softmax
from auxilearn.errors import ContractError
from auxilearn.nn import MLP, DenseLayer, cross_entropy_per_sample, make_mlp, mlp_forward

Params = Mapping[str, Node]


def _one_hot(classes: np.ndarray, n: int) -> np.ndarray:
    classes = np.asarray(classes)
    if classes.dtype.kind not in "iu" or np.any(classes < 0) or np.any(classes >= n):
        raise ContractError(f"main class labels must be integers in [0, {n})")
    return np.eye(n)[classes]


@dataclass(frozen=True)
class LabelGenerator:
    n_in: int
    n_main: int
    M: int = 5
    hidden: tuple[int, ...] = (32,)
    masking: bool = True
    prefix: str = "phi.gen"

    def __post_init__(self):
        if self.M < 2:
            raise ContractError("need at least 2 auxiliary classes per main class")

    @property
    def aux_dim(self) -> int:
        return self.n_main * self.M

    @property
    def backbone(self) -> MLP:
        return make_mlp(f"{self.prefix}.body", [self.n_in, *self.hidden], "softplus", "softplus")

    @property
    def head(self) -> DenseLayer:
        return DenseLayer(f"{self.prefix}.head", self.hidden[-1], self.aux_dim)

    def init(self, rng: np.random.Generator) -> ParamSet:
        return self.backbone.init(rng).merged(ParamSet(self.head.init(rng)))

    def logits(self, params: Params, x: Node) -> Node:
        return self.head(params, mlp_forward(self.backbone, params, x))


def generate_labels(gen: LabelGenerator, params: Params, x: Node, main_class) -> Node:
    """Soft labels of shape (B, n_main * M), each row on the simplex."""
    logits = gen.logits(params, x)
    b = logits.shape[0]
    if not gen.masking:
        return softmax(logits, axis=-1)
    probs = softmax(reshape(logits, (b, gen.n_main, gen.M)), axis=-1)
    mask = _one_hot(main_class, gen.n_main)[:, :, None]
    return reshape(multiply(probs, mask), (b, gen.aux_dim))


@dataclass(frozen=True)
class StudentOutputs:
    main_logits: Node
    aux_logits: Node


@dataclass(frozen=True)
class StudentNet:
    """Primary network: shared backbone with a main head and an auxiliary head."""

    n_in: int
    n_main: int
    M: int = 5
    hidden: tuple[int, ...] = (32,)
    prefix: str = "w.student"

    @property
    def backbone(self) -> MLP:
        return make_mlp(f"{self.prefix}.body", [self.n_in, *self.hidden], "softplus", "softplus")

    @property
    def main_head(self) -> DenseLayer:
        return DenseLayer(f"{self.prefix}.main", self.hidden[-1], self.n_main)

    @property
    def aux_head(self) -> DenseLayer:
        return DenseLayer(f"{self.prefix}.aux", self.hidden[-1], self.n_main * self.M)

    def init(self, rng: np.random.Generator) -> ParamSet:
        body = self.backbone.init(rng)
        return body.merged(ParamSet(self.main_head.init(rng) + self.aux_head.init(rng)))

    def __call__(self, params: Params, x: Node) -> StudentOutputs:
        h = mlp_forward(self.backbone, params, x)
        return StudentOutputs(self.main_head(params, h), self.aux_head(params, h))


def aux_loss_per_sample(aux_logits: Node, y_aux, M: int, masking: bool = True) -> Node:
    """Soft-target cross-entropy of the auxiliary head, restricted to each sample's class block."""
    target = y_aux.value if isinstance(y_aux, Node) else as_float64(y_aux)
    if target.shape != aux_logits.shape:
        raise ContractError(f"aux target shape {target.shape} != aux logits shape {aux_logits.shape}")
    if np.any(target < -1e-6) or np.any(np.abs(target.sum(axis=-1) - 1.0) > 1e-6):
        raise ContractError("auxiliary target is not on the simplex")
    if not masking:
        return cross_entropy_per_sample(aux_logits, y_aux)
    b, dim = aux_logits.shape
    shape = (b, dim // M, M)
    logp = log_softmax(reshape(aux_logits, shape), axis=-1)
    t = reshape(y_aux, shape) if isinstance(y_aux, Node) else target.reshape(shape)
    return -reduce_sum(multiply(t, logp), axis=(1, 2))


def student_train_loss(
    outputs: StudentOutputs, y_main, y_aux, M: int, aux_scale: float = 1.0, masking: bool = True
) -> Node:
    """Batch mean of CE(main) + aux_scale * CE(aux head, soft labels)."""
    main = cross_entropy_per_sample(outputs.main_logits, np.asarray(y_main))
    aux = aux_loss_per_sample(outputs.aux_logits, y_aux, M, masking)
    return reduce_mean(main + aux * aux_scale)


def mean_label_entropy(gen: LabelGenerator, phi: ParamSet, x: np.ndarray, main_class) -> float:
    """Average entropy of the generated labels (nats), evaluated without recording."""
    graph = DualGraph()
    with graph.no_record():
        nodes = {k: graph.constant(v) for k, v in phi.items()}
        labels = generate_labels(gen, nodes, graph.constant(np.asarray(x, dtype=np.float64)), main_class).value
    safe = np.where(labels > 0, labels, 1.0)
    return float(-(labels * np.log(safe)).sum(axis=1).mean())
