"""Auxiliary networks that turn task losses into one training objective.

The training loss is always ``l_main + g(losses; phi)``: the main loss enters
through a skip connection and ``g`` is one of

* ``linear``: ``sum_j phi_j * l_j`` over the K auxiliary losses;
* ``deep_linear``: a bias-free stack of linear layers over the auxiliary losses;
* ``nonlinear``: a softplus MLP over the full loss vector (main + auxiliaries);
* ``poly_linear``: linear weights over all monomials of the full loss vector;
* ``convnet``: a small CNN over a (1+K)-channel loss image, mean-pooled to a scalar.

With ``monotone=True`` weights are kept nonnegative (see :func:`project_monotone`)
and the output head is a shifted softplus, so g is nondecreasing in every loss.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from auxilearn.autodiff import (
    DualGraph,
    Node,
    ParamSet,
    add,
    getitem,
    gradients,
    multiply,
    reduce_mean,
    reduce_sum,
    softplus,
    stack,
)
from auxilearn.errors import ContractError
from auxilearn.nn import MLP, Conv2dLayer, DenseLayer, make_mlp, mlp_forward

KINDS = ("linear", "deep_linear", "nonlinear", "convnet", "poly_linear")
WEIGHT_SUFFIXES = (".weight", ".direction", ".scale", ".kernels")
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class LossVector:
    """Per-sample losses: ``values[..., 0]`` is the main loss, the rest are auxiliaries."""

    values: Node
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.values.ndim not in (1, 2):
            raise ContractError("loss vector values must be (1+K,) or (B, 1+K)")
        if self.labels and len(self.labels) != self.values.shape[-1]:
            raise ContractError("one label per loss entry required")

    @classmethod
    def from_nodes(cls, main: Node, aux: Sequence[Node], labels: Sequence[str] = ()) -> "LossVector":
        return cls(stack([main, *aux], axis=-1), tuple(labels))

    @property
    def n_aux(self) -> int:
        return self.values.shape[-1] - 1

    @property
    def main(self) -> Node:
        return getitem(self.values, (..., 0))

    @property
    def aux(self) -> Node:
        return getitem(self.values, (..., slice(1, None)))

    @property
    def task_labels(self) -> tuple[str, ...]:
        if self.labels:
            return self.labels
        return ("main",) + tuple(f"aux{j}" for j in range(1, self.n_aux + 1))


@dataclass(frozen=True)
class LossImage:
    """Per-pixel losses with one channel per task, channel 0 the main task."""

    values: Node

    def __post_init__(self):
        if self.values.ndim not in (3, 4):
            raise ContractError("loss image must be (1+K, H, W) or (B, 1+K, H, W)")

    @property
    def batched(self) -> Node:
        v = self.values
        return v if v.ndim == 4 else v.reshape((1,) + v.shape)

    @property
    def n_aux(self) -> int:
        return self.values.shape[-3] - 1


def _monomials(n: int, degree: int) -> list[tuple[int, ...]]:
    return [c for d in range(1, degree + 1) for c in itertools.combinations_with_replacement(range(n), d)]


def poly_feature_count(n: int, degree: int) -> int:
    return len(_monomials(n, degree))


def _poly_values(values: Node, degree: int) -> tuple[Node, list[tuple[int, ...]]]:
    combos = _monomials(values.shape[-1], degree)
    cols = [getitem(values, (..., i)) for i in range(values.shape[-1])]
    feats = []
    for combo in combos:
        term = cols[combo[0]]
        for i in combo[1:]:
            term = multiply(term, cols[i])
        feats.append(term)
    return stack(feats, axis=-1), combos


def poly_features(losses: LossVector, degree: int) -> LossVector:
    """All monomials of the loss entries up to ``degree``, in graded lexicographic order."""
    if degree < 1:
        raise ContractError("degree must be >= 1")
    feats, combos = _poly_values(losses.values, degree)
    names = losses.task_labels
    labels = tuple(_monomial_name(names, c) for c in combos)
    return LossVector(feats, labels)


def monomial_labels(n_aux: int, degree: int) -> tuple[str, ...]:
    """Names of the poly_linear features for a main task plus ``n_aux`` auxiliaries."""
    names = ("main",) + tuple(f"aux{j}" for j in range(1, n_aux + 1))
    return tuple(_monomial_name(names, c) for c in _monomials(n_aux + 1, degree))


def _monomial_name(names: Sequence[str], combo: tuple[int, ...]) -> str:
    counts: dict[int, int] = {}
    for i in combo:
        counts[i] = counts.get(i, 0) + 1
    return "*".join(names[i] if k == 1 else f"{names[i]}^{k}" for i, k in counts.items())


@dataclass(frozen=True)
class Combiner:
    """Architecture of g(.; phi). ``n_aux`` is K, the number of auxiliary losses."""

    kind: str
    n_aux: int
    monotone: bool = True
    depth: int = 5
    width: int = 10
    degree: int = 2
    weight_norm: bool = False
    channels: int = 8
    kernel: int = 3
    padding: int = 0
    per_sample: bool = True
    init_weight: float | None = None
    prefix: str = "phi"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown combiner kind {self.kind!r}; expected one of {KINDS}")
        if self.n_aux < 0:
            raise ContractError("n_aux must be >= 0")
        if self.kind == "poly_linear" and self.degree < 1:
            raise ContractError("poly_linear needs degree >= 1")
        if self.kind in ("deep_linear", "convnet") and self.depth < 1:
            raise ContractError("depth must be >= 1")

    # -- structure -----------------------------------------------------------

    @property
    def n_inputs(self) -> int:
        k = self.n_aux
        if self.kind in ("linear", "deep_linear"):
            return k
        if self.kind == "poly_linear":
            return poly_feature_count(k + 1, self.degree)
        return k + 1

    def network(self) -> MLP:
        if self.kind == "convnet":
            raise ContractError("convnet combiner has no MLP body; see conv_layers()")
        name = f"{self.prefix}.{self.kind}."
        if self.kind in ("linear", "poly_linear"):
            return make_mlp(name, [self.n_inputs, 1], out_activation="identity",
                            nonnegative=self.monotone, bias=False)
        if self.kind == "deep_linear":
            sizes = [self.n_inputs] + [self.width] * (self.depth - 1) + [1]
            return make_mlp(name, sizes, hidden_activation="identity", out_activation="identity",
                            nonnegative=self.monotone, bias=False)
        sizes = [self.n_inputs] + [self.width] * self.depth + [1]
        return make_mlp(name, sizes, hidden_activation="softplus", out_activation="identity",
                        nonnegative=self.monotone, weight_norm=self.weight_norm)

    def conv_layers(self) -> list[Conv2dLayer]:
        chans = [self.n_aux + 1] + [self.channels] * (self.depth - 1) + [1]
        return [
            Conv2dLayer(
                name=f"{self.prefix}.convnet.{i}",
                c_in=a,
                c_out=b,
                kernel=self.kernel,
                padding=self.padding,
                activation="softplus" if i < self.depth - 1 else "identity",
                nonnegative=self.monotone,
            )
            for i, (a, b) in enumerate(zip(chans, chans[1:]))
        ]

    def init(self, rng: np.random.Generator) -> ParamSet:
        if self.kind == "convnet":
            return ParamSet(item for layer in self.conv_layers() for item in layer.init(rng))
        params = self.network().init(rng)
        if self.init_weight is not None and self.kind in ("linear", "poly_linear"):
            params = params.map(lambda k, v: np.full_like(v, self.init_weight))
        return params

    def zeros(self) -> ParamSet:
        rng = np.random.default_rng(0)
        return self.init(rng).zeros_like()

    # -- evaluation ----------------------------------------------------------

    def _head(self, z: Node) -> Node:
        return softplus(z) - _LN2 if self.monotone else z

    def g(self, phi: Mapping[str, Node], losses: Node) -> Node:
        """Per-sample auxiliary term g for a (..., 1+K) loss array."""
        if losses.shape[-1] != self.n_aux + 1:
            raise ContractError(f"combiner expects {self.n_aux + 1} losses, got {losses.shape[-1]}")
        if self.kind == "convnet":
            raise ContractError("convnet combiner requires a LossImage")
        if self.kind in ("linear", "deep_linear"):
            inputs = getitem(losses, (..., slice(1, None)))
        elif self.kind == "poly_linear":
            inputs, _ = _poly_values(losses, self.degree)
        else:
            inputs = losses
        out = getitem(mlp_forward(self.network(), phi, inputs), (..., 0))
        return self._head(out) if self.kind == "nonlinear" else out

    def g_image(self, phi: Mapping[str, Node], image: Node) -> Node:
        """Per-sample g for a (B, 1+K, H, W) loss image."""
        if self.kind != "convnet":
            raise ContractError(f"{self.kind} combiner does not accept a LossImage")
        if image.shape[1] != self.n_aux + 1:
            raise ContractError(f"combiner expects {self.n_aux + 1} channels, got {image.shape[1]}")
        h = image
        for layer in self.conv_layers():
            h = layer(phi, h)
        pooled = reduce_mean(h, axis=(1, 2, 3))
        return self._head(pooled)

    def collapse(self, phi: ParamSet) -> np.ndarray:
        """Single equivalent weight vector of a deep linear combiner (product of layer matrices)."""
        if self.kind not in ("linear", "deep_linear"):
            raise ContractError("only linear kinds collapse to one weight vector")
        mat = np.eye(self.n_aux)
        for layer in self.network().layers:
            mat = phi[f"{layer.name}.weight"] @ mat
        return mat[0]


def _phi_nodes(graph: DualGraph, phi) -> Mapping[str, Node]:
    if not isinstance(phi, ParamSet):
        return phi
    return {k: graph.params[k] if k in graph.params else graph.parameter(k, v) for k, v in phi.items()}


def _graph_of(losses) -> DualGraph:
    return losses.values.graph


def combine(combiner: Combiner, phi, losses: LossVector | LossImage) -> Node:
    """Scalar training objective: batch mean of ``l_main + g(l; phi)``."""
    graph = _graph_of(losses)
    nodes = _phi_nodes(graph, phi)
    if isinstance(losses, LossImage):
        if combiner.kind != "convnet":
            raise ContractError(f"{combiner.kind} combiner does not accept a LossImage")
        image = losses.batched
        main = reduce_mean(getitem(image, (slice(None), 0)), axis=(1, 2))
        return reduce_mean(add(main, combiner.g_image(nodes, image)))
    if combiner.kind == "convnet":
        raise ContractError("convnet combiner requires a LossImage")
    values = losses.values
    if values.ndim == 1 or combiner.per_sample:
        return reduce_mean(add(losses.main, combiner.g(nodes, values)))
    batch_mean = reduce_mean(values, axis=0)
    return add(getitem(batch_mean, 0), combiner.g(nodes, batch_mean))


def adaptive_weights(combiner: Combiner, phi, losses: LossVector | LossImage) -> np.ndarray:
    """Effective per-sample task weights d g / d l_j.

    For a loss vector returns an array shaped like the losses (entry 0 belongs
    to the main loss). For a loss image returns the per-pixel map
    ``sum_j dL_T / dl_j`` of shape (B, H, W).
    """
    graph = _graph_of(losses)
    nodes = _phi_nodes(graph, phi)
    if isinstance(losses, LossImage):
        total = combine(combiner, nodes, losses)
        (gimg,) = gradients(total, [losses.values])
        return gimg.value.sum(axis=-3)
    total = reduce_sum(combiner.g(nodes, losses.values))
    (gl,) = gradients(total, [losses.values])
    return gl.value


def project_monotone(phi: ParamSet) -> ParamSet:
    """Clip every weight entry (not biases) to be nonnegative. Idempotent."""
    return phi.map(lambda k, v: np.maximum(v, 0.0) if k.endswith(WEIGHT_SUFFIXES) else v)
