"""Dense, weight-normalized and convolutional layers, plus the losses used by both networks.

Layers are architecture descriptions only; their parameters live in a ParamSet
under ``<layer name>.<field>`` keys and are passed in as graph nodes, so the
same description serves the primary network (W) and the auxiliary network (phi).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from auxilearn.autodiff import (
    Node,
    ParamSet,
    add,
    as_float64,
    getitem,
    log_softmax,
    matmul,
    multiply,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter,
    sigmoid,
    softplus,
    transpose,
)
from auxilearn.errors import ContractError

ACTIVATIONS = ("identity", "softplus", "sigmoid", "relu")
SMOOTH_ACTIVATIONS = ("identity", "softplus", "sigmoid")

Params = Mapping[str, Node]


def activate(x: Node, name: str) -> Node:
    if name == "identity":
        return x
    if name == "softplus":
        return softplus(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "relu":
        return relu(x)
    raise ContractError(f"unknown activation {name!r}")


def uniform_init(rng: np.random.Generator, shape, fan_in: int, nonnegative: bool = False) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=shape)
    return np.abs(w) if nonnegative else w


@dataclass(frozen=True)
class DenseLayer:
    name: str
    n_in: int
    n_out: int
    activation: str = "identity"
    nonnegative: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def weight_names(self) -> tuple[str, ...]:
        return (f"{self.name}.weight",)

    def init(self, rng: np.random.Generator) -> list[tuple[str, np.ndarray]]:
        out = [(f"{self.name}.weight", uniform_init(rng, (self.n_out, self.n_in), self.n_in, self.nonnegative))]
        if self.bias:
            out.append((f"{self.name}.bias", uniform_init(rng, (self.n_out,), self.n_in)))
        return out

    def effective_weight(self, params: Params) -> Node:
        return params[f"{self.name}.weight"]

    def __call__(self, params: Params, x: Node) -> Node:
        if x.shape[-1] != self.n_in:
            raise ContractError(f"layer {self.name}: expected last dim {self.n_in}, got {x.shape}")
        h = matmul(x, transpose(self.effective_weight(params)))
        if self.bias:
            h = add(h, params[f"{self.name}.bias"])
        return activate(h, self.activation)


@dataclass(frozen=True)
class WeightNormDenseLayer(DenseLayer):
    """Dense layer with weight = scale * direction / ||direction row||."""

    eps: float = 1e-12

    @property
    def weight_names(self) -> tuple[str, ...]:
        return (f"{self.name}.direction", f"{self.name}.scale")

    def init(self, rng):
        direction = uniform_init(rng, (self.n_out, self.n_in), self.n_in, self.nonnegative)
        out = [
            (f"{self.name}.direction", direction),
            (f"{self.name}.scale", np.linalg.norm(direction, axis=1)),
        ]
        if self.bias:
            out.append((f"{self.name}.bias", uniform_init(rng, (self.n_out,), self.n_in)))
        return out

    def effective_weight(self, params):
        d = params[f"{self.name}.direction"]
        norms = power(add(reduce_sum(multiply(d, d), axis=1, keepdims=True), self.eps), 0.5)
        scale = reshape(params[f"{self.name}.scale"], (self.n_out, 1))
        return multiply(multiply(d, power(norms, -1.0)), scale)


@dataclass(frozen=True)
class MLP:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ContractError(f"layer {a.name} outputs {a.n_out} but {b.name} expects {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def weight_names(self) -> list[str]:
        return [n for layer in self.layers for n in layer.weight_names]

    def init(self, rng: np.random.Generator) -> ParamSet:
        return ParamSet(item for layer in self.layers for item in layer.init(rng))

    def __call__(self, params: Params, x: Node) -> Node:
        return mlp_forward(self, params, x)


def make_mlp(
    prefix: str,
    sizes: Sequence[int],
    hidden_activation: str = "softplus",
    out_activation: str = "identity",
    nonnegative: bool = False,
    weight_norm: bool = False,
    bias: bool = True,
) -> MLP:
    cls = WeightNormDenseLayer if weight_norm else DenseLayer
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(
            cls(
                name=f"{prefix}{i}",
                n_in=a,
                n_out=b,
                activation=out_activation if last else hidden_activation,
                nonnegative=nonnegative,
                bias=bias,
            )
        )
    return MLP(tuple(layers))


def mlp_forward(net: MLP, params: Params, x: Node) -> Node:
    if x.shape[-1] != net.n_in:
        raise ContractError(f"input last dim {x.shape[-1]} != network input size {net.n_in}")
    h = x
    for layer in net.layers:
        h = layer(params, h)
    return h


# ----------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _patch_index(c: int, h: int, w: int, kh: int, kw: int, stride: int) -> np.ndarray:
    """Flat indices into a (c, h, w) image: rows are (c, i, j) taps, columns are output positions."""
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(kh), np.arange(kw), indexing="ij")
    oi, oj = np.meshgrid(np.arange(ho) * stride, np.arange(wo) * stride, indexing="ij")
    rows = (ci.ravel()[:, None] * h * w) + (ki.ravel()[:, None] + oi.ravel()[None, :]) * w
    return rows + kj.ravel()[:, None] + oj.ravel()[None, :]


def conv2d(x: Node, kernels: Node, bias: Node | None = None, stride: int = 1, padding: int = 0) -> Node:
    """Cross-correlation of a (B, C, H, W) batch with (O, C, kh, kw) kernels."""
    if x.ndim != 4 or kernels.ndim != 4:
        raise ContractError("conv2d expects (B, C, H, W) input and (O, C, kh, kw) kernels")
    b, c, h, w = x.shape
    o, c2, kh, kw = kernels.shape
    if c != c2:
        raise ContractError(f"input has {c} channels, kernels expect {c2}")
    if padding:
        hp, wp = h + 2 * padding, w + 2 * padding
        index = (slice(None), slice(None), slice(padding, padding + h), slice(padding, padding + w))
        x = scatter(x, index, (b, c, hp, wp))
        h, w = hp, wp
    ho, wo = conv_output_size(h, kh, stride, 0), conv_output_size(w, kw, stride, 0)
    if ho < 1 or wo < 1:
        raise ContractError(f"kernel {kh}x{kw} does not fit a {h}x{w} input")
    idx = _patch_index(c, h, w, kh, kw, stride)
    cols = getitem(reshape(x, (b, c * h * w)), (slice(None), idx))  # (B, C*kh*kw, L)
    cols = reshape(transpose(cols, (1, 0, 2)), (c * kh * kw, b * ho * wo))
    out = matmul(reshape(kernels, (o, c * kh * kw)), cols)  # (O, B*L)
    out = transpose(reshape(out, (o, b, ho, wo)), (1, 0, 2, 3))
    if bias is not None:
        out = add(out, reshape(bias, (1, o, 1, 1)))
    return out


@dataclass(frozen=True)
class Conv2dLayer:
    name: str
    c_in: int
    c_out: int
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    activation: str = "identity"
    nonnegative: bool = False

    @property
    def weight_names(self) -> tuple[str, ...]:
        return (f"{self.name}.kernels",)

    def init(self, rng):
        fan_in = self.c_in * self.kernel * self.kernel
        shape = (self.c_out, self.c_in, self.kernel, self.kernel)
        return [
            (f"{self.name}.kernels", uniform_init(rng, shape, fan_in, self.nonnegative)),
            (f"{self.name}.bias", uniform_init(rng, (self.c_out,), fan_in)),
        ]

    def __call__(self, params: Params, x: Node) -> Node:
        h = conv2d(x, params[f"{self.name}.kernels"], params[f"{self.name}.bias"], self.stride, self.padding)
        return activate(h, self.activation)


# ----------------------------------------------------------------------------
# losses


def _check_simplex(target: np.ndarray, tol: float = 1e-6) -> None:
    if np.any(target < -tol) or np.any(np.abs(target.sum(axis=-1) - 1.0) > tol):
        raise ContractError("soft target is not on the probability simplex")


def cross_entropy_per_sample(logits: Node, target, axis: int = -1) -> Node:
    """-sum(target * log softmax(logits)) along ``axis``.

    ``target`` is an integer class index array (hard) or a distribution
    (array or node) of the same shape as ``logits`` (soft).
    """
    if not np.all(np.isfinite(logits.value)):
        raise ContractError("logits must be finite")
    if isinstance(target, Node) or np.asarray(target).shape == logits.shape:
        tvalue = target.value if isinstance(target, Node) else as_float64(target)
        if tvalue.shape != logits.shape:
            raise ContractError(f"soft target shape {tvalue.shape} != logits shape {logits.shape}")
        _check_simplex(np.moveaxis(tvalue, axis, -1))
        t = target
    else:
        idx = np.asarray(target)
        if idx.dtype.kind not in "iu":
            raise ContractError("hard targets must be integer class indices")
        n_classes = logits.shape[axis]
        if np.any(idx < 0) or np.any(idx >= n_classes):
            raise ContractError("class index out of range")
        t = np.moveaxis(np.eye(n_classes)[idx], -1, axis)
    return -reduce_sum(multiply(t, log_softmax(logits, axis)), axis=axis)


def cross_entropy(logits: Node, target) -> Node:
    """Batch-mean cross-entropy; a 1-D logits vector is a single sample."""
    per = cross_entropy_per_sample(logits, target)
    return reduce_mean(per)


def squared_error(pred: Node, target) -> Node:
    """Mean of squared differences."""
    tshape = target.shape if isinstance(target, Node) else np.shape(target)
    if tuple(pred.shape) != tuple(tshape):
        raise ContractError(f"prediction shape {pred.shape} != target shape {tshape}")
    diff = pred - target
    return reduce_mean(multiply(diff, diff))
