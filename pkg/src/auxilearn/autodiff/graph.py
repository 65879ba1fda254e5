"""Define-by-run computation graph whose backward rules are themselves graph ops.

Every op computes its value eagerly when appended. Backward rules are written
in terms of the same ops, so a gradient taken with ``create_graph=True`` is an
ordinary node that can be differentiated again.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from auxilearn.errors import ConfigurationError, ContractError, NumericError


@dataclass
class _OpDef:
    forward: Callable[..., np.ndarray]
    backward: Callable | None
    smooth: bool = True


_OPS: dict[str, _OpDef] = {}


def _register(name, forward, backward, smooth=True):
    _OPS[name] = _OpDef(forward, backward, smooth)


def as_float64(value) -> np.ndarray:
    """Convert to a float64 array, rejecting lower-precision floating input."""
    arr = np.asarray(value)
    if arr.dtype.kind == "f" and arr.dtype != np.float64:
        raise ContractError(f"{arr.dtype} input rejected; only float64 is supported")
    if arr.dtype.kind not in "biuf":
        raise ContractError(f"unsupported dtype {arr.dtype}")
    return np.array(arr, dtype=np.float64)


class Node:
    """A value in a :class:`DualGraph` together with the op that produced it."""

    __slots__ = ("graph", "id", "op", "inputs", "attrs", "value", "name")
    __array_priority__ = 1000

    def __init__(self, graph, node_id, op, inputs, attrs, value, name=None):
        self.graph = graph
        self.id = node_id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def smooth(self) -> bool:
        return _OPS[self.op].smooth if self.op in _OPS else True

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"Node(id={self.id}, op={self.op!r}, shape={shape})"

    # arithmetic sugar; every operator routes through a registered op
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(_lift(self.graph, other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return multiply(self, power(other, -1.0))
        return multiply(self, 1.0 / as_float64(other))

    def __rtruediv__(self, other):
        return multiply(other, power(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class DualGraph:
    """Append-only node list plus a name -> parameter-node index."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self._recording = True

    def __len__(self):
        return len(self.nodes)

    @property
    def recording(self) -> bool:
        return self._recording

    @contextlib.contextmanager
    def no_record(self):
        """Ops created inside this block are detached constants (values only)."""
        prev = self._recording
        self._recording = False
        try:
            yield
        finally:
            self._recording = prev

    def _append(self, op, inputs, attrs, value, name=None) -> Node:
        if value is not None and not np.all(np.isfinite(value)):
            node_id = len(self.nodes) if self._recording else None
            raise NumericError(f"op {op!r} produced non-finite values (node {node_id})", node_id)
        if not self._recording:
            return Node(self, None, "constant", (), {}, value, name)
        node = Node(self, len(self.nodes), op, tuple(inputs), attrs, value, name)
        self.nodes.append(node)
        return node

    def constant(self, value, name=None) -> Node:
        return self._append("constant", (), {}, as_float64(value), name)

    def parameter(self, name: str, value=None) -> Node:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already exists in this graph")
        val = None if value is None else as_float64(value)
        node = self._append("parameter", (), {"name": name}, val, name)
        self.params[name] = node
        return node

    def bind(self, params) -> dict[str, Node]:
        """Create one parameter node per entry of a ParamSet."""
        return {name: self.parameter(name, value) for name, value in params.items()}

    def set_parameter(self, name: str, value) -> None:
        if name not in self.params:
            raise ConfigurationError(f"unknown parameter {name!r}")
        self.params[name].value = as_float64(value)


def apply(op: str, inputs: Sequence, **attrs) -> Node:
    graph = next((x.graph for x in inputs if isinstance(x, Node)), None)
    if graph is None:
        raise ContractError(f"op {op!r} needs at least one graph node input")
    nodes = [_lift(graph, x) for x in inputs]
    for n in nodes:
        if n.graph is not graph:
            raise ContractError("inputs belong to different graphs")
    values = [n.value for n in nodes]
    value = None
    if all(v is not None for v in values):
        value = _OPS[op].forward(attrs, *values)
    return graph._append(op, nodes, attrs, value)


def _lift(graph, x) -> Node:
    return x if isinstance(x, Node) else graph.constant(x)


def forward(graph: DualGraph, root, bindings=None) -> np.ndarray:
    """Re-evaluate every ancestor of ``root`` in id order and return its value.

    ``bindings`` optionally maps parameter names to new values before evaluation.
    """
    if isinstance(root, int):
        if not 0 <= root < len(graph.nodes):
            raise ContractError(f"no node with id {root}")
        root = graph.nodes[root]
    for name, value in (bindings or {}).items():
        graph.set_parameter(name, value)
    for node in ancestors(root):
        if node.op == "parameter":
            if node.value is None:
                raise ConfigurationError(f"parameter {node.attrs['name']!r} is unbound")
            continue
        if node.op == "constant":
            continue
        value = _OPS[node.op].forward(node.attrs, *[i.value for i in node.inputs])
        if not np.all(np.isfinite(value)):
            raise NumericError(f"op {node.op!r} produced non-finite values (node {node.id})", node.id)
        node.value = value
    return root.value


def ancestors(root: Node) -> list[Node]:
    """Recorded ancestors of ``root`` (inclusive) sorted topologically by id."""
    if root.id is None:
        return [root]
    seen = {root.id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for parent in node.inputs:
            if parent.id not in seen:
                seen[parent.id] = parent
                stack.append(parent)
    return [seen[k] for k in sorted(seen)]


# ----------------------------------------------------------------------------
# shape helpers


def _sum_to_value(x: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x.reshape(shape)


def _unbroadcast(g: Node, shape) -> Node:
    return g if g.shape == tuple(shape) else sum_to(g, shape)


def _keepdims_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def _expand_back(g: Node, shape, axis, keepdims) -> Node:
    if not keepdims:
        g = reshape(g, _keepdims_shape(shape, axis))
    return broadcast_to(g, shape)


# ----------------------------------------------------------------------------
# primitive ops: forward value rule + backward rule expressed in graph ops


def add(a, b) -> Node:
    return apply("add", (a, b))


_register(
    "add",
    lambda at, a, b: a + b,
    lambda n, g, need: (
        _unbroadcast(g, n.inputs[0].shape) if need[0] else None,
        _unbroadcast(g, n.inputs[1].shape) if need[1] else None,
    ),
)


def neg(a) -> Node:
    return apply("neg", (a,))


_register("neg", lambda at, a: -a, lambda n, g, need: (neg(g),))


def multiply(a, b) -> Node:
    return apply("multiply", (a, b))


def _multiply_bwd(n, g, need):
    a, b = n.inputs
    return (
        _unbroadcast(multiply(g, b), a.shape) if need[0] else None,
        _unbroadcast(multiply(g, a), b.shape) if need[1] else None,
    )


_register("multiply", lambda at, a, b: a * b, _multiply_bwd)


def matmul(a, b) -> Node:
    graph = a.graph if isinstance(a, Node) else b.graph
    a, b = _lift(graph, a), _lift(graph, b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ContractError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return apply("matmul", (a, b))


def _matmul_bwd(n, g, need):
    a, b = n.inputs
    ga = gb = None
    if a.ndim == 2 and b.ndim == 2:
        ga = matmul(g, transpose(b)) if need[0] else None
        gb = matmul(transpose(a), g) if need[1] else None
    elif a.ndim == 2:
        ga = matmul(reshape(g, (-1, 1)), reshape(b, (1, -1))) if need[0] else None
        gb = matmul(transpose(a), g) if need[1] else None
    elif b.ndim == 2:
        ga = matmul(b, g) if need[0] else None
        gb = matmul(reshape(a, (-1, 1)), reshape(g, (1, -1))) if need[1] else None
    else:
        ga = multiply(g, b) if need[0] else None
        gb = multiply(g, a) if need[1] else None
    return ga, gb


_register("matmul", lambda at, a, b: np.asarray(a @ b, dtype=np.float64), _matmul_bwd)


def transpose(a, axes=None) -> Node:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    return apply("transpose", (a,), axes=tuple(axes))


_register(
    "transpose",
    lambda at, a: np.ascontiguousarray(np.transpose(a, at["axes"])),
    lambda n, g, need: (transpose(g, tuple(np.argsort(n.attrs["axes"]))),),
)


def reshape(a, shape) -> Node:
    return apply("reshape", (a,), shape=tuple(shape))


_register(
    "reshape",
    lambda at, a: a.reshape(at["shape"]),
    lambda n, g, need: (reshape(g, n.inputs[0].shape),),
)


def broadcast_to(a, shape) -> Node:
    return apply("broadcast_to", (a,), shape=tuple(shape))


_register(
    "broadcast_to",
    lambda at, a: np.broadcast_to(a, at["shape"]).copy(),
    lambda n, g, need: (sum_to(g, n.inputs[0].shape),),
)


def sum_to(a, shape) -> Node:
    return apply("sum_to", (a,), shape=tuple(shape))


_register(
    "sum_to",
    lambda at, a: _sum_to_value(a, at["shape"]),
    lambda n, g, need: (broadcast_to(g, n.inputs[0].shape),),
)


def reduce_sum(a, axis=None, keepdims=False) -> Node:
    return apply("sum", (a,), axis=axis, keepdims=keepdims)


_register(
    "sum",
    lambda at, a: np.asarray(a.sum(axis=at["axis"], keepdims=at["keepdims"])),
    lambda n, g, need: (_expand_back(g, n.inputs[0].shape, n.attrs["axis"], n.attrs["keepdims"]),),
)


def reduce_mean(a, axis=None, keepdims=False) -> Node:
    return apply("mean", (a,), axis=axis, keepdims=keepdims)


def _mean_bwd(n, g, need):
    shape = n.inputs[0].shape
    count = n.inputs[0].size // n.size
    return (multiply(_expand_back(g, shape, n.attrs["axis"], n.attrs["keepdims"]), 1.0 / count),)


_register(
    "mean",
    lambda at, a: np.asarray(a.mean(axis=at["axis"], keepdims=at["keepdims"])),
    _mean_bwd,
)


def softplus(a) -> Node:
    return apply("softplus", (a,))


_register(
    "softplus",
    lambda at, a: np.logaddexp(0.0, a),
    lambda n, g, need: (multiply(g, sigmoid(n.inputs[0])),),
)


def sigmoid(a) -> Node:
    return apply("sigmoid", (a,))


_register(
    "sigmoid",
    lambda at, a: expit(a),
    lambda n, g, need: (multiply(g, multiply(n, add(1.0, neg(n)))),),
)


def log(a) -> Node:
    return apply("log", (a,))


_register("log", lambda at, a: np.log(a), lambda n, g, need: (multiply(g, power(n.inputs[0], -1.0)),))


def exp(a) -> Node:
    return apply("exp", (a,))


_register("exp", lambda at, a: np.exp(a), lambda n, g, need: (multiply(g, n),))


def square(a) -> Node:
    return apply("square", (a,))


_register(
    "square",
    lambda at, a: a * a,
    lambda n, g, need: (multiply(g, multiply(n.inputs[0], 2.0)),),
)


def power(a, p: float) -> Node:
    return apply("power", (a,), p=float(p))


def _power_bwd(n, g, need):
    p = n.attrs["p"]
    if p == 1.0:
        return (g,)
    return (multiply(g, multiply(power(n.inputs[0], p - 1.0), p)),)


_register("power", lambda at, a: np.power(a, at["p"]), _power_bwd)


def _softmax_value(a, axis):
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Node:
    return apply("softmax", (a,), axis=axis)


def _softmax_bwd(n, g, need):
    axis = n.attrs["axis"]
    inner = reduce_sum(multiply(g, n), axis=axis, keepdims=True)
    return (multiply(n, add(g, neg(inner))),)


_register("softmax", lambda at, a: _softmax_value(a, at["axis"]), _softmax_bwd)


def log_softmax(a, axis: int = -1) -> Node:
    return apply("log_softmax", (a,), axis=axis)


def _log_softmax_value(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return a - m - np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


def _log_softmax_bwd(n, g, need):
    axis = n.attrs["axis"]
    total = reduce_sum(g, axis=axis, keepdims=True)
    return (add(g, neg(multiply(softmax(n.inputs[0], axis), total))),)


_register("log_softmax", lambda at, a: _log_softmax_value(a, at["axis"]), _log_softmax_bwd)


def clip_min(a, minimum: float = 0.0) -> Node:
    """max(a, minimum). Non-smooth at the kink; its second derivative is zero."""
    return apply("clip_min", (a,), minimum=float(minimum))


def _clip_min_bwd(n, g, need):
    x = n.inputs[0]
    mask = (x.value > n.attrs["minimum"]).astype(np.float64)
    return (multiply(g, n.graph.constant(mask)),)


_register("clip_min", lambda at, a: np.maximum(a, at["minimum"]), _clip_min_bwd, smooth=False)


def relu(a) -> Node:
    return clip_min(a, 0.0)


def getitem(a, index) -> Node:
    return apply("slice", (a,), index=index)


_register(
    "slice",
    lambda at, a: np.array(a[at["index"]], dtype=np.float64),
    lambda n, g, need: (scatter(g, n.attrs["index"], n.inputs[0].shape),),
)


def scatter(a, index, shape) -> Node:
    """Adjoint of slicing: zeros of ``shape`` with ``a`` added at ``index``."""
    return apply("scatter", (a,), index=index, shape=tuple(shape))


def _scatter_value(at, a):
    out = np.zeros(at["shape"])
    np.add.at(out, at["index"], a)
    return out


_register(
    "scatter",
    _scatter_value,
    lambda n, g, need: (getitem(g, n.attrs["index"]),),
)


def stack(items: Sequence, axis: int = 0) -> Node:
    graph = next(x.graph for x in items if isinstance(x, Node))
    nodes = [_lift(graph, x) for x in items]
    return apply("stack", nodes, axis=axis)


def _stack_bwd(n, g, need):
    axis = n.attrs["axis"] % n.ndim
    prefix = (slice(None),) * axis
    return tuple(getitem(g, prefix + (i,)) if need[i] else None for i in range(len(n.inputs)))


_register("stack", lambda at, *xs: np.stack(xs, axis=at["axis"]), _stack_bwd)


def concatenate(items: Sequence, axis: int = 0) -> Node:
    graph = next(x.graph for x in items if isinstance(x, Node))
    nodes = [_lift(graph, x) for x in items]
    return apply("concatenate", nodes, axis=axis)


def _concat_bwd(n, g, need):
    axis = n.attrs["axis"] % n.ndim
    prefix = (slice(None),) * axis
    out, start = [], 0
    for inp, k in zip(n.inputs, need):
        stop = start + inp.shape[axis]
        out.append(getitem(g, prefix + (slice(start, stop),)) if k else None)
        start = stop
    return tuple(out)


_register("concatenate", lambda at, *xs: np.concatenate(xs, axis=at["axis"]), _concat_bwd)


def op_is_smooth(op: str) -> bool:
    return _OPS[op].smooth


def backward_rule(op: str):
    return _OPS[op].backward
