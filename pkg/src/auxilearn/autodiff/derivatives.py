"""Reverse-mode gradients, Hessian-vector and mixed vector-Jacobian products."""
from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

from auxilearn.autodiff.graph import DualGraph, Node, ancestors, backward_rule, multiply, reduce_sum
from auxilearn.autodiff.paramset import ParamSet
from auxilearn.errors import ConfigurationError, ContractError


def gradients(output: Node, inputs: Sequence[Node], create_graph: bool = False) -> list[Node]:
    """d output / d input for each input, as nodes.

    With ``create_graph`` the backward pass is recorded so the results can be
    differentiated again; otherwise results are detached constants. Inputs the
    output does not depend on get zero gradients.
    """
    if output.value is None:
        raise ConfigurationError("output has not been evaluated (unbound parameter?)")
    if output.size != 1:
        raise ContractError(f"gradient requires a scalar output, got shape {output.shape}")
    graph: DualGraph = output.graph
    targets = {id(n) for n in inputs}
    order = ancestors(output)
    needed: dict[int, bool] = {}
    for node in order:
        needed[id(node)] = id(node) in targets or any(needed.get(id(p), False) for p in node.inputs)

    ctx = contextlib.nullcontext() if create_graph else graph.no_record()
    grads: dict[int, Node] = {}
    with ctx:
        grads[id(output)] = graph.constant(np.ones(output.shape))
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or not node.inputs or not needed[id(node)]:
                continue
            need = tuple(needed.get(id(p), False) for p in node.inputs)
            parts = backward_rule(node.op)(node, g, need)
            for parent, part, k in zip(node.inputs, parts, need):
                if not k or part is None:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = part if prev is None else prev + part
        return [grads.get(id(n)) or graph.constant(np.zeros(n.shape)) for n in inputs]


def _param_nodes(graph: DualGraph, params: ParamSet) -> list[Node]:
    missing = [name for name in params if name not in graph.params]
    if missing:
        raise ConfigurationError(f"parameters not bound in graph: {missing}")
    return [graph.params[name] for name in params]


def grad(graph: DualGraph, output: Node, wrt: ParamSet, create_graph: bool = False):
    """Gradient of a scalar node with respect to the graph parameters named in ``wrt``.

    Returns a ParamSet of arrays, or a ``name -> Node`` dict when ``create_graph``.
    """
    nodes = _param_nodes(graph, wrt)
    gs = gradients(output, nodes, create_graph=create_graph)
    if create_graph:
        return dict(zip(wrt.names, gs))
    return ParamSet((name, g.value) for name, g in zip(wrt.names, gs))


def _flat(values: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([v.ravel() for v in values]) if values else np.zeros(0)


def _split(vec: np.ndarray, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    out, start = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(vec[start : start + size].reshape(shape))
        start += size
    return out


def _contract(graph: DualGraph, grads: Sequence[Node], vec: np.ndarray) -> Node:
    pieces = _split(vec, [g.shape for g in grads])
    total = None
    for g, piece in zip(grads, pieces):
        term = reduce_sum(multiply(g, graph.constant(piece)))
        total = term if total is None else total + term
    return total


class HessianOperator:
    """Reusable v -> v·H for H = d²loss/dparams², sharing one first-order graph.

    Also exposes the mixed product p -> p·(d/dphi d/dparams loss).
    """

    def __init__(self, loss: Node, params: ParamSet):
        self.graph = loss.graph
        self.loss = loss
        self.params = params
        self.nodes = _param_nodes(self.graph, params)
        self.dim = params.size
        self.first = gradients(loss, self.nodes, create_graph=True)

    def gradient(self) -> np.ndarray:
        return _flat([g.value for g in self.first])

    def _check(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.dim:
            raise ContractError(f"vector has length {vec.size}, expected {self.dim}")
        return vec

    def hvp(self, v) -> np.ndarray:
        v = self._check(v)
        if self.dim == 0:
            return np.zeros(0)
        dot = _contract(self.graph, self.first, v)
        return _flat([g.value for g in gradients(dot, self.nodes)])

    def mixed_vjp(self, p, phi: ParamSet) -> np.ndarray:
        p = self._check(p)
        phi_nodes = _param_nodes(self.graph, phi)
        if phi.size == 0:
            return np.zeros(0)
        dot = _contract(self.graph, self.first, p)
        return _flat([g.value for g in gradients(dot, phi_nodes)])

    def dense(self) -> np.ndarray:
        """Materialize H column by column from basis-vector products."""
        eye = np.eye(self.dim)
        return np.stack([self.hvp(e) for e in eye], axis=1) if self.dim else np.zeros((0, 0))


def hvp(loss: Node, params: ParamSet, v) -> np.ndarray:
    """v·H with H the Hessian of ``loss`` in ``params`` (flattened order)."""
    op = HessianOperator(loss, params)
    return op.hvp(v)


def mixed_vjp(loss: Node, params_w: ParamSet, params_phi: ParamSet, p) -> np.ndarray:
    """p·(d/dphi d/dW loss): a vector of length |phi|."""
    op = HessianOperator(loss, params_w)
    return op.mixed_vjp(p, params_phi)


def dense_hessian(loss: Node, params: ParamSet) -> np.ndarray:
    return HessianOperator(loss, params).dense()
