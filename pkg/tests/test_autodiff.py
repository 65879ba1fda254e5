import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from auxilearn.autodiff import (
    add,
    DualGraph,
    HessianOperator,
    ParamSet,
    broadcast_to,
    clip_min,
    concatenate,
    dense_hessian,
    exp,
    forward,
    getitem,
    grad,
    gradients,
    hvp,
    log,
    log_softmax,
    matmul,
    mixed_vjp,
    multiply,
    op_is_smooth,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter,
    sigmoid,
    softmax,
    softplus,
    square,
    stack,
    sum_to,
    transpose,
)
from auxilearn.errors import ConfigurationError, ContractError, NumericError

seeds = st.integers(0, 2**31 - 1)


def P(**values):
    return ParamSet(values)


def scalar_graph(**values):
    g = DualGraph()
    nodes = g.bind(ParamSet(values))
    return g, nodes


# -- examples -----------------------------------------------------------------


def test_softplus_zero_is_ln2():
    g, p = scalar_graph(x=0.0)
    assert softplus(p["x"]).value == 0.6931471805599453


def test_product_value():
    g, p = scalar_graph(x=3.0, y=4.0)
    assert (p["x"] * p["y"]).value == 12.0


def test_mean_of_squares():
    g, p = scalar_graph(x=np.array([1.0, 2.0, 3.0]))
    assert reduce_mean(square(p["x"])).value == pytest.approx(14 / 3, abs=1e-15)


def test_grad_power_rule():
    g, p = scalar_graph(x=3.0)
    out = square(p["x"])
    assert grad(g, out, P(x=3.0))["x"] == 6.0


def test_grad_chain_rule_softplus():
    g, p = scalar_graph(w=0.0)
    out = softplus(p["w"] * 2.0)
    assert grad(g, out, P(w=0.0))["w"] == pytest.approx(1.0, abs=1e-15)


def test_second_derivative_of_cube():
    g, p = scalar_graph(x=2.0)
    out = power(p["x"], 3.0)
    (d1,) = gradients(out, [p["x"]], create_graph=True)
    (d2,) = gradients(d1, [p["x"]])
    assert d2.value == pytest.approx(12.0, abs=1e-12)


def test_hvp_scaled_square():
    g, p = scalar_graph(w=np.array([0.7]))
    loss = reduce_sum(0.5 * 2.0 * square(p["w"]))
    np.testing.assert_allclose(hvp(loss, P(w=[0.7]), [1.0]), [2.0])


def test_hvp_off_diagonal():
    g, p = scalar_graph(w=np.array([0.3, -1.2]))
    loss = p["w"][0] * p["w"][1]
    np.testing.assert_allclose(hvp(loss, P(w=[0.3, -1.2]), [1.0, 0.0]), [0.0, 1.0])


def test_hvp_matches_dense_quadratic(rng):
    a = rng.standard_normal((5, 5))
    h = a @ a.T + np.eye(5)
    w0 = rng.standard_normal(5)
    g, p = scalar_graph(w=w0)
    loss = 0.5 * reduce_sum(multiply(p["w"], matmul(h, p["w"])))
    ps = P(w=w0)
    v = rng.standard_normal(5)
    np.testing.assert_allclose(hvp(loss, ps, v), h @ v, atol=1e-10)
    dense = dense_hessian(loss, ps)
    np.testing.assert_allclose(dense, h, atol=1e-10)

    def grad_at(w):
        g2, p2 = scalar_graph(w=w)
        l2 = 0.5 * reduce_sum(multiply(p2["w"], matmul(h, p2["w"])))
        return grad(g2, l2, P(w=w))["w"]

    eps = 1e-5
    fd = np.stack([(grad_at(w0 + eps * e) - grad_at(w0 - eps * e)) / (2 * eps) for e in np.eye(5)], axis=1)
    np.testing.assert_allclose(dense, fd, atol=1e-6)


def test_mixed_vjp_examples():
    g, p = scalar_graph(w=np.array([3.0]), phi=np.array([0.5]))
    w, phi = P(w=[3.0]), P(phi=[0.5])
    np.testing.assert_allclose(mixed_vjp(reduce_sum(p["phi"] * p["w"]), w, phi, [1.0]), [1.0])
    np.testing.assert_allclose(mixed_vjp(reduce_sum(p["phi"] * square(p["w"])), w, phi, [1.0]), [6.0])
    np.testing.assert_allclose(mixed_vjp(reduce_sum(square(p["w"])), w, phi, [2.5]), [0.0])


# -- errors -------------------------------------------------------------------


def test_unbound_parameter_is_configuration_error():
    g = DualGraph()
    x = g.parameter("x")
    y = g.parameter("y", 2.0)
    with pytest.raises(ConfigurationError):
        forward(g, add(x, y))


def test_non_finite_is_numeric_error_with_node_id():
    g, p = scalar_graph(x=-1.0)
    with pytest.raises(NumericError) as err:
        log(p["x"])
    assert err.value.node_id is not None


def test_non_finite_on_replay_names_node():
    g, p = scalar_graph(x=1.0)
    out = log(p["x"])
    with pytest.raises(NumericError) as err:
        forward(g, out, {"x": 0.0})
    assert err.value.node_id == out.id


def test_gradient_of_vector_is_contract_error():
    g, p = scalar_graph(x=np.ones(3))
    with pytest.raises(ContractError):
        gradients(p["x"] * 2.0, [p["x"]])


def test_hvp_dimension_mismatch():
    g, p = scalar_graph(w=np.ones(2))
    with pytest.raises(ContractError):
        hvp(reduce_sum(square(p["w"])), P(w=np.ones(2)), np.ones(3))


def test_float32_rejected():
    with pytest.raises(ContractError):
        P(x=np.ones(2, dtype=np.float32))


def test_relu_flagged_non_smooth():
    g, p = scalar_graph(x=np.ones(2))
    assert not relu(p["x"]).smooth
    assert not op_is_smooth("clip_min")
    assert op_is_smooth("softplus")


def test_forward_replay_with_new_binding():
    g, p = scalar_graph(x=1.0)
    out = square(p["x"]) + p["x"]
    assert forward(g, out, {"x": 3.0}) == 12.0


# -- finite-difference checks for every op --------------------------------------

# each entry: (name, input shapes, fn(nodes) -> scalar node, input transform)
def _pos(x):
    return np.abs(x) + 0.5


OPS = [
    ("add", [(3, 2), (2,)], lambda a, b: reduce_sum(square(a + b)), None),
    ("neg", [(4,)], lambda a: reduce_sum(square(-a) * a), None),
    ("multiply", [(3, 1), (1, 4)], lambda a, b: reduce_sum(square(multiply(a, b))), None),
    ("divide", [(3,), (3,)], lambda a, b: reduce_sum(a / b), [None, _pos]),
    ("matmul", [(3, 4), (4, 2)], lambda a, b: reduce_sum(square(matmul(a, b))), None),
    ("matmul_vec", [(4,), (4, 3)], lambda a, b: reduce_sum(square(matmul(a, b))), None),
    ("transpose", [(2, 3, 4)], lambda a: reduce_sum(square(transpose(a, (2, 0, 1))) * np.arange(24.0).reshape(4, 2, 3)), None),
    ("reshape", [(2, 6)], lambda a: reduce_sum(square(reshape(a, (3, 4))) * np.arange(12.0).reshape(3, 4)), None),
    ("broadcast_to", [(1, 3)], lambda a: reduce_sum(square(broadcast_to(a, (4, 3))) * np.arange(12.0).reshape(4, 3)), None),
    ("sum_to", [(4, 3)], lambda a: reduce_sum(square(sum_to(a, (1, 3)))), None),
    ("reduce_sum_axis", [(3, 4)], lambda a: reduce_sum(square(reduce_sum(a, axis=1))), None),
    ("reduce_mean_axis", [(3, 4)], lambda a: reduce_sum(square(reduce_mean(a, axis=0, keepdims=True))), None),
    ("softplus", [(5,)], lambda a: reduce_sum(softplus(a) * a), None),
    ("sigmoid", [(5,)], lambda a: reduce_sum(sigmoid(a) * a), None),
    ("log", [(5,)], lambda a: reduce_sum(log(a) * a), [_pos]),
    ("exp", [(5,)], lambda a: reduce_sum(exp(a)), None),
    ("square", [(5,)], lambda a: reduce_sum(square(a) * a), None),
    ("power", [(5,)], lambda a: reduce_sum(power(a, 1.7)), [_pos]),
    ("softmax", [(3, 4)], lambda a: reduce_sum(softmax(a, axis=-1) * np.arange(12.0).reshape(3, 4)), None),
    ("log_softmax", [(3, 4)], lambda a: reduce_sum(log_softmax(a, axis=0) * np.arange(12.0).reshape(3, 4)), None),
    ("getitem", [(4, 3)], lambda a: reduce_sum(square(getitem(a, (slice(1, 3), 0)))), None),
    ("scatter", [(2, 2)], lambda a: reduce_sum(square(scatter(a, (slice(1, 3), slice(0, 2)), (4, 3))) * np.arange(12.0).reshape(4, 3)), None),
    ("stack", [(3,), (3,)], lambda a, b: reduce_sum(square(stack([a, b], axis=-1)) * np.arange(6.0).reshape(3, 2)), None),
    ("concatenate", [(2, 3), (1, 3)], lambda a, b: reduce_sum(square(concatenate([a, b], axis=0)) * np.arange(9.0).reshape(3, 3)), None),
]


def _evaluate(fn, arrays):
    g = DualGraph()
    nodes = g.bind(ParamSet({f"x{i}": a for i, a in enumerate(arrays)}))
    out = fn(*nodes.values())
    return g, nodes, out


def central_differences(fn, arrays, eps=1e-5):
    out = []
    for i, a in enumerate(arrays):
        d = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            up = [x.copy() for x in arrays]
            dn = [x.copy() for x in arrays]
            up[i][idx] += eps
            dn[i][idx] -= eps
            d[idx] = (_evaluate(fn, up)[2].value - _evaluate(fn, dn)[2].value) / (2 * eps)
        out.append(d)
    return out


@pytest.mark.parametrize("name,shapes,fn,transforms", OPS, ids=[o[0] for o in OPS])
@given(seed=seeds)
def test_gradient_matches_finite_differences(name, shapes, fn, transforms, seed):
    """Reverse-mode gradients agree with central differences for every op."""
    r = np.random.default_rng(seed)
    transforms = transforms or [None] * len(shapes)
    arrays = [r.standard_normal(s) for s in shapes]
    arrays = [t(a) if t else a for a, t in zip(arrays, transforms)]
    g, nodes, out = _evaluate(fn, arrays)
    got = gradients(out, list(nodes.values()))
    for a, fd in zip(got, central_differences(fn, arrays)):
        np.testing.assert_allclose(a.value, fd, rtol=1e-5, atol=1e-7)


@given(seed=seeds)
def test_clip_min_gradient_away_from_kink(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal(6)
    x = np.where(np.abs(x) < 0.1, 0.5, x)
    fn = lambda a: reduce_sum(square(clip_min(a, 0.0)) + relu(a))
    g, nodes, out = _evaluate(fn, [x])
    (got,) = gradients(out, list(nodes.values()))
    np.testing.assert_allclose(got.value, central_differences(fn, [x])[0], rtol=1e-5, atol=1e-7)


# -- second-order properties ----------------------------------------------------


def random_loss(seed):
    """A smooth non-quadratic scalar loss of a 4-vector W and 2-vector phi."""
    r = np.random.default_rng(seed)
    a = r.standard_normal((3, 4))
    w0 = r.standard_normal(4)
    phi0 = r.standard_normal(2)
    g = DualGraph()
    p = g.bind(P(w=w0, phi=phi0))
    h = softplus(matmul(a, p["w"]))
    loss = reduce_sum(square(h)) + reduce_sum(sigmoid(p["w"])) * reduce_sum(p["phi"]) + reduce_sum(exp(0.1 * p["w"]))
    return loss, P(w=w0), P(phi=phi0), r


@given(seed=seeds)
def test_hvp_symmetry(seed):
    loss, w, phi, r = random_loss(seed)
    op = HessianOperator(loss, w)
    u, v = r.standard_normal(4), r.standard_normal(4)
    assert abs(u @ op.hvp(v) - v @ op.hvp(u)) <= 1e-8


@given(seed=seeds, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_hvp_linearity(seed, a, b):
    loss, w, phi, r = random_loss(seed)
    op = HessianOperator(loss, w)
    u, v = r.standard_normal(4), r.standard_normal(4)
    np.testing.assert_allclose(op.hvp(a * v + b * u), a * op.hvp(v) + b * op.hvp(u), atol=1e-10)


@given(seed=seeds)
def test_mixed_vjp_matches_finite_differences(seed):
    loss, w, phi, r = random_loss(seed)
    p = r.standard_normal(4)
    got = HessianOperator(loss, w).mixed_vjp(p, phi)

    def dot_grad_w(phi_val):
        l2, w2, _, _ = random_loss(seed)
        g = l2.graph
        forward(g, l2, {"phi": phi_val})
        return grad(g, l2, w2)["w"] @ p

    eps = 1e-5
    fd = np.array([(dot_grad_w(phi["phi"] + eps * e) - dot_grad_w(phi["phi"] - eps * e)) / (2 * eps) for e in np.eye(2)])
    np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-7)


@given(seed=seeds)
def test_hvp_of_quadratic_is_constant_in_w(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((3, 3))
    v = r.standard_normal(3)
    results = []
    for w0 in (r.standard_normal(3), r.standard_normal(3) * 10):
        g, p = scalar_graph(w=w0)
        loss = reduce_sum(square(matmul(a, p["w"])))
        results.append(hvp(loss, P(w=w0), v))
    np.testing.assert_allclose(results[0], results[1], atol=1e-10)


def test_determinism_bit_identical():
    out = []
    for _ in range(2):
        loss, w, phi, r = random_loss(7)
        op = HessianOperator(loss, w)
        out.append(np.concatenate([[loss.value], op.gradient(), op.hvp(np.arange(4.0)), op.mixed_vjp(np.ones(4), phi)]))
    assert np.array_equal(out[0], out[1])


# -- ParamSet -------------------------------------------------------------------


@given(seed=seeds)
def test_paramset_flatten_roundtrip(seed):
    r = np.random.default_rng(seed)
    ps = P(a=r.standard_normal((2, 3)), b=r.standard_normal(4), c=r.standard_normal(()))
    assert ps.unflatten(ps.flatten()).equal(ps)
    assert ParamSet.from_json(ps.to_json()).equal(ps)


def test_paramset_duplicate_names():
    with pytest.raises(ContractError):
        ParamSet([("a", 1.0), ("a", 2.0)])
