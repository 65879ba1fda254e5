import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from auxilearn.autodiff import DualGraph, ParamSet
from auxilearn.combiner import (
    Combiner,
    LossImage,
    LossVector,
    adaptive_weights,
    combine,
    poly_feature_count,
    poly_features,
    project_monotone,
)
from auxilearn.errors import ContractError

seeds = st.integers(0, 2**31 - 1)


def losses(values):
    g = DualGraph()
    return LossVector(g.constant(np.asarray(values, dtype=np.float64)))


def image(values):
    g = DualGraph()
    return LossImage(g.constant(np.asarray(values, dtype=np.float64)))


def test_linear_example():
    c = Combiner("linear", 2)
    phi = ParamSet({"phi.linear.0.weight": [[0.5, 0.25]]})
    assert combine(c, phi, losses([1.0, 2.0, 4.0])).value == 3.0


def test_deep_linear_example():
    c = Combiner("deep_linear", 1, depth=2, width=1)
    phi = ParamSet({"phi.deep_linear.0.weight": [[2.0]], "phi.deep_linear.1.weight": [[0.5]]})
    assert combine(c, phi, losses([1.0, 3.0])).value == 4.0


@pytest.mark.parametrize("kind", ["linear", "deep_linear", "nonlinear", "poly_linear"])
@pytest.mark.parametrize("monotone", [True, False])
def test_zero_phi_leaves_main_loss(kind, monotone, rng):
    c = Combiner(kind, 3, monotone=monotone)
    lv = rng.uniform(0, 3, (6, 4))
    assert combine(c, c.zeros(), losses(lv)).value == pytest.approx(lv[:, 0].mean(), abs=1e-15)


def test_zero_phi_convnet(rng):
    c = Combiner("convnet", 2, depth=3)
    img = rng.uniform(0, 1, (2, 3, 8, 8))
    assert combine(c, c.zeros(), image(img)).value == pytest.approx(img[:, 0].mean(), abs=1e-15)


def test_kind_input_mismatch(rng):
    with pytest.raises(ContractError):
        combine(Combiner("convnet", 2), Combiner("convnet", 2).zeros(), losses([1.0, 2.0, 3.0]))
    with pytest.raises(ContractError):
        combine(Combiner("linear", 2), Combiner("linear", 2).zeros(), image(np.ones((3, 4, 4))))
    with pytest.raises(ContractError):
        combine(Combiner("linear", 3), Combiner("linear", 3).zeros(), losses([1.0, 2.0, 3.0]))
    with pytest.raises(ContractError):
        Combiner("quadratic", 2)


def test_poly_features_examples():
    g = DualGraph()
    a, b = 1.5, -2.0
    lv = LossVector(g.constant([a, b]), ("a", "b"))
    np.testing.assert_array_equal(poly_features(lv, 1).values.value, [a, b])
    feats = poly_features(lv, 2)
    np.testing.assert_array_equal(feats.values.value, [a, b, a * a, a * b, b * b])
    assert feats.labels == ("a", "b", "a^2", "a*b", "b^2")


@pytest.mark.parametrize("n,degree", [(3, 2), (2, 3), (4, 3), (1, 4)])
def test_poly_feature_count_brute_force(n, degree):
    brute = {tuple(sorted(c)) for d in range(1, degree + 1) for c in itertools.product(range(n), repeat=d)}
    assert poly_feature_count(n, degree) == len(brute)
    assert poly_feature_count(3, 2) == 9


def test_adaptive_weights_linear_is_phi(rng):
    c = Combiner("linear", 3)
    phi = c.init(rng)
    w = adaptive_weights(c, phi, losses(rng.uniform(0, 2, (5, 4))))
    np.testing.assert_array_equal(w[:, 1:], np.tile(phi["phi.linear.0.weight"], (5, 1)))
    np.testing.assert_array_equal(w[:, 0], 0.0)


def test_adaptive_weights_zero_nonlinear(rng):
    c = Combiner("nonlinear", 2)
    w = adaptive_weights(c, c.zeros(), losses(rng.uniform(0, 2, (4, 3))))
    np.testing.assert_array_equal(w, 0.0)


@given(seed=seeds)
def test_adaptive_weights_monotone_nonlinear_nonnegative(seed):
    r = np.random.default_rng(seed)
    c = Combiner("nonlinear", 3, depth=2, width=6)
    phi = project_monotone(c.init(r).map(lambda k, v: v + r.standard_normal(v.shape)))
    lv = r.uniform(0, 5, (10, 4))
    w = adaptive_weights(c, phi, losses(lv))
    assert (w >= -1e-8).all()
    # finite-difference cross-check of one partial
    eps = 1e-6
    j = int(r.integers(0, 4))
    up, dn = lv.copy(), lv.copy()
    up[0, j] += eps
    dn[0, j] -= eps
    fd = (combine(c, phi, losses(up[0])).value - combine(c, phi, losses(dn[0])).value) / (2 * eps) - (j == 0)
    assert w[0, j] == pytest.approx(fd, abs=1e-6)


def test_projection_examples():
    phi = ParamSet({"a.weight": [-0.3, 0.7], "a.bias": [-1.0]})
    out = project_monotone(phi)
    np.testing.assert_array_equal(out["a.weight"], [0.0, 0.7])
    np.testing.assert_array_equal(out["a.bias"], [-1.0])
    assert project_monotone(out).equal(out)


@given(seed=seeds)
def test_projection_idempotent(seed):
    r = np.random.default_rng(seed)
    phi = ParamSet({"x.weight": r.standard_normal((3, 4)), "x.kernels": r.standard_normal((2, 2, 3, 3)),
                    "x.direction": r.standard_normal(5), "x.bias": r.standard_normal(3)})
    once = project_monotone(phi)
    assert project_monotone(once).equal(once)


@pytest.mark.parametrize("kind", ["linear", "deep_linear", "nonlinear", "poly_linear"])
@given(seed=seeds)
def test_monotone_combiner_is_nondecreasing(kind, seed):
    """l <= l' componentwise implies combine(l) <= combine(l')."""
    r = np.random.default_rng(seed)
    c = Combiner(kind, 2, depth=3, width=5)
    phi = project_monotone(c.init(r).map(lambda k, v: v + r.standard_normal(v.shape)))
    lo = r.uniform(0, 3, (8, 3))
    hi = lo + r.uniform(0, 1, (8, 3))
    assert combine(c, phi, losses(lo)).value <= combine(c, phi, losses(hi)).value + 1e-9


@given(seed=seeds)
def test_monotone_convnet_is_nondecreasing(seed):
    r = np.random.default_rng(seed)
    c = Combiner("convnet", 1, depth=2, channels=3)
    phi = project_monotone(c.init(r).map(lambda k, v: v + r.standard_normal(v.shape)))
    lo = r.uniform(0, 3, (2, 2, 5, 5))
    hi = lo + r.uniform(0, 1, lo.shape)
    assert combine(c, phi, image(lo)).value <= combine(c, phi, image(hi)).value + 1e-9


@pytest.mark.parametrize("depth", [1, 2, 5])
@given(seed=seeds)
def test_deep_linear_collapse_equivalence(depth, seed):
    r = np.random.default_rng(seed)
    c = Combiner("deep_linear", 3, depth=depth, width=4, monotone=False)
    phi = c.init(r)
    flat = Combiner("linear", 3, monotone=False)
    phi1 = ParamSet({"phi.linear.0.weight": c.collapse(phi)[None, :]})
    lv = r.uniform(0, 2, (6, 4))
    assert combine(c, phi, losses(lv)).value == pytest.approx(combine(flat, phi1, losses(lv)).value, abs=1e-10)


def test_convnet_constant_image_equals_kernel_sum_mlp(rng):
    c = Combiner("convnet", 2, depth=3, channels=4, monotone=True)
    phi = c.init(rng)
    const = np.array([0.7, 1.3, 2.1])
    img = np.broadcast_to(const[None, :, None, None], (1, 3, 9, 9)).copy()
    got = combine(c, phi, image(img)).value
    h = const
    for i, layer in enumerate(c.conv_layers()):
        k = phi[f"{layer.name}.kernels"].sum(axis=(2, 3))
        h = k @ h + phi[f"{layer.name}.bias"]
        if layer.activation == "softplus":
            h = np.log1p(np.exp(h))
    g = np.log1p(np.exp(h[0])) - np.log(2.0)
    assert got == pytest.approx(const[0] + g, abs=1e-10)


def test_batch_level_combination_flag(rng):
    c = Combiner("nonlinear", 2, per_sample=False)
    phi = c.init(rng)
    lv = rng.uniform(0, 2, (5, 3))
    mean = lv.mean(axis=0)
    want = combine(Combiner("nonlinear", 2), phi, losses(mean)).value
    assert combine(c, phi, losses(lv)).value == pytest.approx(want, abs=1e-12)


def test_convnet_adaptive_weight_map(rng):
    c = Combiner("convnet", 1, depth=2, padding=1)
    w = adaptive_weights(c, c.init(rng), image(rng.uniform(0, 1, (2, 2, 5, 5))))
    assert w.shape == (2, 5, 5)
