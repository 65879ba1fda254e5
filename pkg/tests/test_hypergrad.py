import numpy as np
import pytest
from hypothesis import given, strategies as st

from auxilearn.autodiff import DualGraph, HessianOperator, ParamSet, matmul, reduce_sum, square
from auxilearn.errors import ContractError, NumericError
from auxilearn.hypergrad import (
    HypergradConfig,
    clip_by_norm,
    estimate_alpha,
    exact_hypergrad,
    neumann_hypergrad,
    newton_alignment,
    top_eigenvalue,
)
from auxilearn.oracles import QuadraticProblem, random_quadratic, rel_error, worked_quadratic

seeds = st.integers(0, 2**31 - 1)
PHI0 = np.zeros(1)


def neumann(problem, phi, **kw):
    kw.setdefault("clip_norm", None)
    return problem.neumann(phi, HypergradConfig(**kw))


def test_worked_example_partial_sums():
    q = worked_quadratic()
    assert q.w_star(PHI0)[0] == 2.0
    assert neumann(q, PHI0, J=2, alpha=0.25).grad_phi[0] == pytest.approx(-0.4375, abs=1e-15)
    for J in (0, 1, 5, 10, 20):
        want = -0.25 * sum(0.5**j for j in range(J + 1))
        assert neumann(q, PHI0, J=J, alpha=0.25).grad_phi[0] == pytest.approx(want, abs=1e-14)


def test_worked_example_exact_and_fd():
    q = worked_quadratic()
    assert q.exact(PHI0)[0] == pytest.approx(-0.5, abs=1e-12)
    assert q.fd_hypergrad(PHI0)[0] == pytest.approx(-0.5, abs=1e-8)


def test_j_zero_is_identity_preconditioner():
    q = worked_quadratic()
    rep = neumann(q, PHI0, J=0, alpha=0.3)
    # -alpha * dL_A/dW * mixed = -0.3 * 1 * 1
    assert rep.grad_phi[0] == pytest.approx(-0.3, abs=1e-15)
    assert rep.iterate_norms == []


def test_verbatim_mode_drops_alpha():
    q = worked_quadratic()
    a = neumann(q, PHI0, J=7, alpha=0.25)
    b = neumann(q, PHI0, J=7, alpha=0.25, verbatim=True)
    assert b.grad_phi[0] == pytest.approx(a.grad_phi[0] / 0.25, abs=1e-14)


def independent_of_phi():
    g = DualGraph()
    w = g.bind(ParamSet({"w": [0.5, -1.0]}))["w"]
    g.bind(ParamSet({"phi": [0.3]}))
    L_T = reduce_sum(square(w))
    L_A = reduce_sum(square(w - 1.0))
    return L_A, L_T, ParamSet({"phi": [0.3]}), ParamSet({"w": [0.5, -1.0]})


@pytest.mark.parametrize("J", [0, 1, 10])
def test_phi_free_training_loss_gives_zero(J):
    L_A, L_T, phi, w = independent_of_phi()
    np.testing.assert_array_equal(neumann_hypergrad(L_A, L_T, phi, w, HypergradConfig(J=J, alpha=0.1)).grad_phi, 0.0)


def test_exact_zero_when_aux_loss_at_minimum():
    q = worked_quadratic()
    at_min = QuadraticProblem(q.A, q.B, q.c, q.G, q.w_star(PHI0))
    np.testing.assert_array_equal(at_min.exact(PHI0), 0.0)


def test_iterate_norms_length():
    rep = neumann(worked_quadratic(), PHI0, J=6, alpha=0.25)
    assert len(rep.iterate_norms) == 6 and not rep.diverged


def test_divergence_detected_and_stops_early():
    rep = neumann(worked_quadratic(), PHI0, J=50, alpha=2.0)
    assert rep.diverged
    assert len(rep.iterate_norms) < 50
    np.testing.assert_array_equal(rep.grad_phi, 0.0)


def test_exact_rejects_singular():
    q = QuadraticProblem(np.diag([1.0, 0.0]), np.ones((2, 1)), np.zeros(2), np.eye(2), np.ones(2))
    L_A, L_T, w, phi = q.graph(np.zeros(2), PHI0)
    with pytest.raises(NumericError, match="smallest eigenvalue"):
        exact_hypergrad(L_A, L_T, phi, w)


def test_exact_size_guard():
    q = worked_quadratic()
    L_A, L_T, w, phi = q.graph(np.array([2.0]), PHI0)
    with pytest.raises(ContractError):
        exact_hypergrad(L_A, L_T, phi, w, max_dim=0)


def test_config_validation():
    with pytest.raises(ContractError):
        HypergradConfig(J=-1)
    with pytest.raises(ContractError):
        HypergradConfig(alpha=0.0)
    with pytest.raises(ContractError):
        HypergradConfig(alpha="sometimes")


@given(seed=seeds)
def test_exact_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    q = random_quadratic(r, max_w=10)
    phi = r.standard_normal(q.dim_phi)
    assert rel_error(q.exact(phi), q.fd_hypergrad(phi), floor=1e-6) <= 1e-4


def test_exact_matches_fd_on_ten_param_instance():
    r = np.random.default_rng(3)
    while True:
        q = random_quadratic(r, max_w=10)
        if q.dim_w == 10:
            break
    phi = r.standard_normal(q.dim_phi)
    np.testing.assert_allclose(q.exact(phi), q.analytic_hypergrad(phi), atol=1e-10)
    assert rel_error(q.exact(phi), q.fd_hypergrad(phi)) <= 1e-4


@given(seed=seeds)
def test_neumann_converges_geometrically(seed):
    r = np.random.default_rng(seed)
    q = random_quadratic(r, max_w=10, cond=5.0)
    phi = r.standard_normal(q.dim_phi)
    lam = np.linalg.eigvalsh(q.A)
    alpha = 0.9 / lam.max()
    rho = np.max(np.abs(1 - alpha * lam))
    exact = q.exact(phi)
    w = q.w_star(phi)
    scale = np.linalg.norm(q.B, 2) * np.linalg.norm(np.linalg.solve(q.A, q.G @ (w - q.t)))
    for J in (0, 5, 20, 60):
        err = np.linalg.norm(neumann(q, phi, J=J, alpha=alpha).grad_phi - exact)
        assert err <= scale * rho ** (J + 1) * (1 + 1e-8) + 1e-12


@given(seed=seeds)
def test_neumann_long_series_matches_exact(seed):
    r = np.random.default_rng(seed)
    q = random_quadratic(r, max_w=10, cond=5.0)
    phi = r.standard_normal(q.dim_phi)
    alpha = 0.9 / np.linalg.eigvalsh(q.A).max()
    assert rel_error(neumann(q, phi, J=500, alpha=alpha).grad_phi, q.exact(phi), floor=1e-9) <= 1e-6


@given(seed=seeds, clip=st.floats(0.01, 5.0))
def test_clipping_contract(seed, clip):
    r = np.random.default_rng(seed)
    q = random_quadratic(r, max_w=6, cond=5.0)
    phi = r.standard_normal(q.dim_phi)
    alpha = 0.5 / np.linalg.eigvalsh(q.A).max()
    raw = neumann(q, phi, J=10, alpha=alpha).grad_phi
    rep = neumann(q, phi, J=10, alpha=alpha, clip_norm=clip)
    assert np.linalg.norm(rep.grad_phi) <= clip + 1e-12
    assert rep.clipped == (np.linalg.norm(raw) > clip)
    if np.linalg.norm(raw) > 0:
        cos = rep.grad_phi @ raw / (np.linalg.norm(rep.grad_phi) * np.linalg.norm(raw))
        assert cos == pytest.approx(1.0, abs=1e-12)


def test_clip_by_norm_none_passthrough():
    v = np.array([3.0, 4.0])
    assert clip_by_norm(v, None)[0] is v


def quadratic_loss(h, w0):
    g = DualGraph()
    w = g.bind(ParamSet({"w": w0}))["w"]
    return 0.5 * reduce_sum(w * matmul(g.constant(h), w)), ParamSet({"w": w0})


def test_estimate_alpha_examples():
    loss, w = quadratic_loss(np.array([[2.0]]), np.array([0.3]))
    assert estimate_alpha(loss, w, iters=20) == pytest.approx(0.45, abs=1e-12)
    loss, w = quadratic_loss(np.diag([1.0, 5.0]), np.array([0.3, -0.2]))
    assert estimate_alpha(loss, w, iters=200) == pytest.approx(0.18, rel=1e-9)


@given(seed=seeds)
def test_estimate_alpha_random_spd(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((8, 8))
    h = a @ a.T + 0.1 * np.eye(8)
    loss, w = quadratic_loss(h, r.standard_normal(8))
    want = 0.9 / np.linalg.eigvalsh(h).max()
    assert estimate_alpha(loss, w, iters=100) == pytest.approx(want, rel=1e-2)


def test_estimate_alpha_rejects_nonpositive_curvature():
    loss, w = quadratic_loss(np.array([[-1.0]]), np.array([1.0]))
    with pytest.raises(NumericError):
        estimate_alpha(loss, w, iters=10)
    with pytest.raises(ContractError):
        top_eigenvalue(HessianOperator(loss, w), iters=0)


def alignment_graph(w0, main_h, main_c, aux_b, t, g_mat=None):
    g = DualGraph()
    w = g.bind(ParamSet({"w": w0}))["w"]
    main = 0.5 * reduce_sum(w * matmul(g.constant(main_h), w)) + reduce_sum(w * main_c)
    aux = reduce_sum(w * aux_b)
    d = w - t
    gm = np.eye(len(w0)) if g_mat is None else g_mat
    L_A = 0.5 * reduce_sum(d * matmul(g.constant(gm), d))
    return L_A, main, aux, ParamSet({"w": w0})


def test_newton_alignment_worked_example():
    # l_main = (W - 2)^2 = W^2 - 4W + 4, l_aux = W, L_A = 1/2 (W - 1)^2
    L_A, main, aux, w = alignment_graph(np.array([2.0]), np.array([[2.0]]), np.array([-4.0]), np.array([1.0]), 1.0)
    assert newton_alignment(L_A, main, aux, w) == pytest.approx(-0.5, abs=1e-12)
    assert worked_quadratic().fd_hypergrad(PHI0)[0] == pytest.approx(-0.5, abs=1e-8)


def test_newton_alignment_constant_aux_is_zero():
    L_A, main, aux, w = alignment_graph(np.array([2.0]), np.array([[2.0]]), np.array([-4.0]), np.array([0.0]), 1.0)
    assert newton_alignment(L_A, main, aux, w) == 0.0


def test_newton_alignment_h_orthogonal_is_zero():
    # grad L_A = (1, 0) at W = 0 with t = (-1, 0); H = I; grad aux = (0, 1)
    L_A, main, aux, w = alignment_graph(np.zeros(2), np.eye(2), np.zeros(2), np.array([0.0, 1.0]), np.array([-1.0, 0.0]))
    assert newton_alignment(L_A, main, aux, w) == 0.0


def test_newton_alignment_requires_convergence():
    L_A, main, aux, w = alignment_graph(np.array([1.0]), np.array([[2.0]]), np.array([-4.0]), np.array([1.0]), 1.0)
    with pytest.raises(ContractError, match="grad"):
        newton_alignment(L_A, main, aux, w)


@given(seed=seeds)
def test_newton_alignment_equals_fd_hypergradient(seed):
    """Proposition 1 identity on random quadratics, checked against inner re-optimization."""
    r = np.random.default_rng(seed)
    q = random_quadratic(r, max_w=8, max_phi=1)
    b = q.B[:, 0]
    w_star = q.w_star(np.zeros(1))
    L_A, main, aux, w = alignment_graph(w_star, q.A, q.c, b, q.t, q.G)
    got = newton_alignment(L_A, main, aux, w, tol=1e-8)
    assert got == pytest.approx(q.fd_hypergrad(np.zeros(1))[0], abs=1e-4, rel=1e-4)
