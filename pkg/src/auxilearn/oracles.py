"""Quadratic bi-level problems with closed-form inner solutions, used to check hypergradients.

Inner:  L_T(W, phi) = 1/2 W'AW + (B phi + c)'W, A symmetric positive definite,
        so W*(phi) = -A^-1 (B phi + c).
Outer:  L_A(W) = 1/2 (W - t)'G(W - t).
The worked 1-d instance L_T = W^2 - 4W + phi W, L_A = 1/2 (W - 1)^2 has W* = 2 - phi/2
and dL_A/dphi = -(W* - 1)/2 = -0.5 at phi = 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from auxilearn.autodiff import DualGraph, Node, ParamSet, matmul, reduce_sum
from auxilearn.hypergrad import HypergradConfig, exact_hypergrad, neumann_hypergrad


@dataclass(frozen=True)
class QuadraticProblem:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    G: np.ndarray
    t: np.ndarray

    @property
    def dim_w(self) -> int:
        return self.A.shape[0]

    @property
    def dim_phi(self) -> int:
        return self.B.shape[1]

    def w_star(self, phi: np.ndarray) -> np.ndarray:
        return -np.linalg.solve(self.A, self.B @ phi + self.c)

    def outer(self, w: np.ndarray) -> float:
        d = w - self.t
        return 0.5 * float(d @ self.G @ d)

    def analytic_hypergrad(self, phi: np.ndarray) -> np.ndarray:
        w = self.w_star(phi)
        return -self.B.T @ np.linalg.solve(self.A, self.G @ (w - self.t))

    def fd_hypergrad(self, phi: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        """Central differences of L_A(W*(phi)), re-solving the inner problem exactly each time."""
        out = np.zeros(self.dim_phi)
        for i in range(self.dim_phi):
            e = np.zeros(self.dim_phi)
            e[i] = eps
            out[i] = (self.outer(self.w_star(phi + e)) - self.outer(self.w_star(phi - e))) / (2 * eps)
        return out

    def graph(self, w: np.ndarray, phi: np.ndarray):
        """Build (L_A, L_T, w ParamSet, phi ParamSet) on a fresh graph."""
        wp, pp = ParamSet({"w": w}), ParamSet({"phi": phi})
        g = DualGraph()
        wn, pn = g.bind(wp)["w"], g.bind(pp)["phi"]
        L_T = 0.5 * reduce_sum(wn * matmul(g.constant(self.A), wn)) + reduce_sum(
            (matmul(g.constant(self.B), pn) + self.c) * wn
        )
        d = wn - self.t
        L_A = 0.5 * reduce_sum(d * matmul(g.constant(self.G), d))
        return L_A, L_T, wp, pp

    def exact(self, phi: np.ndarray) -> np.ndarray:
        L_A, L_T, wp, pp = self.graph(self.w_star(phi), phi)
        return exact_hypergrad(L_A, L_T, pp, wp)

    def neumann(self, phi: np.ndarray, cfg: HypergradConfig):
        L_A, L_T, wp, pp = self.graph(self.w_star(phi), phi)
        return neumann_hypergrad(L_A, L_T, pp, wp, cfg)


def worked_quadratic() -> QuadraticProblem:
    """L_T = W^2 - 4W + phi W (A = 2, B = 1, c = -4), L_A = 1/2 (W - 1)^2."""
    return QuadraticProblem(np.array([[2.0]]), np.array([[1.0]]), np.array([-4.0]), np.array([[1.0]]), np.array([1.0]))


def random_quadratic(rng: np.random.Generator, max_w: int = 10, max_phi: int = 3, cond: float = 10.0) -> QuadraticProblem:
    """Strongly convex instance with Hessian spectrum in [1, cond]."""
    n = int(rng.integers(1, max_w + 1))
    m = int(rng.integers(1, max_phi + 1))
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = rng.uniform(1.0, cond, n)
    A = (q * eig) @ q.T
    A = 0.5 * (A + A.T)
    h = rng.standard_normal((n, n))
    G = h @ h.T / n + 0.1 * np.eye(n)
    return QuadraticProblem(A, rng.standard_normal((n, m)), rng.standard_normal(n), G, rng.standard_normal(n))


def rel_error(a, b, floor: float = 1e-12) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))
