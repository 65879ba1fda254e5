"""Hypergradients of the auxiliary-set loss with respect to auxiliary parameters.

By the implicit function theorem, at a stationary point of the training loss

    dL_A/dphi = - dL_A/dW . (d2 L_T/dW2)^-1 . d2 L_T/(dW dphi).

:func:`neumann_hypergrad` approximates the inverse-Hessian product with a
truncated Neumann series, H^-1 = alpha * sum_j (I - alpha H)^j, using only
Hessian-vector products. :func:`exact_hypergrad` materializes H and solves
densely; it is the oracle for small problems.

The Neumann result is scaled by the series step ``alpha`` so it approximates
the hypergradient itself. Set ``HypergradConfig.verbatim`` to drop that factor.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from auxilearn.autodiff import HessianOperator, Node, ParamSet, grad
from auxilearn.errors import ContractError, NumericError


@dataclass(frozen=True)
class HypergradConfig:
    J: int = 5
    alpha: float | str = "auto"
    alpha_scale: float = 0.9
    power_iters: int = 50
    clip_norm: float | None = 10.0
    divergence_factor: float = 10.0
    verbatim: bool = False

    def __post_init__(self):
        if self.J < 0:
            raise ContractError("J must be >= 0")
        if isinstance(self.alpha, str):
            if self.alpha != "auto":
                raise ContractError(f"alpha must be a positive number or 'auto', got {self.alpha!r}")
        elif not self.alpha > 0:
            raise ContractError("alpha must be > 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ContractError("clip_norm must be positive or None")
        if not self.divergence_factor > 0:
            raise ContractError("divergence_factor must be > 0")

    def with_alpha(self, alpha: float) -> "HypergradConfig":
        return dataclasses.replace(self, alpha=float(alpha))


@dataclass
class HypergradReport:
    grad_phi: np.ndarray
    iterate_norms: list[float] = field(default_factory=list)
    diverged: bool = False
    clipped: bool = False
    alpha: float = float("nan")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.grad_phi))


def _flat_grad(loss: Node, params: ParamSet) -> np.ndarray:
    return grad(loss.graph, loss, params).flatten()


def clip_by_norm(vec: np.ndarray, clip_norm: float | None) -> tuple[np.ndarray, bool]:
    if clip_norm is None:
        return vec, False
    norm = np.linalg.norm(vec)
    if norm <= clip_norm:
        return vec, False
    return vec * (clip_norm / norm), True


def top_eigenvalue(op: HessianOperator, iters: int, seed: int = 0) -> float:
    """Power-iteration estimate of the dominant Hessian eigenvalue (Rayleigh quotient)."""
    if iters < 1:
        raise ContractError("iters must be >= 1")
    if op.dim == 0:
        raise NumericError("no parameters to estimate curvature over")
    v = np.random.default_rng(seed).standard_normal(op.dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = op.hvp(v)
        lam = float(v @ u)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
    return lam


def estimate_alpha(L_T: Node, w: ParamSet, iters: int = 50, scale: float = 0.9, seed: int = 0) -> float:
    """Neumann step size ``scale / lambda_max`` from power iteration on the training Hessian."""
    lam = top_eigenvalue(HessianOperator(L_T, w), iters, seed)
    if not lam > 0:
        raise NumericError(f"dominant Hessian eigenvalue estimate {lam:.3g} is not positive")
    return scale / lam


def neumann_hypergrad(L_A: Node, L_T: Node, phi: ParamSet, w: ParamSet, cfg: HypergradConfig) -> HypergradReport:
    """Truncated-Neumann hypergradient.

    v = p = dL_A/dW; J times: v <- v - alpha * v.H, p <- p + v; then
    grad = -alpha * p . d2L_T/(dW dphi). Stops early and returns a zero gradient
    with ``diverged`` set once ||v|| exceeds ``divergence_factor * ||dL_A/dW||``.
    """
    op = HessianOperator(L_T, w)
    alpha = cfg.alpha
    if alpha == "auto":
        alpha = estimate_alpha(L_T, w, cfg.power_iters, cfg.alpha_scale)
    v = _flat_grad(L_A, w)
    p = v.copy()
    limit = cfg.divergence_factor * np.linalg.norm(v)
    norms: list[float] = []
    for _ in range(cfg.J):
        v = v - alpha * op.hvp(v)
        p = p + v
        norms.append(float(np.linalg.norm(v)))
        if norms[-1] > limit or not np.isfinite(norms[-1]):
            return HypergradReport(np.zeros(phi.size), norms, diverged=True, alpha=alpha)
    g = -op.mixed_vjp(p, phi)
    if not cfg.verbatim:
        g = alpha * g
    g, clipped = clip_by_norm(g, cfg.clip_norm)
    return HypergradReport(g, norms, diverged=False, clipped=clipped, alpha=alpha)


def _solve_checked(hessian: np.ndarray, rhs: np.ndarray, cond_limit: float) -> np.ndarray:
    eig = np.linalg.eigvalsh(0.5 * (hessian + hessian.T))
    smallest = eig[np.argmin(np.abs(eig))]
    largest = np.max(np.abs(eig))
    if smallest == 0.0 or largest / abs(smallest) > cond_limit:
        raise NumericError(
            f"Hessian is singular or badly conditioned (smallest eigenvalue {smallest:.3e}, "
            f"largest magnitude {largest:.3e})"
        )
    return np.linalg.solve(hessian.T, rhs)


def exact_hypergrad(
    L_A: Node, L_T: Node, phi: ParamSet, w: ParamSet, max_dim: int = 2000, cond_limit: float = 1e12
) -> np.ndarray:
    """Dense implicit-function-theorem hypergradient; the oracle for small |W|."""
    if w.size > max_dim:
        raise ContractError(f"|W|={w.size} exceeds the dense-solve limit {max_dim}")
    op = HessianOperator(L_T, w)
    q = _solve_checked(op.dense(), _flat_grad(L_A, w), cond_limit)
    return -op.mixed_vjp(q, phi)


def newton_alignment(L_A: Node, L_T_main: Node, l_aux_sum: Node, w: ParamSet, tol: float = 1e-6) -> float:
    """-<dL_A/dW, H^-1 d(sum aux)/dW> with H the main-loss Hessian at a converged W.

    Equals dL_A/dphi at phi = 0 for L_T = L_main + phi * sum(aux); a negative
    value means adding the auxiliary lowers the auxiliary-set loss.
    """
    op = HessianOperator(L_T_main, w)
    gnorm = float(np.linalg.norm(op.gradient()))
    if gnorm > tol:
        raise ContractError(f"main loss not converged: ||grad|| = {gnorm:.3e} > {tol:.1e}")
    q = _solve_checked(op.dense(), _flat_grad(l_aux_sum, w), 1e12)
    return float(-_flat_grad(L_A, w) @ q)
