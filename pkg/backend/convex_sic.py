import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from errors import ConvergenceError, DimensionError, SingularSystemError
from feature_map import EmbeddingSet
from simplex import check_open_simplex, eta_from_moments, mirror_descent_step, penalty_gradient, uniform

logger = logging.getLogger(__name__)


class ConvexConfig(BaseModel):
    """Penalty weights and solver settings for convex SIC"""

    model_config = ConfigDict(frozen=True)

    lam: float = Field(1.0, ge=0, description="gradient-sparsity penalty weight")
    rho: float = Field(1e-3, ge=0, description="L2(p_x p_y) penalty weight")
    tau: float = Field(1e-4, ge=0, description="ridge weight on u")
    eps: float = Field(1e-6, gt=0, lt=1)
    max_iter: int = Field(1000, ge=1)
    tol: float = Field(1e-10, gt=0, description="tolerance on consecutive loss change")
    bcd_max_iter: int = Field(20000, ge=1)
    bcd_tol: float = Field(1e-8, gt=0)
    lr_u: Optional[float] = Field(None, gt=0, description="BCD step on u; None uses 1/Lipschitz")
    lr_eta: Optional[float] = Field(None, gt=0, description="BCD mirror step on eta; None adapts")
    patience: int = Field(50, ge=1, description="consecutive loss increases before BCD gives up")


@dataclass
class ConvexSolution:
    u: np.ndarray
    eta: np.ndarray
    loss_trace: List[float] = field(default_factory=list)
    fixed_point_residual: float = float("nan")
    sic_value: float = float("nan")
    iterations: int = 0
    converged: bool = False
    algorithm: str = "alternating"

    def to_dict(self) -> Dict[str, object]:
        return {
            "u": self.u.tolist(),
            "eta": self.eta.tolist(),
            "loss_trace": list(self.loss_trace),
            "fixed_point_residual": self.fixed_point_residual,
            "sic_value": self.sic_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "algorithm": self.algorithm,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "ConvexSolution":
        data = dict(payload)
        data["u"] = np.asarray(data["u"], dtype=float)
        data["eta"] = np.asarray(data["eta"], dtype=float)
        return cls(**data)


def quadratic_forms(emb: EmbeddingSet, u: np.ndarray) -> np.ndarray:
    """a_j = <u, D_j u> for every feature"""
    return np.einsum("k,jkl,l->j", u, emb.D, u)


def system_matrix(emb: EmbeddingSet, eta: np.ndarray, cfg: ConvexConfig) -> np.ndarray:
    H = cfg.lam * np.einsum("j,jkl->kl", 1.0 / eta, emb.D) + cfg.rho * emb.C
    H[np.diag_indices_from(H)] += cfg.tau
    return H


def _check_point(emb: EmbeddingSet, u: np.ndarray, eta) -> Tuple[np.ndarray, np.ndarray]:
    eta = check_open_simplex(eta)
    u = np.asarray(u, dtype=float)
    if eta.size != emb.d_x:
        raise DimensionError("eta length", emb.d_x, eta.size)
    if u.shape != (emb.m,):
        raise DimensionError("u shape", (emb.m,), u.shape)
    return u, eta


def loss_eval(emb: EmbeddingSet, u: np.ndarray, eta, cfg: ConvexConfig) -> float:
    """L_eps(u, eta) = <u, mu_prod - mu_joint> + (lam/2) sum_j (<u, D_j u> + eps) / eta_j
    + (rho/2) <u, C u> + (tau/2) |u|^2"""
    u, eta = _check_point(emb, u, eta)
    forms = quadratic_forms(emb, u)
    quad = cfg.rho * u @ emb.C @ u + cfg.tau * u @ u
    return float(-u @ emb.delta + 0.5 * quad + 0.5 * cfg.lam * np.sum((forms + cfg.eps) / eta))


def eta_closed_form(u: np.ndarray, emb: EmbeddingSet, eps: float) -> np.ndarray:
    return eta_from_moments(quadratic_forms(emb, np.asarray(u, dtype=float)), eps)


def solve_u(emb: EmbeddingSet, eta: np.ndarray, cfg: ConvexConfig) -> np.ndarray:
    """u = (lam sum_j D_j / eta_j + rho C + tau I)^{-1} delta"""
    H = system_matrix(emb, eta, cfg)
    try:
        factor = cho_factor(H, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise SingularSystemError(
            f"System matrix is not positive definite ({e}); use a ridge weight tau > 0"
        ) from e
    return cho_solve(factor, emb.delta)


def fixed_point_residual(emb: EmbeddingSet, u: np.ndarray, eta, cfg: ConvexConfig) -> float:
    """|u - H(eta)^{-1} delta| + |eta - eta_closed_form(u)|_1, zero at the minimizer"""
    u, eta = _check_point(emb, u, eta)
    u_star = solve_u(emb, eta, cfg)
    return float(np.linalg.norm(u - u_star) + np.abs(eta - eta_closed_form(u, emb, cfg.eps)).sum())


def fit_alternating(emb: EmbeddingSet, cfg: ConvexConfig, eta0: Optional[np.ndarray] = None) -> ConvexSolution:
    """Alternate the exact linear solve for u with the closed-form eta update.

    Stops once the loss change is below ``tol`` and the fixed-point residual
    of the current pair is at most ``10 * tol``.
    """
    start_time = time.time()
    eta = uniform(emb.d_x) if eta0 is None else check_open_simplex(eta0).copy()
    logger.info("Starting alternating optimization: m=%d, d_x=%d", emb.m, emb.d_x)

    u = solve_u(emb, eta, cfg)
    loss_trace: List[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iter + 1):
        eta = eta_closed_form(u, emb, cfg.eps)
        u = solve_u(emb, eta, cfg)
        # u solves the system for eta, so only the eta half of the residual is left
        residual = float(np.abs(eta - eta_closed_form(u, emb, cfg.eps)).sum())
        loss_trace.append(loss_eval(emb, u, eta, cfg))
        logger.debug("iter %d: loss %.12g, residual %.3g", iteration, loss_trace[-1], residual)
        if len(loss_trace) > 1 and abs(loss_trace[-2] - loss_trace[-1]) < cfg.tol and residual <= 10 * cfg.tol:
            converged = True
            break

    solution = ConvexSolution(
        u=u,
        eta=eta,
        loss_trace=loss_trace,
        fixed_point_residual=fixed_point_residual(emb, u, eta, cfg),
        sic_value=0.5 * float(u @ emb.delta),
        iterations=iteration,
        converged=converged,
        algorithm="alternating",
    )
    if not converged:
        logger.warning("Alternating optimization stopped after %d iterations without converging", iteration)
    logger.info(
        "Completed alternating optimization in %d iterations (%.2fs): loss %.8g, residual %.3g",
        iteration, time.time() - start_time, loss_trace[-1], solution.fixed_point_residual,
    )
    return solution


def _lipschitz_bound(emb: EmbeddingSet, cfg: ConvexConfig) -> Tuple[np.ndarray, float]:
    top = [emb.m - 1, emb.m - 1]
    d_top = np.array([eigh(Dj, eigvals_only=True, subset_by_index=top)[0] for Dj in emb.D])
    c_top = eigh(emb.C, eigvals_only=True, subset_by_index=top)[0]
    return np.maximum(d_top, 0.0), max(float(c_top), 0.0)


def fit_bcd(
    emb: EmbeddingSet,
    cfg: ConvexConfig,
    u0: Optional[np.ndarray] = None,
    eta0: Optional[np.ndarray] = None,
) -> ConvexSolution:
    """Block coordinate descent: gradient step on u, mirror-descent step on eta"""
    start_time = time.time()
    u = np.zeros(emb.m) if u0 is None else np.asarray(u0, dtype=float).copy()
    eta = uniform(emb.d_x) if eta0 is None else check_open_simplex(eta0).copy()
    u, eta = _check_point(emb, u, eta)
    d_top, c_top = _lipschitz_bound(emb, cfg)
    if cfg.lr_u is None and cfg.lam * d_top.sum() + cfg.rho * c_top + cfg.tau <= 0:
        raise SingularSystemError("The u-block has no curvature; use a ridge weight tau > 0")
    logger.info("Starting block coordinate descent: m=%d, d_x=%d", emb.m, emb.d_x)

    loss_trace = [loss_eval(emb, u, eta, cfg)]
    increases = 0
    converged = False
    iteration = 0
    for iteration in range(1, cfg.bcd_max_iter + 1):
        Du = np.einsum("jkl,l->jk", emb.D, u)
        grad_u = cfg.lam * (Du / eta[:, None]).sum(axis=0) + cfg.rho * emb.C @ u + cfg.tau * u - emb.delta
        lr_u = cfg.lr_u or 1.0 / (cfg.lam * np.sum(d_top / eta) + cfg.rho * c_top + cfg.tau)
        u = u - lr_u * grad_u

        if cfg.lam > 0:
            forms = quadratic_forms(emb, u)
            grad_eta = penalty_gradient(forms, eta, cfg.lam, cfg.eps)
            lr_eta = cfg.lr_eta or 1.0 / (cfg.lam * np.max((forms + cfg.eps) / eta**2))
            eta = mirror_descent_step(eta, grad_eta, lr_eta)
        else:
            # eta does not enter the loss at lam = 0; keep it at the closed form
            eta = eta_closed_form(u, emb, cfg.eps)

        loss = loss_eval(emb, u, eta, cfg)
        if not np.isfinite(loss):
            raise ConvergenceError(f"BCD loss became non-finite at iteration {iteration}; use smaller learning rates")
        increases = increases + 1 if loss > loss_trace[-1] else 0
        loss_trace.append(loss)
        if increases >= cfg.patience:
            raise ConvergenceError(
                f"BCD loss increased for {increases} consecutive iterations; use smaller learning rates"
            )
        if abs(loss_trace[-2] - loss) < cfg.bcd_tol:
            converged = True
            break

    solution = ConvexSolution(
        u=u,
        eta=eta,
        loss_trace=loss_trace,
        fixed_point_residual=fixed_point_residual(emb, u, eta, cfg),
        sic_value=0.5 * float(u @ emb.delta),
        iterations=iteration,
        converged=converged,
        algorithm="bcd",
    )
    logger.info(
        "Completed block coordinate descent in %d iterations (%.2fs): loss %.8g",
        iteration, time.time() - start_time, loss_trace[-1],
    )
    return solution


def sic_value_and_decomposition(
    emb: EmbeddingSet, sol: ConvexSolution, cfg: ConvexConfig, rtol: float = 1e-4
) -> Tuple[float, np.ndarray]:
    """SIC = <u, delta>/2 and per-feature shares eta_j * Omega.

    Checks the optimality identity
        <u, delta> = lam (S^2 - eps S sum_j 1/beta_j) + rho <u, C u> + tau |u|^2
    with beta_j = sqrt(<u, D_j u> + eps) and S = sum_j beta_j. The eps term
    vanishes as eps -> 0, recovering lam * Omega^2.
    """
    u, eta = _check_point(emb, sol.u, sol.eta)
    beta = np.sqrt(quadratic_forms(emb, u) + cfg.eps)
    omega = float(beta.sum())
    lhs = float(u @ emb.delta)
    rhs = cfg.lam * (omega**2 - cfg.eps * omega * np.sum(1.0 / beta)) + cfg.rho * u @ emb.C @ u + cfg.tau * u @ u
    scale = max(abs(lhs), abs(rhs))
    if scale > 1e-15 and abs(lhs - rhs) > rtol * scale:
        raise ConvergenceError(
            f"Optimality identity violated: <u, delta> = {lhs:.6g} vs {rhs:.6g}; solution not converged"
        )
    return 0.5 * lhs, eta * omega


def fit_annealed(
    emb: EmbeddingSet, cfg: ConvexConfig, eps_start: float = 1e-2, factor: float = 0.1
) -> Tuple[ConvexSolution, List[np.ndarray]]:
    """Geometric eps schedule down to cfg.eps, warm-starting eta at each level"""
    if not 0 < factor < 1:
        raise ValueError(f"Annealing factor must lie in (0, 1), got {factor}")
    schedule = []
    eps = max(eps_start, cfg.eps)
    while eps > cfg.eps * (1.0 + 1e-9):
        schedule.append(eps)
        eps *= factor
    schedule.append(cfg.eps)

    eta_path: List[np.ndarray] = []
    eta = None
    solution = None
    for eps in schedule:
        solution = fit_alternating(emb, cfg.model_copy(update={"eps": eps}), eta0=eta)
        eta = solution.eta
        eta_path.append(eta.copy())
    return solution, eta_path
