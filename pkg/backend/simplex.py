"""Helpers for importance scores living on the open probability simplex."""
import numpy as np
from scipy.special import softmax

from errors import PreconditionError

SIMPLEX_ATOL = 1e-9


def uniform(d: int) -> np.ndarray:
    return np.full(d, 1.0 / d)


def check_open_simplex(eta, name: str = "eta") -> np.ndarray:
    """Validate that eta is strictly positive and sums to one"""
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1 or eta.size == 0:
        raise PreconditionError(f"{name} must be a non-empty vector, got shape {eta.shape}")
    if not np.all(np.isfinite(eta)) or np.any(eta <= 0):
        raise PreconditionError(f"{name} must be strictly positive (min entry {eta.min()})")
    if abs(eta.sum() - 1.0) > SIMPLEX_ATOL:
        raise PreconditionError(f"{name} must sum to 1 (sum is {eta.sum()})")
    return eta


def eta_from_moments(moments, eps: float) -> np.ndarray:
    """Minimizer over the simplex of sum_j (a_j + eps) / eta_j.

    The optimum is eta_j = sqrt(a_j + eps) / sum_k sqrt(a_k + eps).
    """
    beta = np.sqrt(np.asarray(moments, dtype=float) + eps)
    total = beta.sum()
    if total <= 0:
        return uniform(beta.size)
    return beta / total


def penalty_gradient(moments, eta, lam: float, eps: float) -> np.ndarray:
    """d/d eta_j of (lam/2) * sum_j (a_j + eps) / eta_j"""
    return -0.5 * lam * (np.asarray(moments) + eps) / np.asarray(eta) ** 2


def mirror_descent_step(eta, grad, lr: float) -> np.ndarray:
    # softmax(log eta - lr * grad); scipy subtracts the max logit
    logits = np.log(eta) - lr * np.asarray(grad)
    out = softmax(logits)
    # underflowed coordinates would leave the open simplex
    tiny = np.finfo(float).tiny
    if np.any(out <= 0):
        out = np.maximum(out, tiny)
        out /= out.sum()
    return out
