import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from knockpy.smatrix import compute_smatrix
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

import neural_sic
from convex_sic import ConvexConfig, fit_alternating
from errors import DegenerateCovarianceError, DimensionError, PreconditionError, SICError
from feature_map import DEFAULT_FEATURES, embeddings_from_data
from neural_sic import NeuralConfig

logger = logging.getLogger(__name__)

RIDGE = 1e-6


class KnockoffConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    target_fdr: float = Field(0.2, gt=0, lt=1)
    offset: int = Field(0, ge=0, le=1, description="1 gives the knockoff+ threshold")
    inclusive: bool = Field(False, description="select W_j >= tau instead of W_j > tau")
    mode: str = Field("neural", pattern="^(neural|boosted|convex)$")
    boost_batch_sizes: Tuple[int, ...] = (10, 30, 50)
    features: int = Field(DEFAULT_FEATURES, ge=1, description="random features in convex mode")
    shrink: float = Field(1.0, ge=0, le=1, description="multiplier on the equicorrelated s")
    seed: int = 0


@dataclass
class KnockoffModel:
    """Second-order Gaussian knockoff law X~ | X ~ N(X - (X - mu) Sigma^-1 S, V)"""

    mean: np.ndarray
    cov: np.ndarray
    s: np.ndarray
    coef: np.ndarray  # Sigma^-1 diag(s)
    cond_cov: np.ndarray  # V = 2 diag(s) - diag(s) Sigma^-1 diag(s)
    cond_sqrt: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.mean.size


@dataclass
class KnockoffResult:
    W: np.ndarray
    threshold: float
    selected: List[int]
    target_fdr: float
    eta_full: Optional[np.ndarray] = None


def knockoff_model_from_moments(mean, cov, shrink: float = 1.0) -> KnockoffModel:
    """Equicorrelated knockoffs: s = min(2 lambda_min(corr), 1) on the correlation scale.

    The S-matrix comes from knockpy and is mapped back to the covariance scale.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    if cov.shape != (d, d):
        raise DimensionError("covariance shape", (d, d), cov.shape)
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    lam_min = float(eigh(corr, eigvals_only=True, subset_by_index=[0, 0])[0])
    if lam_min <= 0:
        raise DegenerateCovarianceError(f"Correlation matrix is not positive definite (lambda_min = {lam_min:.3g})")
    s_corr = np.diag(np.atleast_2d(compute_smatrix(corr, method="equicorrelated")))
    logger.debug("Equicorrelated s on the correlation scale: %.4g (lambda_min %.4g)", float(s_corr.min()), lam_min)
    s = shrink * s_corr * sd**2

    try:
        coef = cho_solve(cho_factor(cov, lower=True), np.diag(s))
    except (LinAlgError, ValueError) as e:
        raise DegenerateCovarianceError(f"Failed to factor the feature covariance: {e}") from e
    cond_cov = 2.0 * np.diag(s) - np.diag(s) @ coef
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    # V is PSD by construction and singular at s = 2 lambda_min; clip round-off
    vals, vecs = eigh(cond_cov)
    cond_sqrt = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return KnockoffModel(mean=mean, cov=cov, s=s, coef=coef, cond_cov=cond_cov, cond_sqrt=cond_sqrt)


def fit_knockoff_model(X, ridge: float = RIDGE, shrink: float = 1.0) -> KnockoffModel:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PreconditionError(f"Need a 2-D feature matrix with at least 2 rows, got shape {X.shape}")
    cov = np.atleast_2d(np.cov(X, rowvar=False)) + ridge * np.eye(X.shape[1])
    return knockoff_model_from_moments(X.mean(axis=0), cov, shrink=shrink)


def sample_knockoffs(model: KnockoffModel, X, seed: int = 0) -> np.ndarray:
    """One Gaussian conditional draw of the knockoff copy per row"""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DimensionError("feature count", model.d, X.shape[-1] if X.ndim else 0)
    rng = np.random.default_rng(seed)
    cond_mean = X - (X - model.mean) @ model.coef
    return cond_mean + rng.standard_normal(X.shape) @ model.cond_sqrt.T


def knockoff_stats(eta_full) -> np.ndarray:
    """W_j = eta_j - eta_{j + d_x} for an eta fitted on [X, X~]"""
    eta_full = np.asarray(eta_full, dtype=float)
    if eta_full.ndim != 1 or eta_full.size % 2:
        raise PreconditionError(f"Expected an even-length score vector, got {eta_full.size} entries")
    d = eta_full.size // 2
    return eta_full[:d] - eta_full[d:]


def knockoff_threshold(W, q: float, offset: int = 0, inclusive: bool = False) -> Tuple[float, List[int]]:
    """tau = min{t > 0 : (offset + #{W_j <= -t}) / #{W_j >= t} <= q}, over t in {|W_j| != 0}.

    Selection is {j : W_j > tau}; ``inclusive`` switches to W_j >= tau.
    """
    W = np.asarray(W, dtype=float)
    if not 0 < q < 1:
        raise PreconditionError(f"Target FDR must lie in (0, 1), got {q}")
    tau = np.inf
    for t in np.unique(np.abs(W[W != 0])):
        positives = np.sum(W >= t)
        if positives == 0:
            continue
        if (offset + np.sum(W <= -t)) / positives <= q:
            tau = float(t)
            break
    if np.isinf(tau):
        return tau, []
    chosen = W >= tau if inclusive else W > tau
    return tau, [int(j) for j in np.nonzero(chosen)[0]]


def _fit_eta(XX: np.ndarray, Y, cfg: KnockoffConfig, neural_cfg: Optional[NeuralConfig], convex_cfg: Optional[ConvexConfig]) -> np.ndarray:
    if cfg.mode == "convex":
        _, emb = embeddings_from_data(XX, Y, m=cfg.features, seed=cfg.seed)
        return fit_alternating(emb, convex_cfg or ConvexConfig()).eta
    neural_cfg = neural_cfg or NeuralConfig(seed=cfg.seed)
    if cfg.mode == "boosted":
        return neural_sic.fit_boosted(XX, Y, neural_cfg, batch_sizes=cfg.boost_batch_sizes, mode="geometric").eta
    return neural_sic.fit(XX, Y, neural_cfg).eta


def knockoff_select(
    X,
    Y,
    cfg: KnockoffConfig = KnockoffConfig(),
    neural_cfg: Optional[NeuralConfig] = None,
    convex_cfg: Optional[ConvexConfig] = None,
) -> KnockoffResult:
    """Sample knockoffs, fit SIC on [X, X~] and threshold the W statistics"""
    X = np.asarray(X, dtype=float)
    try:
        model = fit_knockoff_model(X, shrink=cfg.shrink)
        X_tilde = sample_knockoffs(model, X, seed=cfg.seed)
        logger.info("Fitting SIC (%s) on %d original and %d knockoff features", cfg.mode, X.shape[1], X.shape[1])
        eta_full = _fit_eta(np.hstack([X, X_tilde]), Y, cfg, neural_cfg, convex_cfg)
    except SICError:
        raise
    except Exception as e:
        raise SICError(f"Failed to run the knockoff filter: {e}") from e

    W = knockoff_stats(eta_full)
    tau, selected = knockoff_threshold(W, cfg.target_fdr, offset=cfg.offset, inclusive=cfg.inclusive)
    logger.info("Knockoff filter selected %d features (threshold %.4g, q=%.2f)", len(selected), tau, cfg.target_fdr)
    return KnockoffResult(W=W, threshold=tau, selected=selected, target_fdr=cfg.target_fdr, eta_full=eta_full)
