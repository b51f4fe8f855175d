import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from errors import DegenerateCovarianceError, PreconditionError, SICError
from neural_sic import NeuralSolution, witness_scorer

logger = logging.getLogger(__name__)

RIDGE = 1e-6

Scorer = Callable[[np.ndarray, np.ndarray], float]


class HrtConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    shortlist: Optional[int] = Field(None, ge=1, description="top-eta features tested; None picks by data scale")
    rounds: int = Field(99, ge=1, description="randomization rounds R per feature")
    target_fdr: float = Field(0.1, gt=0, lt=1)
    seed: int = 0


class ConditionalGenerator(Protocol):
    """Samples feature j given the remaining columns"""

    def sample(self, X: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass
class GaussianConditionalModel:
    """Joint Gaussian fit of the features with cached complete conditionals.

    For feature j, x_j | x_-j ~ N(mean_j + (x_-j - mean_-j) . coef_j, cond_var_j),
    read off the precision matrix P: cond_var_j = 1 / P_jj, coef_j = -P_j,-j / P_jj.
    """

    mean: np.ndarray
    cov: np.ndarray
    coefs: np.ndarray  # (d, d) with zero diagonal
    cond_var: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.size

    def conditional_mean(self, X: np.ndarray, j: int) -> np.ndarray:
        return self.mean[j] + (X - self.mean) @ self.coefs[j]

    def sample(self, X: np.ndarray, j: int, rng: np.random.Generator) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not 0 <= j < self.d:
            raise IndexError(f"Feature {j} out of range for {self.d} features")
        noise = rng.standard_normal(X.shape[0])
        return self.conditional_mean(X, j) + np.sqrt(self.cond_var[j]) * noise


def gaussian_conditional_from_moments(mean, cov) -> GaussianConditionalModel:
    """Complete Gaussian conditionals of a known mean and covariance"""
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.size
    if cov.shape != (d, d):
        raise PreconditionError(f"Covariance must be {d} x {d}, got shape {cov.shape}")
    try:
        precision = cho_solve(cho_factor(cov, lower=True), np.eye(d))
    except (LinAlgError, ValueError) as e:
        raise DegenerateCovarianceError(f"Covariance is degenerate: {e}") from e
    precision = 0.5 * (precision + precision.T)
    diag = np.diag(precision)
    if np.any(diag <= 0) or not np.all(np.isfinite(precision)):
        raise DegenerateCovarianceError("Conditional variances are not positive")
    coefs = -precision / diag[:, None]
    np.fill_diagonal(coefs, 0.0)
    return GaussianConditionalModel(mean=mean, cov=cov, coefs=coefs, cond_var=1.0 / diag)


def fit_gaussian_conditional(X, ridge: float = RIDGE) -> GaussianConditionalModel:
    """Empirical mean and ridge-regularized covariance, with Gaussian conditionals"""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PreconditionError(f"Need a 2-D feature matrix with at least 2 rows, got shape {X.shape}")
    n, d = X.shape
    if n <= d:
        logger.warning("Fitting a %d-dimensional Gaussian on %d rows; relying on the ridge", d, n)
    cov = np.atleast_2d(np.cov(X, rowvar=False)) + ridge * np.eye(d)
    return gaussian_conditional_from_moments(X.mean(axis=0), cov)


@dataclass
class HrtResult:
    shortlist: List[int]
    pvalues: np.ndarray  # aligned with shortlist
    rounds: int
    observed_score: float
    null_scores: Dict[int, np.ndarray] = field(default_factory=dict)
    selected: List[int] = field(default_factory=list)
    target_fdr: Optional[float] = None

    def pvalue_map(self) -> Dict[int, float]:
        return {j: float(p) for j, p in zip(self.shortlist, self.pvalues)}


def _resolve_scorer(witness: Union[NeuralSolution, Scorer]) -> Scorer:
    if isinstance(witness, NeuralSolution):
        return witness_scorer(witness)
    if callable(witness):
        return witness
    raise PreconditionError(f"Expected a NeuralSolution or a scoring callable, got {type(witness).__name__}")


def default_shortlist(d_x: int) -> int:
    """20 candidates for SinExp-scale problems, 100 for Liang-scale ones"""
    return min(d_x, 20 if d_x <= 100 else 100)


def top_k(eta, k: int) -> List[int]:
    """Indices of the k largest scores, best first (ties broken by index)"""
    eta = np.asarray(eta, dtype=float)
    order = np.lexsort((np.arange(eta.size), -eta))
    return [int(j) for j in order[: min(k, eta.size)]]


def hrt_pvalues(
    witness: Union[NeuralSolution, Scorer],
    holdout,
    generator: ConditionalGenerator,
    shortlist: Sequence[int],
    rounds: int = 99,
    seed: int = 0,
) -> HrtResult:
    """Holdout randomization p-values for each shortlisted feature.

    p_j = (1 + #{r : S_j^r >= S*}) / (R + 1), where S* is the witness score on
    the holdout and S_j^r the score after resampling column j from its
    conditional law given the other columns.
    """
    start_time = time.time()
    X, Y = holdout
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    shortlist = [int(j) for j in shortlist]
    if not shortlist:
        raise PreconditionError("Shortlist must not be empty")
    for j in shortlist:
        if not 0 <= j < X.shape[1]:
            raise IndexError(f"Shortlisted feature {j} out of range for {X.shape[1]} features")
    if rounds < 1:
        raise PreconditionError(f"Need at least one randomization round, got {rounds}")
    if rounds < 19:
        logger.warning("Only %d rounds: the smallest attainable p-value is %.3f", rounds, 1.0 / (rounds + 1))

    score = _resolve_scorer(witness)
    observed = float(score(X, Y))
    # one independent stream per feature keeps results independent of scheduling
    streams = np.random.SeedSequence(seed).spawn(len(shortlist))

    logger.info("Starting HRT on %d features with %d rounds each", len(shortlist), rounds)
    pvalues = np.empty(len(shortlist))
    null_scores: Dict[int, np.ndarray] = {}
    for pos, (j, stream) in enumerate(zip(shortlist, streams)):
        rng = np.random.default_rng(stream)
        scores = np.empty(rounds)
        X_null = X.copy()
        for r in range(rounds):
            try:
                X_null[:, j] = generator.sample(X, j, rng)
            except Exception as e:
                raise SICError(f"Failed to sample feature {j} from the conditional generator: {e}") from e
            scores[r] = score(X_null, Y)
        null_scores[j] = scores
        pvalues[pos] = (1.0 + np.sum(scores >= observed)) / (rounds + 1.0)

    logger.info("Completed HRT in %.2f seconds (observed score %.6g)", time.time() - start_time, observed)
    return HrtResult(
        shortlist=shortlist,
        pvalues=pvalues,
        rounds=rounds,
        observed_score=observed,
        null_scores=null_scores,
    )


def benjamini_hochberg(p, q: float) -> List[int]:
    """Step-up BH procedure; returns positions of rejected hypotheses, ascending"""
    p = np.asarray(p, dtype=float)
    if not 0 < q < 1:
        raise PreconditionError(f"Target FDR must lie in (0, 1), got {q}")
    if p.size == 0:
        return []
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise PreconditionError("p-values must lie in [0, 1]")
    k = p.size
    sorted_p = np.sort(p)
    below = np.nonzero(sorted_p <= np.arange(1, k + 1) * q / k)[0]
    if below.size == 0:
        return []
    threshold = sorted_p[below[-1]]
    return [int(i) for i in np.nonzero(p <= threshold)[0]]


def hrt_select(
    witness: Union[NeuralSolution, Scorer],
    holdout,
    generator: ConditionalGenerator,
    eta,
    cfg: HrtConfig = HrtConfig(),
) -> HrtResult:
    """Shortlist the top-K features by eta, test them and apply BH at the target FDR"""
    eta = np.asarray(eta, dtype=float)
    shortlist = top_k(eta, cfg.shortlist or default_shortlist(eta.size))
    result = hrt_pvalues(witness, holdout, generator, shortlist, rounds=cfg.rounds, seed=cfg.seed)
    rejected = benjamini_hochberg(result.pvalues, cfg.target_fdr)
    result.selected = sorted(result.shortlist[i] for i in rejected)
    result.target_fdr = cfg.target_fdr
    logger.info("HRT selected %d of %d shortlisted features at FDR %.2f", len(result.selected), len(shortlist), cfg.target_fdr)
    return result
