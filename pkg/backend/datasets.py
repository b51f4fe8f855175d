import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from errors import PreconditionError

logger = logging.getLogger(__name__)

SINEXP_FEATURES = 50
SINEXP_TRUTH = tuple(range(6))
LIANG_FEATURES = 500
LIANG_TRUTH = tuple(range(40))
LIANG_BLOCKS = 10


@dataclass
class SyntheticDataset:
    """Feature matrix, response column and the generating feature set.

    ``truth`` holds 0-based column positions.
    """

    X: np.ndarray
    Y: np.ndarray
    truth: Optional[Tuple[int, ...]] = None
    spec: Dict[str, object] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows: np.ndarray, part: str) -> "SyntheticDataset":
        return SyntheticDataset(
            X=self.X[rows], Y=self.Y[rows], truth=self.truth, spec={**self.spec, "part": part}
        )


class Metrics(BaseModel):
    tpr: float = Field(ge=0, le=1)
    fdr: float = Field(ge=0, le=1)


def gen_correlated_features(n: int, d: int, seed: int) -> np.ndarray:
    """x_j = (r + z_j) / 2 with one shared standard normal r per row.

    Each column has variance 1/2 and every pair has correlation 1/2.
    """
    if n < 1 or d < 1:
        raise PreconditionError(f"Need n, d >= 1, got ({n}, {d})")
    rng = np.random.default_rng(seed)
    shared = rng.standard_normal((n, 1))
    return (shared + rng.standard_normal((n, d))) / 2.0


def sinexp_response(X: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5, x6 = (X[:, j] for j in SINEXP_TRUTH)
    return np.sin(x1 * (x1 + x2)) * np.cos(x3 + x4 * x5) * np.sin(np.exp(x5) + np.exp(x6) - x2)


def gen_sinexp(n: int, seed: int, noise_sd: float = 0.1) -> SyntheticDataset:
    """Six of fifty correlated features drive y through sin/cos/exp compositions"""
    if noise_sd < 0:
        raise PreconditionError(f"noise_sd must be non-negative, got {noise_sd}")
    rng = np.random.default_rng(seed)
    X = gen_correlated_features(n, SINEXP_FEATURES, int(rng.integers(2**32)))
    y = sinexp_response(X) + noise_sd * rng.standard_normal(n)
    return SyntheticDataset(
        X=X,
        Y=y[:, None],
        truth=SINEXP_TRUTH,
        spec={"generator": "sinexp", "n": n, "seed": seed, "noise_sd": noise_sd},
    )


def liang_weights(weights_seed: int) -> np.ndarray:
    return np.random.default_rng(weights_seed).standard_normal(4 * LIANG_BLOCKS)


def liang_response(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Sum over ten blocks of w_a x_a + w_b x_b + tanh(w_c x_c + w_d x_d).

    Block k covers columns 4k .. 4k+3.
    """
    y = np.zeros(X.shape[0])
    for k in range(LIANG_BLOCKS):
        a, b, c, e = 4 * k, 4 * k + 1, 4 * k + 2, 4 * k + 3
        y += w[a] * X[:, a] + w[b] * X[:, b] + np.tanh(w[c] * X[:, c] + w[e] * X[:, e])
    return y


def gen_liang(n: int, seed: int, sigma: float = 0.5, weights_seed: int = 0) -> SyntheticDataset:
    """Five hundred correlated features, the first forty enter y"""
    if sigma < 0:
        raise PreconditionError(f"sigma must be non-negative, got {sigma}")
    rng = np.random.default_rng(seed)
    X = gen_correlated_features(n, LIANG_FEATURES, int(rng.integers(2**32)))
    y = liang_response(X, liang_weights(weights_seed)) + sigma * rng.standard_normal(n)
    return SyntheticDataset(
        X=X,
        Y=y[:, None],
        truth=LIANG_TRUTH,
        spec={"generator": "liang", "n": n, "seed": seed, "sigma": sigma, "weights_seed": weights_seed},
    )


def gen_null(n: int, d: int, seed: int) -> SyntheticDataset:
    """Correlated features with a response independent of them"""
    rng = np.random.default_rng(seed)
    X = gen_correlated_features(n, d, int(rng.integers(2**32)))
    return SyntheticDataset(
        X=X,
        Y=rng.standard_normal((n, 1)),
        truth=(),
        spec={"generator": "null", "n": n, "d": d, "seed": seed},
    )


GENERATORS = {"sinexp": gen_sinexp, "liang": gen_liang}


def generate(kind: str, n: int, seed: int) -> SyntheticDataset:
    if kind not in GENERATORS:
        raise PreconditionError(f"Unknown dataset kind {kind!r}, expected one of {sorted(GENERATORS)}")
    return GENERATORS[kind](n, seed)


def tpr_fdr(selected: Iterable[int], truth: Iterable[int]) -> Metrics:
    """True positive rate and false discovery proportion (0 for an empty selection)"""
    selected = set(int(j) for j in selected)
    truth = set(int(j) for j in truth)
    if not truth:
        raise PreconditionError("Ground-truth feature set must not be empty")
    if any(j < 0 for j in selected | truth):
        raise PreconditionError("Feature indices must be non-negative")
    hits = len(selected & truth)
    return Metrics(tpr=hits / len(truth), fdr=len(selected - truth) / max(len(selected), 1))


def split(dataset: SyntheticDataset, fraction: float, seed: int) -> Tuple[SyntheticDataset, SyntheticDataset]:
    """Seeded shuffle into a train part (``fraction`` of rows) and a holdout part"""
    if not 0 < fraction < 1:
        raise PreconditionError(f"fraction must lie in (0, 1), got {fraction}")
    n_train = int(round(fraction * dataset.n))
    if n_train == 0 or n_train == dataset.n:
        raise PreconditionError(f"fraction {fraction} leaves an empty part for {dataset.n} rows")
    order = np.random.default_rng(seed).permutation(dataset.n)
    return dataset.subset(order[:n_train], "train"), dataset.subset(order[n_train:], "holdout")
