import logging
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from errors import DimensionError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_FEATURES = 256


@dataclass(frozen=True)
class RandomFourierMap:
    """phi_k(z) = sqrt(2/m) cos(w_k . z / bandwidth + b_k) on z = (x, y)"""

    frequencies: np.ndarray  # (m, d_x + d_y)
    phases: np.ndarray  # (m,)
    bandwidth: float
    d_x: int
    d_y: int

    @property
    def m(self) -> int:
        return self.frequencies.shape[0]

    @property
    def scale(self) -> float:
        return np.sqrt(2.0 / self.m)

    def to_dict(self) -> Dict[str, object]:
        return {
            "frequencies": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
            "bandwidth": self.bandwidth,
            "d_x": self.d_x,
            "d_y": self.d_y,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "RandomFourierMap":
        return cls(
            frequencies=np.asarray(payload["frequencies"], dtype=float),
            phases=np.asarray(payload["phases"], dtype=float),
            bandwidth=float(payload["bandwidth"]),
            d_x=int(payload["d_x"]),
            d_y=int(payload["d_y"]),
        )


@dataclass(frozen=True)
class EmbeddingSet:
    mu_joint: np.ndarray
    mu_prod: np.ndarray
    C: np.ndarray
    D: np.ndarray  # (d_x, m, m), one derivative Gramian per feature

    @property
    def delta(self) -> np.ndarray:
        return self.mu_joint - self.mu_prod

    @property
    def m(self) -> int:
        return self.mu_joint.size

    @property
    def d_x(self) -> int:
        return self.D.shape[0]

    def get_embedding_info(self) -> Dict[str, object]:
        return {
            "features": self.m,
            "d_x": self.d_x,
            "delta_norm": float(np.linalg.norm(self.delta)),
            "trace_C": float(np.trace(self.C)),
            "trace_D": [float(np.trace(Dj)) for Dj in self.D],
        }


def make_rff(d_x: int, d_y: int, m: int = DEFAULT_FEATURES, bandwidth: float = 1.0, seed: int = 0) -> RandomFourierMap:
    """Draw a frozen random Fourier map: standard normal frequencies, uniform phases"""
    if m < 1:
        raise PreconditionError(f"Feature count m must be >= 1, got {m}")
    if not bandwidth > 0 or not np.isfinite(bandwidth):
        raise PreconditionError(f"Bandwidth must be positive and finite, got {bandwidth}")
    if d_x < 1 or d_y < 0:
        raise PreconditionError(f"Need d_x >= 1 and d_y >= 0, got ({d_x}, {d_y})")
    rng = np.random.default_rng(seed)
    frequencies = rng.standard_normal((m, d_x + d_y))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
    frequencies.setflags(write=False)
    phases.setflags(write=False)
    return RandomFourierMap(frequencies=frequencies, phases=phases, bandwidth=float(bandwidth), d_x=d_x, d_y=d_y)


def median_bandwidth(Z: np.ndarray) -> float:
    """Median heuristic: median pairwise Euclidean distance between rows"""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        return 1.0
    dists = pdist(Z)
    med = float(np.median(dists[dists > 0])) if np.any(dists > 0) else 1.0
    return med if med > 0 else 1.0


def _rows(fmap: RandomFourierMap, z) -> Tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    width = fmap.d_x + fmap.d_y
    if z.ndim != 2 or z.shape[1] != width:
        raise DimensionError("feature map input width", width, z.shape[-1])
    return z, single


def _phase(fmap: RandomFourierMap, z: np.ndarray) -> np.ndarray:
    return z @ fmap.frequencies.T / fmap.bandwidth + fmap.phases


def embed(fmap: RandomFourierMap, z) -> np.ndarray:
    """Phi(z) for a single vector (m,) or for rows (N, m)"""
    z, single = _rows(fmap, z)
    out = fmap.scale * np.cos(_phase(fmap, z))
    return out[0] if single else out


def x_derivative(fmap: RandomFourierMap, z, j: int) -> np.ndarray:
    """d Phi / d x_j, with j a 0-based position among the x coordinates"""
    if not 0 <= j < fmap.d_x:
        raise IndexError(f"x coordinate {j} out of range for d_x = {fmap.d_x}")
    z, single = _rows(fmap, z)
    out = -fmap.scale * np.sin(_phase(fmap, z)) * fmap.frequencies[:, j] / fmap.bandwidth
    return out[0] if single else out


def witness(fmap: RandomFourierMap, u: np.ndarray, X, Y) -> np.ndarray:
    """Row-wise critic values f(x, y) = <u, Phi(x, y)>"""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    return embed(fmap, np.hstack([X, Y])) @ u


def build_embeddings(fmap: RandomFourierMap, joint, prod) -> EmbeddingSet:
    """Empirical mean embeddings, covariance and derivative Gramians.

    ``joint`` holds the (X, Y) rows and ``prod`` the (X, Y~) rows; C and every
    D_j are estimated on the product rows.
    """
    start_time = time.time()
    z_joint = _stack_pair(joint)
    z_prod = _stack_pair(prod)
    if z_joint.shape[0] != z_prod.shape[0]:
        raise PreconditionError(f"Row counts differ: joint {z_joint.shape[0]}, product {z_prod.shape[0]}")
    if z_joint.shape[0] < 1:
        raise PreconditionError("Need at least one row to build embeddings")
    n = z_prod.shape[0]

    phi_joint = embed(fmap, z_joint)
    phi_prod = embed(fmap, z_prod)
    mu_joint = phi_joint.mean(axis=0)
    mu_prod = phi_prod.mean(axis=0)
    C = phi_prod.T @ phi_prod / n

    # d phi_k / d x_j = s_k(z) w_kj / bw, so D_j = (w_j w_j^T / bw^2) * mean(s s^T)
    sines = fmap.scale * np.sin(_phase(fmap, z_prod))
    sine_gram = sines.T @ sines / n
    w_x = fmap.frequencies[:, : fmap.d_x] / fmap.bandwidth
    D = np.empty((fmap.d_x, fmap.m, fmap.m))
    for j in range(fmap.d_x):
        D[j] = np.outer(w_x[:, j], w_x[:, j]) * sine_gram

    logger.debug(
        "Built embeddings for %d rows, m=%d, d_x=%d in %.2f seconds",
        n, fmap.m, fmap.d_x, time.time() - start_time,
    )
    return EmbeddingSet(mu_joint=mu_joint, mu_prod=mu_prod, C=C, D=D)


def _stack_pair(pair) -> np.ndarray:
    X, Y = pair
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1) if np.size(Y) else np.empty((X.shape[0], 0))
    return np.hstack([X, Y])


def embeddings_from_data(
    X, Y, m: int = DEFAULT_FEATURES, seed: int = 0, bandwidth: Optional[float] = None
) -> Tuple[RandomFourierMap, EmbeddingSet]:
    """Build the map and embeddings for a dataset, using a permuted copy of Y"""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    rng = np.random.default_rng(seed)
    Y_perm = Y[rng.permutation(X.shape[0])]
    if bandwidth is None:
        bandwidth = median_bandwidth(np.hstack([X, Y_perm]))
    fmap = make_rff(X.shape[1], Y.shape[1], m=m, bandwidth=bandwidth, seed=seed)
    logger.info("Random Fourier map: m=%d, bandwidth=%.4f", m, bandwidth)
    return fmap, build_embeddings(fmap, (X, Y), (X, Y_perm))
