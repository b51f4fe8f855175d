import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.stats import gmean

from autodiff_net import (
    CriticNet,
    adam_step,
    draw_dropout_mask,
    forward,
    join_xy,
    loss_gradients,
    make_adam,
    net_from_dict,
    net_to_dict,
    regression_loss_gradients,
)
from errors import DimensionError, NumericError, PreconditionError
from simplex import SIMPLEX_ATOL, check_open_simplex, mirror_descent_step, penalty_gradient, uniform

logger = logging.getLogger(__name__)


class NeuralConfig(BaseModel):
    """Critic architecture and stochastic BCD settings.

    Defaults follow the small bias-free ReLU dropout critic trained with Adam
    (beta1 = 0.5) for 4000 updates on batches of 100.
    """

    model_config = ConfigDict(frozen=True)

    hidden_widths: Tuple[int, ...] = (100, 100)
    bias: bool = False
    activation: str = "relu"
    negative_slope: float = Field(0.01, ge=0)
    dropout: float = Field(0.3, ge=0, lt=1)
    branch_widths: Optional[Tuple[int, ...]] = None

    lam: float = Field(1.0, ge=0)
    rho: float = Field(1e-3, ge=0)
    eps: float = Field(1e-6, gt=0, lt=1)
    lr_theta: float = Field(1e-3, gt=0)
    lr_eta: float = Field(0.1, gt=0)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    weight_decay: float = Field(1e-4, ge=0)
    batch_size: int = Field(100, ge=1)
    max_iter: int = Field(4000, ge=1)
    seed: int = 0
    record_eta_trace: bool = False

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value: str) -> str:
        if value not in ("relu", "leaky_relu"):
            raise ValueError(f"activation must be 'relu' or 'leaky_relu', got {value!r}")
        return value

    @classmethod
    def small_critic(cls, **overrides) -> "NeuralConfig":
        return cls(**overrides)

    @classmethod
    def big_critic(cls, **overrides) -> "NeuralConfig":
        params = dict(
            hidden_widths=(100, 100),
            bias=True,
            activation="leaky_relu",
            dropout=0.0,
            branch_widths=(100, 100),
        )
        params.update(overrides)
        return cls(**params)

    def build_net(self, d_x: int, d_y: int) -> CriticNet:
        return CriticNet(
            d_x,
            d_y,
            hidden_widths=self.hidden_widths,
            bias=self.bias,
            activation=self.activation,
            negative_slope=self.negative_slope,
            dropout_rate=self.dropout,
            branch_widths=self.branch_widths,
            seed=self.seed,
        )


@dataclass
class NeuralSolution:
    net: CriticNet
    eta: np.ndarray
    loss_trace: List[float] = field(default_factory=list)
    seed: int = 0
    eta_trace: List[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "net": net_to_dict(self.net),
            "eta": self.eta.tolist(),
            "loss_trace": list(self.loss_trace),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "NeuralSolution":
        return cls(
            net=net_from_dict(payload["net"]),
            eta=np.asarray(payload["eta"], dtype=float),
            loss_trace=list(payload.get("loss_trace", [])),
            seed=int(payload.get("seed", 0)),
        )


def _as_2d(Y: np.ndarray, n: int) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    return Y.reshape(n, -1) if Y.ndim == 1 else Y


def permute_marginals(Y, seed: int) -> np.ndarray:
    """Rows of Y in a uniformly random order, breaking the pairing with X"""
    Y = np.asarray(Y)
    if Y.shape[0] < 2:
        raise PreconditionError(f"Need at least 2 rows to permute, got {Y.shape[0]}")
    rng = np.random.default_rng(seed)
    return Y[rng.permutation(Y.shape[0])]


def _check_data(X, Y, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X dimensions", 2, X.ndim)
    Y = _as_2d(Y, X.shape[0])
    if Y.shape[0] != X.shape[0]:
        raise DimensionError("rows of Y", X.shape[0], Y.shape[0])
    if batch_size > X.shape[0]:
        raise PreconditionError(f"Batch size {batch_size} exceeds the {X.shape[0]} available rows")
    return X, Y


def fit(X, Y, cfg: NeuralConfig, eta0: Optional[np.ndarray] = None) -> NeuralSolution:
    """Stochastic block coordinate descent for neural SIC.

    Each iteration draws a joint minibatch and an independent product minibatch
    (fresh permutation of Y), takes an Adam step on the critic and a mirror
    descent step on eta.
    """
    start_time = time.time()
    X, Y = _check_data(X, Y, cfg.batch_size)
    n, d_x = X.shape
    rng = np.random.default_rng(cfg.seed)
    mask_gen = torch.Generator().manual_seed(cfg.seed + 1)

    net = cfg.build_net(d_x, Y.shape[1])
    params = list(net.parameters())
    adam = make_adam(params, lr=cfg.lr_theta, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    eta = uniform(d_x) if eta0 is None else check_open_simplex(eta0).copy()
    use_dropout = cfg.dropout > 0

    logger.info(
        "Starting neural SIC fit: n=%d, d_x=%d, batch=%d, iterations=%d, seed=%d",
        n, d_x, cfg.batch_size, cfg.max_iter, cfg.seed,
    )
    loss_trace: List[float] = []
    eta_trace: List[np.ndarray] = []
    for iteration in range(cfg.max_iter):
        idx_joint = rng.choice(n, cfg.batch_size, replace=False)
        idx_prod = rng.choice(n, cfg.batch_size, replace=False)
        Y_perm = Y[rng.permutation(n)]
        mask_joint = draw_dropout_mask(net, cfg.batch_size, generator=mask_gen) if use_dropout else None
        mask_prod = draw_dropout_mask(net, cfg.batch_size, generator=mask_gen) if use_dropout else None

        try:
            result = loss_gradients(
                net,
                eta,
                (X[idx_joint], Y[idx_joint]),
                (X[idx_prod], Y_perm[idx_prod]),
                cfg.lam,
                cfg.rho,
                cfg.eps,
                mask_joint=mask_joint,
                mask_prod=mask_prod,
            )
        except NumericError as e:
            raise NumericError(e.term, iteration) from e
        if not np.isfinite(result.loss):
            raise NumericError("loss", iteration)

        adam_step(adam, params, result.grads)
        eta = mirror_descent_step(eta, penalty_gradient(result.moments, eta, cfg.lam, cfg.eps), cfg.lr_eta)

        loss_trace.append(result.loss)
        if cfg.record_eta_trace:
            eta_trace.append(eta.copy())
        if iteration % 500 == 0:
            logger.debug("iter %d: loss %.6g, max eta %.4f", iteration, result.loss, eta.max())

    if abs(eta.sum() - 1.0) > SIMPLEX_ATOL:
        eta = eta / eta.sum()
    logger.info(
        "Completed neural SIC fit in %.2f seconds: final loss %.6g, top feature %d (eta %.4f)",
        time.time() - start_time, loss_trace[-1], int(np.argmax(eta)), eta.max(),
    )
    return NeuralSolution(net=net, eta=eta, loss_trace=loss_trace, seed=cfg.seed, eta_trace=eta_trace)


def fit_sobolev_regression(X, Y, cfg: NeuralConfig) -> NeuralSolution:
    """Regressor g(x) trained on MSE plus the gradient-sparsity penalty, eta ranks features"""
    start_time = time.time()
    X, Y = _check_data(X, Y, cfg.batch_size)
    n, d_x = X.shape
    y = Y[:, 0]
    rng = np.random.default_rng(cfg.seed)
    mask_gen = torch.Generator().manual_seed(cfg.seed + 1)

    net = cfg.build_net(d_x, 0)
    params = list(net.parameters())
    adam = make_adam(params, lr=cfg.lr_theta, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    eta = uniform(d_x)
    loss_trace: List[float] = []

    logger.info("Starting Sobolev-penalized regression: n=%d, d_x=%d", n, d_x)
    for iteration in range(cfg.max_iter):
        idx = rng.choice(n, cfg.batch_size, replace=False)
        mask = draw_dropout_mask(net, cfg.batch_size, generator=mask_gen) if cfg.dropout > 0 else None
        try:
            result = regression_loss_gradients(net, eta, X[idx], y[idx], cfg.lam, cfg.eps, mask=mask)
        except NumericError as e:
            raise NumericError(e.term, iteration) from e
        adam_step(adam, params, result.grads)
        eta = mirror_descent_step(eta, penalty_gradient(result.moments, eta, cfg.lam, cfg.eps), cfg.lr_eta)
        loss_trace.append(result.loss)

    logger.info("Completed Sobolev-penalized regression in %.2f seconds", time.time() - start_time)
    return NeuralSolution(net=net, eta=eta, loss_trace=loss_trace, seed=cfg.seed)


def witness_score(net: CriticNet, X, Y) -> float:
    """Mean critic value over rows with dropout disabled"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    with torch.no_grad():
        values = forward(net, join_xy(X, _as_2d(Y, X.shape[0])))
    return float(values.mean())


def witness_scorer(solution: NeuralSolution) -> Callable[[np.ndarray, np.ndarray], float]:
    return lambda X, Y: witness_score(solution.net, X, Y)


def boost_scores(etas: Sequence[np.ndarray], mode: str = "arithmetic") -> np.ndarray:
    """Aggregate importance scores of several fits (Boosted SIC)"""
    if len(etas) == 0:
        raise PreconditionError("Need at least one eta vector to aggregate")
    stacked = np.vstack([np.asarray(e, dtype=float) for e in etas])
    if mode == "arithmetic":
        return stacked.mean(axis=0)
    if mode == "geometric":
        if np.any(stacked <= 0):
            raise PreconditionError("Geometric aggregation needs strictly positive scores")
        out = gmean(stacked, axis=0)
        return out / out.sum()
    raise PreconditionError(f"Unknown aggregation mode {mode!r}, expected 'arithmetic' or 'geometric'")


@dataclass
class BoostedSolution:
    members: List[NeuralSolution]
    eta: np.ndarray
    mode: str


def fit_boosted(
    X,
    Y,
    cfg: NeuralConfig,
    batch_sizes: Sequence[int] = (10, 30, 50),
    seeds: Optional[Sequence[int]] = None,
    mode: str = "geometric",
    n_jobs: int = 1,
) -> BoostedSolution:
    """Fit one member per (seed, batch size) pair and aggregate their eta"""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    member_cfgs = [
        cfg.model_copy(update={"batch_size": b, "seed": s}) for s in seeds for b in batch_sizes
    ]
    logger.info("Starting boosted SIC with %d member fits (%s mean)", len(member_cfgs), mode)
    members = Parallel(n_jobs=n_jobs)(delayed(fit)(X, Y, member) for member in member_cfgs)
    return BoostedSolution(members=list(members), eta=boost_scores([m.eta for m in members], mode), mode=mode)
