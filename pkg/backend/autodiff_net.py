import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from errors import DimensionError, NumericError, PreconditionError
from simplex import check_open_simplex

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence[float]]
Batch = Tuple[ArrayLike, ArrayLike]

ACTIVATIONS = ("relu", "leaky_relu")


class CriticNet(nn.Module):
    """Critic f(x, y) used by neural SIC.

    The default configuration is the bias-free ReLU network whose output is
    positively homogeneous of degree one. Setting ``bias=True``,
    ``activation="leaky_relu"`` or ``branch_widths`` builds the larger variant
    with separate x and y branches feeding the joint stack.
    """

    def __init__(
        self,
        d_x: int,
        d_y: int = 1,
        hidden_widths: Sequence[int] = (100, 100),
        bias: bool = False,
        activation: str = "relu",
        negative_slope: float = 0.01,
        dropout_rate: float = 0.3,
        branch_widths: Optional[Sequence[int]] = None,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if d_x < 1 or d_y < 0:
            raise PreconditionError(f"Need d_x >= 1 and d_y >= 0, got ({d_x}, {d_y})")
        if activation not in ACTIVATIONS:
            raise PreconditionError(f"Unknown activation {activation!r}, expected one of {ACTIVATIONS}")
        if not 0.0 <= dropout_rate < 1.0:
            raise PreconditionError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
        if any(w < 1 for w in hidden_widths):
            raise PreconditionError(f"Hidden widths must be positive, got {tuple(hidden_widths)}")
        if branch_widths and d_y < 1:
            raise PreconditionError("A two-branch critic needs at least one y coordinate")

        self.input_split = (d_x, d_y)
        self.hidden_widths = tuple(int(w) for w in hidden_widths)
        self.bias = bias
        self.activation = activation
        self.negative_slope = negative_slope
        self.dropout_rate = dropout_rate
        self.branch_widths = tuple(int(w) for w in branch_widths) if branch_widths else ()
        self.seed = seed
        self.dtype = dtype

        if self.branch_widths:
            self.branch_x = self._stack(d_x, self.branch_widths)
            self.branch_y = self._stack(d_y, self.branch_widths)
            in_width = 2 * self.branch_widths[-1]
        else:
            self.branch_x = nn.ModuleList()
            self.branch_y = nn.ModuleList()
            in_width = d_x + d_y
        self.layers = self._stack(in_width, (*self.hidden_widths, 1))

        self._init_weights(torch.Generator().manual_seed(seed))

    def _stack(self, in_width: int, widths: Sequence[int]) -> nn.ModuleList:
        sizes = [in_width, *widths]
        return nn.ModuleList(
            nn.Linear(a, b, bias=self.bias, dtype=self.dtype) for a, b in zip(sizes[:-1], sizes[1:])
        )

    @torch.no_grad()
    def _init_weights(self, generator: torch.Generator):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / np.sqrt(module.in_features)
                module.weight.uniform_(-bound, bound, generator=generator)
                if module.bias is not None:
                    module.bias.uniform_(-bound, bound, generator=generator)

    @property
    def d_x(self) -> int:
        return self.input_split[0]

    @property
    def d_y(self) -> int:
        return self.input_split[1]

    @property
    def input_width(self) -> int:
        return self.d_x + self.d_y

    @property
    def is_homogeneous(self) -> bool:
        return not self.bias and self.activation == "relu"

    @property
    def architecture(self) -> Dict[str, object]:
        return {
            "d_x": self.d_x,
            "d_y": self.d_y,
            "hidden_widths": list(self.hidden_widths),
            "bias": self.bias,
            "activation": self.activation,
            "negative_slope": self.negative_slope,
            "dropout_rate": self.dropout_rate,
            "branch_widths": list(self.branch_widths) or None,
            "seed": self.seed,
        }

    def _act(self, h: torch.Tensor) -> torch.Tensor:
        if self.activation == "relu":
            return F.relu(h)
        return F.leaky_relu(h, self.negative_slope)

    def _run_branch(self, layers: nn.ModuleList, h: torch.Tensor) -> torch.Tensor:
        for layer in layers:
            h = self._act(layer(h))
        return h

    def forward(self, z: torch.Tensor, mask: Optional["DropoutMask"] = None) -> torch.Tensor:
        if self.branch_widths:
            hx = self._run_branch(self.branch_x, z[:, : self.d_x])
            hy = self._run_branch(self.branch_y, z[:, self.d_x :])
            h = torch.cat([hx, hy], dim=1)
        else:
            h = z
        for depth, layer in enumerate(self.layers[:-1]):
            h = self._act(layer(h))
            if mask is not None:
                h = h * mask.masks[depth]
        return self.layers[-1](h).squeeze(-1)


@dataclass
class DropoutMask:
    """Inverted-dropout masks, one (batch, width) tensor per hidden layer"""

    masks: List[torch.Tensor]
    seed: Optional[int] = None

    @property
    def batch_size(self) -> int:
        return self.masks[0].shape[0] if self.masks else 0


def draw_dropout_mask(
    net: CriticNet,
    batch_size: int,
    seed: Optional[int] = None,
    generator: Optional[torch.Generator] = None,
) -> DropoutMask:
    """Draw one mask for a minibatch; reuse it for values and input-gradients"""
    if generator is None:
        generator = torch.Generator().manual_seed(0 if seed is None else seed)
    p = net.dropout_rate
    masks = []
    for width in net.hidden_widths:
        if p == 0.0:
            masks.append(torch.ones(batch_size, width, dtype=net.dtype))
            continue
        keep = torch.rand(batch_size, width, generator=generator, dtype=net.dtype) >= p
        masks.append(keep.to(net.dtype) / (1.0 - p))
    return DropoutMask(masks=masks, seed=seed)


def _as_rows(net: CriticNet, z: ArrayLike) -> Tuple[torch.Tensor, bool]:
    t = torch.as_tensor(np.asarray(z) if not isinstance(z, torch.Tensor) else z, dtype=net.dtype)
    single = t.dim() == 1
    if single:
        t = t.unsqueeze(0)
    if t.dim() != 2 or t.shape[1] != net.input_width:
        raise DimensionError("critic input width", net.input_width, tuple(t.shape)[-1] if t.dim() else 0)
    return t, single


def _check_mask(mask: Optional[DropoutMask], rows: int):
    if mask is not None and mask.batch_size != rows:
        raise DimensionError("dropout mask rows", rows, mask.batch_size)


def join_xy(X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """Concatenate x and y columns into critic inputs"""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        return np.concatenate([X, Y.reshape(-1)])
    if Y.ndim == 1:
        if Y.shape[0] != X.shape[0]:
            raise DimensionError("rows of y", X.shape[0], Y.shape[0])
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise DimensionError("rows of y", X.shape[0], Y.shape[0])
    return np.hstack([X, Y])


def forward(net: CriticNet, z: ArrayLike, mask: Optional[DropoutMask] = None) -> torch.Tensor:
    """Evaluate f on one input vector (scalar result) or a batch of rows"""
    rows, single = _as_rows(net, z)
    _check_mask(mask, rows.shape[0])
    out = net(rows, mask)
    return out[0] if single else out


def input_gradient(net: CriticNet, z: ArrayLike, mask: Optional[DropoutMask] = None) -> torch.Tensor:
    """Gradient of f with respect to its inputs, one row per input row.

    torch's ReLU backward uses sigma'(0) = 0, so kinks take the zero subgradient.
    """
    rows, single = _as_rows(net, z)
    _check_mask(mask, rows.shape[0])
    rows = rows.detach().clone().requires_grad_(True)
    out = net(rows, mask)
    (grad,) = torch.autograd.grad(out.sum(), rows)
    return grad[0] if single else grad


@dataclass
class LossGradients:
    loss: float
    grads: List[torch.Tensor]
    moments: np.ndarray
    terms: Dict[str, float] = field(default_factory=dict)


def _check_finite(name: str, value: torch.Tensor):
    if not torch.isfinite(value).all():
        raise NumericError(name)


def _collect_grads(net: CriticNet, loss: torch.Tensor) -> List[torch.Tensor]:
    named = list(net.named_parameters())
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = []
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g.detach()
        _check_finite(f"gradient of {name}", g)
        out.append(g)
    return out


def _penalty(moments: torch.Tensor, eta: np.ndarray, lam: float, eps: float) -> torch.Tensor:
    eta_t = torch.as_tensor(eta, dtype=moments.dtype)
    return 0.5 * lam * ((moments + eps) / eta_t).sum()


def _check_hyper(lam: float, eps: float, rho: float = 0.0):
    if lam < 0 or rho < 0:
        raise PreconditionError(f"lam and rho must be non-negative, got lam={lam}, rho={rho}")
    if eps <= 0:
        raise PreconditionError(f"eps must be positive, got {eps}")


def loss_gradients(
    net: CriticNet,
    eta: ArrayLike,
    batch_joint: Batch,
    batch_prod: Batch,
    lam: float,
    rho: float,
    eps: float,
    mask_joint: Optional[DropoutMask] = None,
    mask_prod: Optional[DropoutMask] = None,
) -> LossGradients:
    """Empirical SIC loss on one pair of minibatches and its parameter gradients.

    loss = -(mean f(x, y) - mean f(x, y~))
           + (lam/2) sum_j (mean |df(x, y~)/dx_j|^2 + eps) / eta_j
           + (rho/2) mean f(x, y~)^2

    The gradient penalty is differentiated through the input-gradient graph
    (double back-propagation). ReLU activation patterns stay fixed along that
    path, which is exact almost everywhere.
    """
    eta = check_open_simplex(eta)
    if eta.size != net.d_x:
        raise DimensionError("eta length", net.d_x, eta.size)
    _check_hyper(lam, eps, rho)

    z_joint, _ = _as_rows(net, join_xy(*batch_joint))
    z_prod, _ = _as_rows(net, join_xy(*batch_prod))
    if z_joint.shape[0] != z_prod.shape[0]:
        raise PreconditionError(f"Batch sizes differ: joint {z_joint.shape[0]}, product {z_prod.shape[0]}")
    _check_mask(mask_joint, z_joint.shape[0])
    _check_mask(mask_prod, z_prod.shape[0])

    z_prod = z_prod.requires_grad_(True)
    f_joint = net(z_joint, mask_joint)
    f_prod = net(z_prod, mask_prod)
    (grad_z,) = torch.autograd.grad(f_prod.sum(), z_prod, create_graph=True)
    moments = (grad_z[:, : net.d_x] ** 2).mean(dim=0)

    witness = f_joint.mean() - f_prod.mean()
    penalty = _penalty(moments, eta, lam, eps)
    l2 = 0.5 * rho * (f_prod**2).mean()
    for name, term in (("witness gap", witness), ("gradient penalty", penalty), ("L2 penalty", l2)):
        _check_finite(name, term)
    loss = -witness + penalty + l2

    return LossGradients(
        loss=float(loss.detach()),
        grads=_collect_grads(net, loss),
        moments=moments.detach().cpu().numpy().astype(float),
        terms={"witness": float(witness.detach()), "penalty": float(penalty.detach()), "l2": float(l2.detach())},
    )


def regression_loss_gradients(
    net: CriticNet,
    eta: ArrayLike,
    X: ArrayLike,
    Y: ArrayLike,
    lam: float,
    eps: float,
    mask: Optional[DropoutMask] = None,
) -> LossGradients:
    """Mean squared error of a regressor g(x) plus the same gradient-sparsity penalty"""
    eta = check_open_simplex(eta)
    if net.d_y != 0:
        raise PreconditionError("Sobolev regression expects a critic built with d_y = 0")
    if eta.size != net.d_x:
        raise DimensionError("eta length", net.d_x, eta.size)
    _check_hyper(lam, eps)

    x, _ = _as_rows(net, X)
    y = torch.as_tensor(np.asarray(Y, dtype=float), dtype=net.dtype).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise DimensionError("rows of y", x.shape[0], y.shape[0])
    _check_mask(mask, x.shape[0])

    x = x.requires_grad_(True)
    pred = net(x, mask)
    (grad_x,) = torch.autograd.grad(pred.sum(), x, create_graph=True)
    moments = (grad_x**2).mean(dim=0)
    mse = ((pred - y) ** 2).mean()
    penalty = _penalty(moments, eta, lam, eps)
    for name, term in (("mean squared error", mse), ("gradient penalty", penalty)):
        _check_finite(name, term)
    loss = mse + penalty

    return LossGradients(
        loss=float(loss.detach()),
        grads=_collect_grads(net, loss),
        moments=moments.detach().cpu().numpy().astype(float),
        terms={"mse": float(mse.detach()), "penalty": float(penalty.detach())},
    )


@dataclass
class AdamState:
    """Adam with decoupled weight decay, backed by torch.optim.AdamW"""

    optimizer: torch.optim.AdamW
    lr: float
    beta1: float
    beta2: float
    weight_decay: float
    step: int = 0

    def moments(self, param: torch.Tensor) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
        state = self.optimizer.state.get(param, {})
        return state.get("exp_avg"), state.get("exp_avg_sq")


def make_adam(
    params: Sequence[torch.Tensor],
    lr: float = 1e-3,
    beta1: float = 0.5,
    beta2: float = 0.999,
    weight_decay: float = 1e-4,
) -> AdamState:
    optimizer = torch.optim.AdamW(list(params), lr=lr, betas=(beta1, beta2), weight_decay=weight_decay)
    return AdamState(optimizer=optimizer, lr=lr, beta1=beta1, beta2=beta2, weight_decay=weight_decay)


def adam_step(
    state: AdamState, params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor]
) -> Tuple[List[torch.Tensor], AdamState]:
    """Apply one bias-corrected Adam update with the given gradients"""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise DimensionError("number of gradients", len(params), len(grads))
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError("gradient shape", tuple(p.shape), tuple(g.shape))
        p.grad = g.detach().clone().to(p.dtype)
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return params, state


def net_to_dict(net: CriticNet) -> Dict[str, object]:
    return {
        "architecture": net.architecture,
        "weights": {name: t.detach().cpu().tolist() for name, t in net.state_dict().items()},
    }


def net_from_dict(payload: Dict[str, object]) -> CriticNet:
    arch = dict(payload["architecture"])
    net = CriticNet(**arch)
    state = {name: torch.as_tensor(values, dtype=net.dtype) for name, values in payload["weights"].items()}
    net.load_state_dict(state)
    return net
