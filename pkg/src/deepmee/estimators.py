"""Training loops for the MEE network estimators and the least-squares baseline.

All estimators share one mini-batch first-order loop; they differ in the
data-term gradient and in how the class constraints are enforced:

* NPDNN: periodic hard projection onto ``||theta||_0 <= S`` and
  ``||theta||_inf <= B``;
* SPDNN: clipped-L1 penalty, applied either as a proximal step or as a
  subgradient term, and a box clamp after every step;
* kernel MEE: the density inside the loss is a Parzen estimate over the
  current residuals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import SeriesDataset
from .density import KDE_FLOOR, kernel_profile, silverman_bandwidth
from .network import Architecture, Network
from .penalty import PenaltySpec, penalty_prox, penalty_subgradient, penalty_total, sparsity_support

KINDS = ("NPDNN", "SPDNN", "kernel-NPDNN", "kernel-SPDNN", "kernel-MEE", "MEE", "least-squares")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; ``checkpoint`` holds the last finite model."""

    def __init__(self, message: str, checkpoint: "TrainedModel"):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    step_size: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0
    prune_every: int = 10
    record_curve: bool = True
    penalty_mode: str = "prox"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.prune_every < 1:
            raise ValueError("prune_every must be >= 1")
        if self.penalty_mode not in ("prox", "subgradient"):
            raise ValueError(f"unknown penalty_mode {self.penalty_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        fields = cls.__dataclass_fields__
        unknown = set(d) - set(fields)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrainedModel:
    net: Network
    estimator_kind: str
    history: list[tuple[float, float]] = field(default_factory=list)
    bandwidth: float | None = None

    def predict(self, x) -> np.ndarray:
        return self.net.predict(x)

    @property
    def final_risk(self) -> float:
        return self.history[-1][0] if self.history else math.nan


# -- losses -------------------------------------------------------------------------

def empirical_risk(net: Network, data: SeriesDataset, density) -> float:
    """``-(1/n) sum log f(Y_i - h(X_i))``."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    u = data.outputs - net.predict(data.inputs)
    return float(-np.mean(density.log_density(u)))


def squared_risk(net: Network, data: SeriesDataset) -> float:
    u = data.outputs - net.predict(data.inputs)
    return float(np.mean(0.5 * u * u))


def _mee_grad(density):
    def grad(net, x, y):
        raw, acts = net._forward(x)
        F = net.arch.output_bound
        u = y - np.clip(raw, -F, F)
        if not np.all(np.isfinite(u)):
            return np.full(net.arch.n_params, np.nan)
        return net._backward(raw, acts, density.log_density_derivative(u) / y.size)
    return grad


def _ls_grad(net, x, y):
    raw, acts = net._forward(x)
    F = net.arch.output_bound
    u = y - np.clip(raw, -F, F)
    return net._backward(raw, acts, -u / y.size)


def kernel_mee_objective(residuals, bandwidth: float, kernel: str = "gaussian",
                         floor: float = KDE_FLOOR, chunk: int = 1024) -> float:
    """``-(1/n) sum_i log max((1/n) sum_j K_b(e_j - e_i), floor)``, row-chunked."""
    e = np.asarray(residuals, dtype=float)
    n = e.size
    total = 0.0
    for start in range(0, n, chunk):
        block = e[start:start + chunk]
        k, _ = kernel_profile(kernel, (e[None, :] - block[:, None]) / bandwidth)
        dens = k.sum(axis=1) / (n * bandwidth)
        total += float(np.sum(np.log(np.maximum(dens, floor))))
    return -total / n


def kernel_mee_residual_grad(residuals, bandwidth: float, kernel: str = "gaussian",
                             floor: float = KDE_FLOOR) -> tuple[float, np.ndarray]:
    """Objective and its gradient with respect to each residual.

    Both arguments of every kernel term depend on the residuals, so each
    residual collects a contribution as the query point and as a sample.
    """
    e = np.asarray(residuals, dtype=float)
    n = e.size
    b = bandwidth
    # z[i, j] = (e_j - e_i) / b
    k, dk = kernel_profile(kernel, (e[None, :] - e[:, None]) / b)
    dens = k.sum(axis=1) / (n * b)
    live = dens > floor
    obj = -float(np.mean(np.log(np.maximum(dens, floor))))
    w = np.where(live, 1.0 / np.maximum(dens, floor), 0.0)
    slope = dk / (n * b * b)  # d dens_i / d e_j for j != i
    grad = -(w @ slope - w * slope.sum(axis=1)) / n
    return obj, grad


# -- optimizer loop -------------------------------------------------------------------

class _Optimizer:
    def __init__(self, cfg: TrainConfig, size: int):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if cfg.optimizer == "momentum":
            self.m = cfg.momentum * self.m - cfg.step_size * g
            return theta + self.m
        self.t += 1
        b1, b2 = 0.9, 0.999
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        mhat = self.m / (1 - b1**self.t)
        vhat = self.v / (1 - b2**self.t)
        return theta - cfg.step_size * mhat / (np.sqrt(vhat) + 1e-8)


def _bias_mask(arch: Architecture) -> np.ndarray:
    mask = np.zeros(arch.n_params, dtype=bool)
    for _, b_slice, _ in arch.layer_slices():
        mask[b_slice] = True
    return mask


def _project(net: Network) -> np.ndarray | None:
    """Clamp to the weight box and prune to the sparsity budget.

    Returns the boolean support kept by pruning, or None when the budget
    does not bind.
    """
    arch = net.arch
    th = np.clip(net.theta(), -arch.weight_bound, arch.weight_bound)
    support = None
    if arch.sparsity_budget is not None and arch.sparsity_budget < th.size:
        # biases go first: a ReLU net stripped of its biases is positively
        # homogeneous and cannot leave the origin
        support = sparsity_support(th, arch.sparsity_budget, _bias_mask(arch))
        th = np.where(support, th, 0.0)
    net.set_theta(th)
    return support


def _descend(data: SeriesDataset, arch: Architecture, cfg: TrainConfig, kind: str,
             grad_fn: Callable, risk_fn: Callable, *, penalty: PenaltySpec | None = None,
             project_every: int | None = None, init: Network | None = None) -> TrainedModel:
    rng = np.random.default_rng(cfg.seed)
    init_rng, batch_rng = rng.spawn(2)
    net = init.copy() if init is not None else Network.initialize(arch, init_rng)
    support = None
    opt = _Optimizer(cfg, arch.n_params)
    x, y = data.inputs, data.outputs
    n = len(data)
    history: list[tuple[float, float]] = []
    model = TrainedModel(net, kind, history)
    last_good = net.theta()
    B = arch.weight_bound

    def diverged(where: str):
        net.set_theta(last_good)
        return DivergenceError(f"non-finite {where} at epoch {epoch}", model)

    for epoch in range(1, cfg.epochs + 1):
        order = batch_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                g = grad_fn(net, x[idx], y[idx])
            if not np.all(np.isfinite(g)):
                raise diverged("gradient")
            if penalty is not None and cfg.penalty_mode == "subgradient" and penalty.lam > 0:
                g = g + penalty_subgradient(penalty, net.theta())
            if support is not None:
                g = np.where(support, g, 0.0)
            th = opt.step(net.theta(), g)
            if support is not None:
                th = np.where(support, th, 0.0)
            if penalty is not None:
                if cfg.penalty_mode == "prox":
                    th = penalty_prox(penalty, th, cfg.step_size)
                th = np.clip(th, -B, B)
            if not np.all(np.isfinite(th)):
                raise diverged("parameters")
            net.set_theta(th)
        if project_every is not None and epoch % project_every == 0:
            # first projection picks the support; later ones keep it
            kept = _project(net)
            support = kept if support is None else support
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                risk = risk_fn(net)
            except ValueError:  # non-finite residuals
                risk = math.nan
        if not math.isfinite(risk):
            raise diverged("loss")
        last_good = net.theta()
        if cfg.record_curve:
            pen = penalty_total(penalty, net.theta()) if penalty is not None else 0.0
            history.append((risk, pen))

    if project_every is not None:
        _project(net)
    return model


# -- estimators -------------------------------------------------------------------

def train_npdnn(data: SeriesDataset, arch: Architecture, density, cfg: TrainConfig) -> TrainedModel:
    if arch.sparsity_budget is None:
        raise ValueError("NPDNN needs an architecture with a sparsity budget")
    return _descend(data, arch, cfg, "NPDNN", _mee_grad(density),
                    lambda net: empirical_risk(net, data, density),
                    project_every=cfg.prune_every)


def train_spdnn(data: SeriesDataset, arch: Architecture, density, penalty: PenaltySpec,
                cfg: TrainConfig) -> TrainedModel:
    return _descend(data, arch.with_sparsity(None), cfg, "SPDNN", _mee_grad(density),
                    lambda net: empirical_risk(net, data, density), penalty=penalty)


def train_mee(data: SeriesDataset, arch: Architecture, density, cfg: TrainConfig) -> TrainedModel:
    """Unconstrained MEE fit (no sparsity projection, no penalty)."""
    return _descend(data, arch.with_sparsity(None), cfg, "MEE", _mee_grad(density),
                    lambda net: empirical_risk(net, data, density))


def train_least_squares(data: SeriesDataset, arch: Architecture, cfg: TrainConfig) -> TrainedModel:
    return _descend(data, arch.with_sparsity(None), cfg, "least-squares", _ls_grad,
                    lambda net: squared_risk(net, data))


def train_kernel_mee(data: SeriesDataset, arch: Architecture, cfg: TrainConfig,
                     penalty: PenaltySpec | None = None, bandwidth: float | None = None,
                     kernel: str = "gaussian", recenter: bool = True) -> TrainedModel:
    """MEE with the error density replaced by a Parzen estimate of the residuals.

    Each step uses the Parzen estimate of the current batch residuals, with
    gradients through both kernel arguments. ``bandwidth=None`` applies the
    Silverman rule to the residuals of the initial network. The objective is
    blind to a constant shift of the residuals, so with ``recenter`` the
    output bias is moved to zero the median training residual.
    """
    if len(data) < 8:
        raise ValueError("kernel MEE needs at least 8 observations")
    if arch.sparsity_budget is not None and penalty is not None:
        raise ValueError("use either a sparsity budget or a penalty, not both")
    if bandwidth is None:
        init_rng = np.random.default_rng(cfg.seed).spawn(2)[0]
        init = Network.initialize(arch, init_rng)
        bandwidth = silverman_bandwidth(data.outputs - init.predict(data.inputs))
    b = float(bandwidth)

    def grad(net, x, y):
        raw, acts = net._forward(x)
        F = net.arch.output_bound
        u = y - np.clip(raw, -F, F)
        _, ge = kernel_mee_residual_grad(u, b, kernel)
        return net._backward(raw, acts, -ge)

    def risk(net):
        return kernel_mee_objective(data.outputs - net.predict(data.inputs), b, kernel)

    if arch.sparsity_budget is not None:
        model = _descend(data, arch, cfg, "kernel-NPDNN", grad, risk, project_every=cfg.prune_every)
    elif penalty is not None:
        model = _descend(data, arch, cfg, "kernel-SPDNN", grad, risk, penalty=penalty)
    else:
        model = _descend(data, arch, cfg, "kernel-MEE", grad, risk)
    if recenter:
        net = model.net
        shift = float(np.median(data.outputs - net.predict(data.inputs)))
        th = net.theta()
        S = arch.sparsity_budget
        # a pruned output bias may only come back if the budget has room
        if S is None or th[-1] != 0 or np.count_nonzero(th) < S:
            th[-1] = np.clip(th[-1] + shift, -arch.weight_bound, arch.weight_bound)
            net.set_theta(th)
    model.bandwidth = b
    return model


def train(kind: str, data: SeriesDataset, arch: Architecture, cfg: TrainConfig, *,
          density=None, penalty: PenaltySpec | None = None, bandwidth: float | None = None
          ) -> TrainedModel:
    """Dispatch on the short estimator names used by configs and the CLI."""
    if kind == "npdnn":
        return train_npdnn(data, arch, density, cfg)
    if kind == "spdnn":
        if penalty is None:
            raise ValueError("spdnn needs a penalty")
        return train_spdnn(data, arch, density, penalty, cfg)
    if kind == "mee":
        return train_mee(data, arch, density, cfg)
    if kind == "ls":
        return train_least_squares(data, arch, cfg)
    if kind == "kmee":
        return train_kernel_mee(data, arch, cfg, penalty=penalty, bandwidth=bandwidth)
    raise ValueError(f"unknown estimator {kind!r}")
