"""Clipped-L1 sparse penalty and the hard sparsity projection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("clipped_l1",)


@dataclass(frozen=True)
class PenaltySpec:
    """``pi(x) = lam * min(x / tau, 1)``.

    Any family with ``pi(0) = 0``, ``pi`` non-decreasing and ``pi(x) = lam``
    for ``x > tau`` fits this interface; only clipped-L1 is implemented.
    """

    lam: float
    tau: float = 1e-6
    kind: str = "clipped_l1"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("penalty height must be nonnegative")
        if not self.tau > 0:
            raise ValueError("knee location must be positive")
        if self.kind not in KINDS:
            raise ValueError(f"unsupported penalty kind {self.kind!r}; available: {KINDS}")

    def to_dict(self) -> dict:
        return {"lam": self.lam, "tau": self.tau, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltySpec":
        return cls(float(d["lam"]), float(d.get("tau", 1e-6)), d.get("kind", "clipped_l1"))


def default_lambda(n: int, nu3: float = 6.0) -> float:
    """Tuning rule ``(log n)^nu3 / n`` with ``nu3 > 5``."""
    return math.log(n) ** nu3 / n


def default_penalty(n: int, nu3: float = 6.0, tau: float = 1e-6) -> PenaltySpec:
    # The theory asks for tau <= 1 / (16 K (L+1) (n (N+1) B)^(L+1)) with an
    # unspecified constant K; tau is exposed instead of computed.
    return PenaltySpec(default_lambda(n, nu3), tau)


def penalty_value(spec: PenaltySpec, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("penalty takes magnitudes; got a negative argument")
    out = spec.lam * np.minimum(x / spec.tau, 1.0)
    return float(out) if out.ndim == 0 else out


def penalty_total(spec: PenaltySpec, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(np.sum(spec.lam * np.minimum(np.abs(theta) / spec.tau, 1.0)))


def penalty_subgradient(spec: PenaltySpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    a = np.abs(theta)
    active = (a > 0) & (a <= spec.tau)
    return np.where(active, spec.lam / spec.tau * np.sign(theta), 0.0)


def penalty_prox(spec: PenaltySpec, theta, step: float) -> np.ndarray:
    """Coordinate-wise minimizer of ``(z - theta)^2 / (2 step) + pi(|z|)``.

    Compares the best point inside the linear segment ``|z| <= tau`` with
    leaving the coordinate untouched on the flat part. Ties keep theta.
    """
    theta = np.asarray(theta, dtype=float)
    if spec.lam == 0:
        return theta.copy()
    a = np.abs(theta)
    shrunk = np.minimum(np.maximum(a - step * spec.lam / spec.tau, 0.0), spec.tau)
    cost_in = (shrunk - a) ** 2 / (2 * step) + spec.lam * shrunk / spec.tau
    keep = (a > spec.tau) & (spec.lam <= cost_in)
    return np.where(keep, theta, np.sign(theta) * shrunk)


def sparsity_support(theta, budget: int, priority=None) -> np.ndarray:
    """Boolean mask of the ``budget`` coordinates kept by pruning.

    Coordinates flagged in ``priority`` are ranked ahead of all others; within
    each group larger magnitudes win and ties favour lower indices.
    """
    theta = np.asarray(theta, dtype=float)
    if budget < 0:
        raise ValueError("sparsity budget must be nonnegative")
    keep = np.zeros(theta.size, dtype=bool)
    if budget >= theta.size:
        keep[:] = True
        return keep
    key = -np.abs(theta)
    if priority is not None:
        # lexsort sorts by the last key first
        order = np.lexsort((np.arange(theta.size), key, ~np.asarray(priority, dtype=bool)))
    else:
        order = np.argsort(key, kind="stable")
    keep[order[:budget]] = True
    return keep


def prune_to_sparsity(theta, budget: int, priority=None) -> np.ndarray:
    """Keep the ``budget`` largest-magnitude entries; ties favour lower indices.

    ``priority`` optionally marks coordinates (e.g. biases) that are kept
    before any unmarked one.
    """
    theta = np.asarray(theta, dtype=float)
    keep = sparsity_support(theta, budget, priority)
    return np.where(keep, theta, 0.0)
