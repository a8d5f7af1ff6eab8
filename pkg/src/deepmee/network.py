"""ReLU feedforward regressors with a clamped output.

Parameters live in one flat vector ordered as
``vec(W_1), b_1, ..., vec(W_{L+1}), b_{L+1}`` with column-major ``vec``;
the per-layer matrices are views into it.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = b"DEEPMEE\x00"
CHECKPOINT_VERSION = 1
# Architectures keep B only in log form beyond this.
LOG_B_CUTOFF = math.log(1e30)


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    weight_bound: float = 1e3
    output_bound: float = 10.0
    sparsity_budget: int | None = None
    log_weight_bound: float | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or any(w < 1 for w in widths) or widths[-1] != 1:
            raise ValueError(f"invalid widths {widths}: need >= 2 entries, all >= 1, last == 1")
        if self.log_weight_bound is None:
            if not self.weight_bound > 0:
                raise ValueError("weight bound must be positive")
            object.__setattr__(self, "log_weight_bound", math.log(self.weight_bound))
        else:
            lb = float(self.log_weight_bound)
            object.__setattr__(self, "log_weight_bound", lb)
            object.__setattr__(self, "weight_bound", math.exp(lb) if lb <= LOG_B_CUTOFF else math.inf)
        if not self.output_bound > 0:
            raise ValueError("output bound must be positive")
        if self.sparsity_budget is not None:
            s = int(self.sparsity_budget)
            if s < 0 or s > self.n_params:
                raise ValueError(f"sparsity budget {s} outside [0, {self.n_params}]")
            object.__setattr__(self, "sparsity_budget", s)

    @property
    def depth(self) -> int:
        return len(self.widths) - 2

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def width(self) -> int:
        return max(self.widths[1:-1], default=0)

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[j] * w[j - 1] + w[j] for j in range(1, len(w)))

    def layer_slices(self):
        """(weight slice, bias slice, shape) for each affine layer."""
        out, off = [], 0
        for j in range(1, len(self.widths)):
            shape = (self.widths[j], self.widths[j - 1])
            nw = shape[0] * shape[1]
            out.append((slice(off, off + nw), slice(off + nw, off + nw + shape[0]), shape))
            off += nw + shape[0]
        return out

    def with_sparsity(self, s: int | None) -> "Architecture":
        return Architecture(self.widths, self.weight_bound, self.output_bound, s,
                            self.log_weight_bound)

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weight_bound": self.weight_bound,
            "log_weight_bound": self.log_weight_bound,
            "output_bound": self.output_bound,
            "sparsity_budget": self.sparsity_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        b = float(d.get("weight_bound", 1e3))
        # the exact B round-trips when finite; the log form only when it overflowed
        return cls(
            widths=tuple(d["widths"]),
            weight_bound=b,
            output_bound=float(d.get("output_bound", 10.0)),
            sparsity_budget=d.get("sparsity_budget"),
            log_weight_bound=None if math.isfinite(b) else d.get("log_weight_bound"),
        )


def mlp(input_dim: int, hidden: Sequence[int], **kw) -> Architecture:
    return Architecture((input_dim, *hidden, 1), **kw)


def glorot_theta(arch: Architecture, rng: np.random.Generator) -> np.ndarray:
    theta = np.zeros(arch.n_params)
    for ws, _, (fan_out, fan_in) in arch.layer_slices():
        a = math.sqrt(6.0 / (fan_in + fan_out))
        theta[ws] = rng.uniform(-a, a, size=fan_out * fan_in)
    return np.clip(theta, -arch.weight_bound, arch.weight_bound)


class Network:
    """Clamped ReLU network ``x -> clip(A_{L+1} o relu o ... o A_1 x, -F, F)``."""

    activation = "relu"

    def __init__(self, arch: Architecture, theta: np.ndarray | None = None):
        self.arch = arch
        self._theta = np.zeros(arch.n_params)
        if theta is not None:
            self.set_theta(theta)

    @classmethod
    def initialize(cls, arch: Architecture, rng: np.random.Generator) -> "Network":
        return cls(arch, glorot_theta(arch, rng))

    def copy(self) -> "Network":
        return Network(self.arch, self._theta.copy())

    @property
    def weights(self) -> list[np.ndarray]:
        return [self._theta[ws].reshape(shape, order="F") for ws, _, shape in self.arch.layer_slices()]

    @property
    def biases(self) -> list[np.ndarray]:
        return [self._theta[bs] for _, bs, _ in self.arch.layer_slices()]

    def theta(self) -> np.ndarray:
        return self._theta.copy()

    def set_theta(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got shape {theta.shape}")
        self._theta[:] = theta

    # -- evaluation ------------------------------------------------------

    def _check_inputs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.arch.input_dim:
            raise ValueError(f"expected inputs of dimension {self.arch.input_dim}, got shape {x.shape}")
        return x

    def _forward(self, x: np.ndarray):
        acts = [x]
        a = x
        layers = list(zip(self.weights, self.biases))
        for w, b in layers[:-1]:
            a = np.maximum(a @ w.T + b, 0.0)
            acts.append(a)
        w, b = layers[-1]
        raw = (a @ w.T + b)[:, 0]
        return raw, acts

    def raw_output(self, x) -> np.ndarray:
        return self._forward(self._check_inputs(x))[0]

    def predict(self, x) -> np.ndarray:
        """Clamped predictions for a batch of inputs of shape (m, d)."""
        raw, _ = self._forward(self._check_inputs(x))
        F = self.arch.output_bound
        return np.clip(raw, -F, F)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.predict(x)
        return float(out[0]) if x.ndim == 1 else out

    def backward(self, x: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_i out_grad[i] * h(x_i)`` with respect to theta.

        Saturated outputs (|raw| > F) contribute nothing.
        """
        x = self._check_inputs(x)
        raw, acts = self._forward(x)
        return self._backward(raw, acts, out_grad)

    def _backward(self, raw, acts, out_grad) -> np.ndarray:
        F = self.arch.output_bound
        delta = (np.asarray(out_grad, dtype=float) * (np.abs(raw) <= F))[:, None]
        grad = np.zeros_like(self._theta)
        slices = self.arch.layer_slices()
        weights = self.weights
        for j in range(len(slices) - 1, -1, -1):
            ws, bs, shape = slices[j]
            a_prev = acts[j]
            grad[ws] = (delta.T @ a_prev).ravel(order="F")
            grad[bs] = delta.sum(axis=0)
            if j > 0:
                delta = (delta @ weights[j]) * (a_prev > 0)
        return grad

    # -- persistence -----------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, self, meta)

    @classmethod
    def load(cls, path) -> "Network":
        return load_checkpoint(path)[0]


def forward(net: Network, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward takes a single input vector; use Network.predict for batches")
    return net(x)


def theta(net: Network) -> np.ndarray:
    return net.theta()


def set_theta(net: Network, vector) -> None:
    net.set_theta(vector)


def risk_gradient(net: Network, x, y, density) -> np.ndarray:
    """Gradient of ``-(1/m) sum log f(y_i - h(x_i))`` with respect to theta."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty batch")
    raw, acts = net._forward(net._check_inputs(x))
    F = net.arch.output_bound
    u = y - np.clip(raw, -F, F)
    # d/dh [-log f(y - h)] = (log f)'(u)
    return net._backward(raw, acts, density.log_density_derivative(u) / y.size)


# -- checkpoint container -----------------------------------------------------

def save_checkpoint(path, net: Network, meta: dict | None = None) -> None:
    """Write ``magic | u32 version | u32 header length | JSON header | f64 theta``,
    all little-endian."""
    header = {"format_version": CHECKPOINT_VERSION, "architecture": net.arch.to_dict(),
              "activation": net.activation, "n_params": net.arch.n_params,
              "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(net.theta().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Network, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    arch = Architecture.from_dict(header["architecture"])
    theta_ = np.frombuffer(data[16 + hlen:], dtype="<f8").astype(float)
    return Network(arch, theta_), header.get("meta", {})


# -- capacity and rate formulas ------------------------------------------------

@dataclass(frozen=True)
class RateSpec:
    smoothness: float
    input_dim: int
    kappa: float = 2.0
    L0: float = 1.0
    N0: float = 1.0
    S0: float = 1.0
    B0: float = 1.0

    def __post_init__(self):
        if min(self.smoothness, self.input_dim, self.L0, self.N0, self.S0, self.B0) <= 0:
            raise ValueError("rate constants must be strictly positive")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")

    @property
    def exponent(self) -> float:
        """kappa*s / (kappa*s + d), the excess-risk decay exponent."""
        ks = self.kappa * self.smoothness
        return ks / (ks + self.input_dim)


def _ceil(x: float) -> int:
    # absorb float noise such as 100.00000000000001
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def holder_widths(spec: RateSpec, n: int) -> tuple[int, int, int, float]:
    """(L, N, S, log B) from the Hölder-class architecture rule."""
    if n < 2:
        raise ValueError("n must be >= 2")
    s, d, k = spec.smoothness, spec.input_dim, spec.kappa
    denom = k * s + d
    logn = math.log(n)
    L = max(1, _ceil(s * spec.L0 / denom * logn))
    N = max(1, _ceil(spec.N0 * n ** (d / denom)))
    S = max(1, _ceil(s * spec.S0 / denom * n ** (d / denom) * logn))
    log_b = math.log(spec.B0) + 4 * (d + s) / denom * logn
    return L, N, S, log_b


def holder_architecture(spec: RateSpec, n: int, output_bound: float = 10.0,
                        weight_cap: float | None = None) -> Architecture:
    L, N, S, log_b = holder_widths(spec, n)
    if weight_cap is not None:
        log_b = min(log_b, math.log(weight_cap))
    widths = (spec.input_dim, *([N] * L), 1)
    total = sum(widths[j] * widths[j - 1] + widths[j] for j in range(1, len(widths)))
    return Architecture(widths, output_bound=output_bound,
                        sparsity_budget=min(S, total), log_weight_bound=log_b)


@dataclass(frozen=True)
class CompositionSpec:
    dims: tuple[int, ...]
    actives: tuple[int, ...]
    smoothness: tuple[float, ...]

    def __post_init__(self):
        q = len(self.smoothness) - 1
        if q < 0 or len(self.actives) != q + 1 or len(self.dims) != q + 2:
            raise ValueError("need len(dims) = q + 2 and len(actives) = len(smoothness) = q + 1")
        if self.dims[-1] != 1:
            raise ValueError("last dimension must be 1")
        if any(t > d for t, d in zip(self.actives, self.dims)):
            raise ValueError("active count t_i cannot exceed d_i")
        if any(b <= 0 for b in self.smoothness):
            raise ValueError("smoothness must be positive")

    @property
    def q(self) -> int:
        return len(self.smoothness) - 1

    def effective_smoothness(self) -> list[float]:
        b = self.smoothness
        return [b[i] * math.prod(min(bj, 1.0) for bj in b[i + 1:]) for i in range(len(b))]


def composition_rate(spec: CompositionSpec, n: float) -> float:
    if n < 2:
        raise ValueError("n must be >= 2")
    return max(n ** (-2 * bs / (2 * bs + t))
               for bs, t in zip(spec.effective_smoothness(), spec.actives))


def covering_bound(L: float, N: float, B: float, S: float, delta: float,
                   c_sigma: float = 1.0) -> float:
    """Log of the covering-number bound for sparse ReLU classes.

    ``2 L (S + 1) log(c_sigma L (N + 1) max(B, 1) / delta)``, floored at 0.
    """
    if min(L, N, B, S, delta) <= 0:
        raise ValueError("capacity parameters and radius must be positive")
    arg = c_sigma * L * (N + 1) * max(B, 1.0) / delta
    if arg <= 1:
        return 0.0
    return 2 * L * (S + 1) * math.log(arg)
