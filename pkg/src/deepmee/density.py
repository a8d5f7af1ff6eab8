"""Error densities for the minimum-error-entropy loss.

The Subbotin family ``f(u) = C_r exp(-|u|^r / r)`` covers Laplace (r=1) and
the standard normal (r=2). Every density here exposes the same duck-typed
surface used by the trainers and the risk harness:

    log_density(u), log_density_derivative(u), sample(rng, count)

plus ``name`` and ``to_dict()`` for provenance files.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln

# smoothing of |u| inside the score for r < 2
SCORE_EPS = 1e-8
# floor applied to Parzen estimates before taking logs
KDE_FLOOR = 1e-12
QUAD_LIMIT = 50.0
QUAD_EPSABS = 1e-10


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def _as_finite(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("residual must be finite")
    return u


def _unwrap(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class SubbotinDensity:
    """Subbotin (generalized Gaussian) density with shape exponent ``r``."""

    r: float
    log_c_r: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError(f"Subbotin shape must be positive, got {self.r}")
        r = float(self.r)
        object.__setattr__(self, "r", r)
        log_c = -math.log(2.0) - (1.0 / r - 1.0) * math.log(r) - gammaln(1.0 / r)
        object.__setattr__(self, "log_c_r", float(log_c))

    name = "subbotin"

    @property
    def c_r(self) -> float:
        return math.exp(self.log_c_r)

    @property
    def k_f(self) -> float:
        """sup |f'(u)|; infinite for r < 1 where f has a cusp."""
        r = self.r
        if r < 1:
            return math.inf
        if r == 1:
            return self.c_r
        # |f'| = C_r |u|^{r-1} exp(-|u|^r/r) peaks at |u|^r = r - 1
        return self.c_r * (r - 1) ** ((r - 1) / r) * math.exp(-(r - 1) / r)

    def log_density(self, u):
        u = _as_finite(u)
        return _unwrap(self.log_c_r - np.abs(u) ** self.r / self.r)

    def density(self, u):
        return _unwrap(np.exp(self.log_density(u)))

    def log_density_derivative(self, u):
        u = _as_finite(u)
        r = self.r
        if r == 2.0:
            out = -u
        elif r > 2.0:
            out = -np.sign(u) * np.abs(u) ** (r - 1)
        else:
            out = -u * (u * u + SCORE_EPS**2) ** ((r - 2) / 2)
        return _unwrap(out)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be nonnegative")
        # separate child streams keep shorter samples prefixes of longer ones
        mag_rng, sign_rng = rng.spawn(2)
        g = mag_rng.standard_gamma(1.0 / self.r, size=count)
        sign = sign_rng.integers(0, 2, size=count) * 2 - 1
        return sign * (self.r * g) ** (1.0 / self.r)

    def to_dict(self) -> dict:
        return {"kind": self.name, "r": self.r}


@dataclass(frozen=True)
class ContaminatedGaussian:
    """Two-component Gaussian mixture ``(1-eps) N(0,1) + eps N(0, scale^2)``.

    Used as the heavy-tailed noise model of the robustness experiments.
    """

    eps: float = 0.05
    scale: float = 10.0

    name = "contaminated"

    def __post_init__(self):
        if not 0 <= self.eps < 1 or self.scale <= 0:
            raise ValueError("need 0 <= eps < 1 and scale > 0")

    def _component_logs(self, u):
        half_log_2pi = 0.5 * math.log(2 * math.pi)
        a = math.log1p(-self.eps) - half_log_2pi - 0.5 * u * u
        if self.eps == 0:
            return a, np.full_like(u, -np.inf)
        z = u / self.scale
        b = math.log(self.eps) - math.log(self.scale) - half_log_2pi - 0.5 * z * z
        return a, b

    def log_density(self, u):
        u = _as_finite(u)
        a, b = self._component_logs(u)
        return _unwrap(np.logaddexp(a, b))

    def log_density_derivative(self, u):
        u = _as_finite(u)
        a, b = self._component_logs(u)
        total = np.logaddexp(a, b)
        w_a = np.exp(a - total)
        w_b = np.exp(b - total)
        return _unwrap(-u * w_a - u / self.scale**2 * w_b)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be nonnegative")
        z_rng, pick_rng = rng.spawn(2)
        z = z_rng.standard_normal(count)
        wide = pick_rng.random(count) < self.eps
        return np.where(wide, self.scale * z, z)

    def to_dict(self) -> dict:
        return {"kind": self.name, "eps": self.eps, "scale": self.scale}


def density_from_dict(d: dict):
    kind = d.get("kind", "subbotin")
    if kind == "subbotin":
        return SubbotinDensity(float(d["r"]))
    if kind == "contaminated":
        return ContaminatedGaussian(float(d.get("eps", 0.05)), float(d.get("scale", 10.0)))
    raise ValueError(f"unknown density kind {kind!r}")


@dataclass(frozen=True)
class TruncatedDensity:
    """Density floored at ``beta``: ``T_beta f(u) = max(f(u), beta)``."""

    base: SubbotinDensity
    beta: float

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError("truncation level must lie in (0, 1]")

    def value(self, u):
        return _unwrap(np.maximum(np.exp(self.base.log_density(u)), self.beta))

    def log_value(self, u):
        return _unwrap(np.maximum(self.base.log_density(u), math.log(self.beta)))

    @property
    def lipschitz_log(self) -> float:
        return self.base.k_f / self.beta


def truncated_log_density(t: TruncatedDensity, u):
    return t.log_value(u)


def log_density(density, u):
    return density.log_density(u)


def log_density_derivative(density, u):
    return density.log_density_derivative(u)


def sample(density, rng: np.random.Generator, count: int) -> np.ndarray:
    return density.sample(rng, count)


def support_limit(r: float) -> float:
    """Half-width of the quadrature window: [-50, 50] widened until the
    Subbotin tail beyond it is below exp(-60)."""
    return max(QUAD_LIMIT, (60.0 * r) ** (1.0 / r))


def _quad(fn, points=(), limit=QUAD_LIMIT):
    pts = sorted({float(p) for p in points if -limit < p < limit})
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                fn, -limit, limit, epsabs=QUAD_EPSABS, epsrel=1e-12,
                points=pts or None, limit=500,
            )
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature failed on [-{limit}, {limit}]: {exc}") from exc
    return val, err


def v_profile(density: SubbotinDensity, s: float) -> float:
    """Cross-entropy ``V(s) = E[-log f(xi - s)]`` under ``xi ~ f``.

    ``V(0)`` is the differential entropy of ``f``; for symmetric ``f`` the
    profile is minimized at ``s = 0``.
    """
    s = float(s)
    r, log_c = density.r, density.log_c_r

    def integrand(u):
        return (abs(u - s) ** r / r - log_c) * math.exp(log_c - abs(u) ** r / r)

    val, _ = _quad(integrand, points=(0.0, s), limit=support_limit(r) + abs(s))
    return val


def entropy(density: SubbotinDensity) -> float:
    return v_profile(density, 0.0)


def shift_moment_gap(density: SubbotinDensity, delta: float) -> float:
    """``E|xi + delta|^r - E|xi|^r`` for ``xi ~ f``, by quadrature."""
    r, log_c = density.r, density.log_c_r
    delta = float(delta)

    def integrand(u):
        return (abs(u + delta) ** r - abs(u) ** r) * math.exp(log_c - abs(u) ** r / r)

    val, _ = _quad(integrand, points=(0.0, -delta), limit=support_limit(r) + abs(delta))
    return val


def normalization(density: SubbotinDensity) -> float:
    r, log_c = density.r, density.log_c_r
    val, _ = _quad(lambda u: math.exp(log_c - abs(u) ** r / r), points=(0.0,),
                   limit=support_limit(r))
    return val


def tail_log_mass(density, n: int, p: float, shifts: np.ndarray, xi: np.ndarray) -> float:
    """Monte Carlo ``E[|log f(xi + U)| 1{f(xi + U) <= n^-p}]``."""
    logs = density.log_density(xi + shifts)
    hit = logs <= -p * math.log(n)
    return float(np.mean(np.abs(logs) * hit))


def silverman_bandwidth(residuals) -> float:
    e = np.asarray(residuals, dtype=float)
    sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    if sd == 0.0:
        raise ValueError("Silverman rule needs residuals with positive spread; pass a bandwidth")
    return 1.06 * sd * e.size ** (-0.2)


_SQRT_2PI = math.sqrt(2 * math.pi)


def kernel_profile(kind: str, z: np.ndarray):
    """Kernel values ``K(z)`` and slopes ``K'(z)``."""
    if kind == "gaussian":
        k = np.exp(-0.5 * z * z) / _SQRT_2PI
        return k, -z * k
    if kind == "epanechnikov":
        inside = np.abs(z) <= 1
        return np.where(inside, 0.75 * (1 - z * z), 0.0), np.where(inside, -1.5 * z, 0.0)
    raise ValueError(f"unknown kernel {kind!r}")


@dataclass
class KernelDensityEstimate:
    residuals: np.ndarray
    bandwidth: float | None = None
    kernel: str = "gaussian"
    floor: float = KDE_FLOOR

    def __post_init__(self):
        self.residuals = np.atleast_1d(np.asarray(self.residuals, dtype=float))
        if self.residuals.size == 0:
            raise ValueError("kernel density estimate needs at least one residual")
        if self.bandwidth is None:
            self.bandwidth = silverman_bandwidth(self.residuals)
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        kernel_profile(self.kernel, np.zeros(1))

    def estimate(self, v):
        v = np.asarray(v, dtype=float)
        z = (self.residuals[None, :] - np.atleast_1d(v)[:, None]) / self.bandwidth
        k, _ = kernel_profile(self.kernel, z)
        out = k.mean(axis=1) / self.bandwidth
        return float(out[0]) if v.ndim == 0 else out

    def log_estimate(self, v):
        return _unwrap(np.log(np.maximum(self.estimate(v), self.floor)))


def kernel_log_density(kde: KernelDensityEstimate, v):
    return kde.log_estimate(v)
