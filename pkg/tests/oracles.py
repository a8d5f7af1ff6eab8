"""Independent reference implementations used as test oracles.

Nothing here imports the package under test. Each oracle is the slow,
obvious version of a quantity: loops instead of vectorization, generic
quadrature instead of closed forms, grid search instead of formulas.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, special


# -- densities --------------------------------------------------------------------

def subbotin_norm_quad(r: float) -> float:
    """Normalizing constant 1 / integral of exp(-|u|^r/r), by quadrature."""
    half, _ = integrate.quad(lambda u: math.exp(-u**r / r), 0, math.inf, epsabs=1e-13, limit=200)
    return 1.0 / (2 * half)


def subbotin_pdf(u: float, r: float) -> float:
    return subbotin_norm_quad(r) * math.exp(-abs(u) ** r / r)


def subbotin_cdf(u, r: float):
    """P(U <= u) through the regularized incomplete gamma: |U|^r / r ~ Gamma(1/r)."""
    u = np.asarray(u, dtype=float)
    return 0.5 + 0.5 * np.sign(u) * special.gammainc(1.0 / r, np.abs(u) ** r / r)


def subbotin_variance(r: float) -> float:
    # E|U|^2 = r^(2/r) Gamma(3/r) / Gamma(1/r)
    return r ** (2 / r) * math.gamma(3 / r) / math.gamma(1 / r)


def max_abs_derivative(pdf, lo=1e-6, hi=20.0) -> float:
    """sup |f'| for a symmetric unimodal density, by bounded 1-D maximization."""
    h = 1e-6
    def neg(u):
        return -abs(pdf(u + h) - pdf(u - h)) / (2 * h)
    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    return -res.fun


def cross_entropy_quad(r: float, s: float) -> float:
    """V(s) = int -log f(u - s) f(u) du with an independently normalized f."""
    c = subbotin_norm_quad(r)
    def integrand(u):
        return -(math.log(c) - abs(u - s) ** r / r) * c * math.exp(-abs(u) ** r / r)
    val, _ = integrate.quad(integrand, -80, 80, points=[0.0, s], limit=400, epsabs=1e-12)
    return val


def laplace_abs_shift_gap(delta: float) -> float:
    """E|xi + delta| - E|xi| for xi ~ Laplace(1): |delta| + exp(-|delta|) - 1."""
    a = abs(delta)
    return a + math.exp(-a) - 1


def gaussian_kernel(z):
    return np.exp(-0.5 * np.asarray(z) ** 2) / math.sqrt(2 * math.pi)


def epanechnikov_kernel(z):
    z = np.asarray(z)
    return np.where(np.abs(z) <= 1, 0.75 * (1 - z * z), 0.0)


def parzen(residuals, v, b, kernel=gaussian_kernel):
    total = 0.0
    for e in residuals:
        total += float(kernel((v - e) / b)) / b
    return total / len(residuals)


def kernel_objective_loops(residuals, b, kernel=gaussian_kernel, floor=1e-12):
    n = len(residuals)
    acc = 0.0
    for i in range(n):
        acc += math.log(max(parzen(residuals, residuals[i], b, kernel), floor))
    return -acc / n


# -- networks ---------------------------------------------------------------------

def unpack_theta(theta, widths):
    """Split a flat vector into (W_j, b_j); W_j column-major, then b_j."""
    out, off = [], 0
    for j in range(1, len(widths)):
        rows, cols = widths[j], widths[j - 1]
        W = np.empty((rows, cols))
        for c in range(cols):
            for r in range(rows):
                W[r, c] = theta[off]
                off += 1
        b = np.array(theta[off:off + rows], dtype=float)
        off += rows
        out.append((W, b))
    assert off == len(theta)
    return out


def forward_loops(theta, widths, x, clamp):
    """Scalar-by-scalar ReLU forward pass with the output clamp."""
    layers = unpack_theta(theta, widths)
    a = [float(v) for v in x]
    for j, (W, b) in enumerate(layers):
        z = []
        for r in range(W.shape[0]):
            s = b[r]
            for c in range(W.shape[1]):
                s += W[r, c] * a[c]
            z.append(s)
        a = z if j == len(layers) - 1 else [max(v, 0.0) for v in z]
    return min(max(a[0], -clamp), clamp)


def central_difference(fn, theta, h=1e-6):
    theta = np.array(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (fn(theta + e) - fn(theta - e)) / (2 * h)
    return g


def hidden_preactivations(theta, widths, x):
    """Pre-activations of every hidden unit, for kink screening."""
    layers = unpack_theta(theta, widths)
    a = np.asarray(x, dtype=float)
    pre = []
    for W, b in layers[:-1]:
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0)
    raw = a @ layers[-1][0].T + layers[-1][1]
    return pre, raw[:, 0]


# -- penalty ----------------------------------------------------------------------

def clipped_l1(x, lam, tau):
    return lam * min(x / tau, 1.0)


def prox_grid(theta_j, lam, tau, step, grid=200001):
    """Brute-force minimizer of (z - theta)^2/(2 step) + lam*min(|z|/tau, 1)."""
    span = abs(theta_j) + 2 * tau + 1e-3
    z = np.linspace(-span, span, grid)
    z = np.concatenate([z, [theta_j, 0.0, tau, -tau]])
    obj = (z - theta_j) ** 2 / (2 * step) + lam * np.minimum(np.abs(z) / tau, 1.0)
    return float(obj.min())


# -- statistics -------------------------------------------------------------------

def ols_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[1])


def ar1_stationary_variance(phi: float, noise_var: float) -> float:
    return noise_var / (1 - phi * phi)


def autocorrelation(y, lag: int) -> float:
    y = np.asarray(y, float) - np.mean(y)
    return float(np.dot(y[:-lag], y[lag:]) / np.dot(y, y))


def forward_batch(theta, widths, X, clamp):
    """Vectorized ReLU forward built on the independent unpacking above."""
    layers = unpack_theta(theta, widths)
    a = np.asarray(X, dtype=float)
    for W, b in layers[:-1]:
        a = np.maximum(a @ W.T + b, 0.0)
    raw = (a @ layers[-1][0].T + layers[-1][1])[:, 0]
    return np.clip(raw, -clamp, clamp)


def subbotin_loss(u, r):
    """Mean of |u|^r / r, the MEE loss up to its additive constant."""
    return float(np.mean(np.abs(u) ** r / r))


def gradient_check(grad_fn, theta, widths, X, y, r, clamp, h=1e-6, margin=1e-4):
    """Max relative error between ``grad_fn(X, y)`` and central differences.

    Points within ``margin`` of a ReLU kink, the output clamp, or a zero
    residual (nonsmooth for r = 1) are dropped first. Returns (error, kept).
    """
    pre, raw = hidden_preactivations(theta, widths, X)
    ok = np.abs(np.abs(raw) - clamp) > margin
    for z in pre:
        ok &= np.all(np.abs(z) > margin, axis=1)
    ok &= np.abs(y - np.clip(raw, -clamp, clamp)) > margin
    X, y = X[ok], y[ok]
    if len(y) == 0:
        return 0.0, 0
    def loss(t):
        return subbotin_loss(y - forward_batch(t, widths, X, clamp), r)
    fd = central_difference(loss, theta, h)
    g = grad_fn(X, y)
    err = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-3)
    return float(err.max()), int(len(y))
