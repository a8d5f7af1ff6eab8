"""Strongly mixing regression data: truths, generators, datasets, files.

Two generation modes:

* ``ar``: nonparametric autoregression, ``X_t = (Y_{t-1}, ..., Y_{t-d})``.
  Truths used here must be contractions so the chain is geometrically
  ergodic.
* ``exog``: each covariate follows an independent stationary Gaussian AR(1)
  with coefficient 0.5 and unit variance, independent of the noise.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .density import SubbotinDensity, density_from_dict

DIVERGENCE_BOUND = 1e6
EXOG_COEF = 0.5


class InstabilityError(RuntimeError):
    """The generated series left the divergence guard band."""


class ProvenanceError(LookupError):
    """Dataset carries no generator spec, so the truth is unknown."""


# -- truth catalog -------------------------------------------------------------
#
# Each truth maps an (m, d) array to (m,) and reports a Lipschitz bound with
# respect to the l1 norm; sums run over explicit columns so a single row and
# a batch give bit-identical values.

def _colsum(terms):
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _coefs(params, d):
    # default spreads 0.5 over the coordinates, a contraction in any dimension
    c = params.get("coef", 0.5 / d)
    c = [float(c)] * d if np.ndim(c) == 0 else [float(v) for v in c]
    if len(c) != d:
        raise ValueError(f"need {d} coefficients, got {len(c)}")
    return c


def _zero(x, params):
    return np.zeros(x.shape[0])


def _linear(x, params):
    c = _coefs(params, x.shape[1])
    return _colsum([c[k] * x[:, k] for k in range(x.shape[1])])


def _tanh_bump(x, params):
    a = float(params.get("amp", 0.4))
    b = float(params.get("bump", 0.5))
    d = x.shape[1]
    mean = _colsum([x[:, k] for k in range(d)]) / d
    sq = _colsum([x[:, k] * x[:, k] for k in range(d)])
    return a * np.tanh(mean) + b * np.exp(-0.5 * sq)


def _sin_additive(x, params):
    a = float(params.get("amp", 0.5))
    w = float(params.get("freq", 1.5))
    d = x.shape[1]
    return a * _colsum([np.sin(w * x[:, k]) for k in range(d)]) / d


def _composition(x, params):
    # g0: x -> (tanh(x_0), sin(x_{d-1})), each coordinate depends on one input
    # g1: z -> a * z_0 * z_1 + c * z_0
    a = float(params.get("amp", 0.3))
    c = float(params.get("lin", 0.3))
    z0 = np.tanh(x[:, 0])
    z1 = np.sin(x[:, -1])
    return a * z0 * z1 + c * z0


def _lip_linear(p, d):
    return sum(abs(v) for v in _coefs(p, d))


TRUTHS = {
    "zero": (_zero, lambda p, d: 0.0),
    "linear": (_linear, _lip_linear),
    "tanh_bump": (_tanh_bump,
                  lambda p, d: abs(float(p.get("amp", 0.4))) + abs(float(p.get("bump", 0.5))) * math.exp(-0.5)),
    "sin_additive": (_sin_additive,
                     lambda p, d: abs(float(p.get("amp", 0.5)) * float(p.get("freq", 1.5)))),
    "composition": (_composition,
                    lambda p, d: abs(float(p.get("amp", 0.3))) + abs(float(p.get("lin", 0.3)))),
}


@dataclass(frozen=True)
class Truth:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TRUTHS:
            raise ValueError(f"unknown truth {self.name!r}; catalog: {sorted(TRUTHS)}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return TRUTHS[self.name][0](x, self.params)

    def lipschitz(self, d: int) -> float:
        return TRUTHS[self.name][1](self.params, d)

    def __hash__(self):
        return hash((self.name, json.dumps(self.params, sort_keys=True)))


# -- generator ------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    truth: Truth
    input_dim: int = 1
    mode: str = "ar"
    noise: object = field(default_factory=lambda: SubbotinDensity(2.0))
    burn_in: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ar", "exog"):
            raise ValueError(f"mode must be 'ar' or 'exog', got {self.mode!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", max(500, 100 * self.input_dim))
        if self.burn_in < 100 * self.input_dim:
            raise ValueError(f"burn_in must be >= 100*d = {100 * self.input_dim}")
        if self.mode == "ar" and self.truth.lipschitz(self.input_dim) >= 1:
            raise ValueError(f"truth {self.truth.name!r} is not a contraction; "
                             "autoregressive mode would not be mixing")

    def with_seed(self, seed: int) -> "GeneratorSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "truth": self.truth.name,
            "truth_params": self.truth.params,
            "input_dim": self.input_dim,
            "mode": self.mode,
            "noise": self.noise.to_dict(),
            "burn_in": self.burn_in,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        noise = d.get("noise", {"kind": "subbotin", "r": 2.0})
        if not isinstance(noise, dict):
            noise = {"kind": "subbotin", "r": float(noise)}
        return cls(
            truth=Truth(d["truth"], dict(d.get("truth_params", {}))),
            input_dim=int(d.get("input_dim", 1)),
            mode=d.get("mode", "ar"),
            noise=density_from_dict(noise),
            burn_in=d.get("burn_in"),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class SeriesDataset:
    inputs: np.ndarray
    outputs: np.ndarray
    spec: GeneratorSpec | None = None
    noise: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.outputs, dtype=float)
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and outputs must have the same number of rows")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    def __len__(self):
        return self.outputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]


def _streams(seed: int):
    noise_ss, cov_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(cov_ss)


def noise_sequence(spec: GeneratorSpec, count: int) -> np.ndarray:
    """The noise stream of ``spec``; prefixes agree across ``count``."""
    rng, _ = _streams(spec.seed)
    return spec.noise.sample(rng, count)


def generate(spec: GeneratorSpec, n: int, initial_state=None) -> SeriesDataset:
    """Draw ``burn_in + n`` steps and keep the last ``n``.

    ``initial_state`` seeds the lag vector (AR mode) or the covariate chain
    (exog mode); by default it is zero / a stationary draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d, total = spec.input_dim, spec.burn_in + n
    noise_rng, cov_rng = _streams(spec.seed)
    xi = spec.noise.sample(noise_rng, total)
    h0 = spec.truth

    if spec.mode == "ar":
        fn, params = TRUTHS[h0.name][0], h0.params
        x = np.empty((total + 1, d))
        x[0] = 0.0 if initial_state is None else np.asarray(initial_state, dtype=float)
        y = np.empty(total)
        for t in range(total):
            yt = fn(x[t:t + 1], params)[0] + xi[t]
            if not abs(yt) <= DIVERGENCE_BOUND:
                raise InstabilityError(f"|Y_t| exceeded {DIVERGENCE_BOUND:g} at step {t}")
            y[t] = yt
            x[t + 1, 1:] = x[t, :-1]
            x[t + 1, 0] = yt
        x = x[:total]
    else:
        scale = math.sqrt(1.0 - EXOG_COEF**2)
        eta = cov_rng.standard_normal((total, d))
        x = np.empty((total, d))
        x[0] = cov_rng.standard_normal(d) if initial_state is None else np.asarray(initial_state, dtype=float)
        for t in range(1, total):
            x[t] = EXOG_COEF * x[t - 1] + scale * eta[t]
        y = h0(x) + xi
        if not np.all(np.abs(y) <= DIVERGENCE_BOUND):
            raise InstabilityError(f"|Y_t| exceeded {DIVERGENCE_BOUND:g}")

    keep = slice(spec.burn_in, total)
    return SeriesDataset(x[keep].copy(), y[keep].copy(), spec, xi[keep].copy())


def split(ds: SeriesDataset, train_fraction: float) -> tuple[SeriesDataset, SeriesDataset]:
    """Chronological split; the training block comes first."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    if n < 2:
        raise ValueError("cannot split fewer than 2 rows")
    k = min(max(int(math.floor(train_fraction * n)), 1), n - 1)
    noise = ds.noise
    a = SeriesDataset(ds.inputs[:k], ds.outputs[:k], ds.spec, None if noise is None else noise[:k])
    b = SeriesDataset(ds.inputs[k:], ds.outputs[k:], ds.spec, None if noise is None else noise[k:])
    return a, b


def truth_values(ds: SeriesDataset) -> np.ndarray:
    if ds.spec is None:
        raise ProvenanceError("dataset has no generator provenance; h0 is unavailable")
    return ds.spec.truth(ds.inputs)


def stationary_inputs(spec: GeneratorSpec, count: int, seed: int) -> np.ndarray:
    """Fresh covariate draws from the stationary law, using a disjoint seed."""
    return generate(spec.with_seed(seed), count).inputs


# -- files ------------------------------------------------------------------------

def provenance_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_dataset(ds: SeriesDataset, path) -> None:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k}" for k in range(ds.input_dim)] + ["y"])
    for row, yv in zip(ds.inputs, ds.outputs):
        w.writerow([repr(float(v)) for v in row] + [repr(float(yv))])
    path.write_text(buf.getvalue())
    if ds.spec is not None:
        provenance_path(path).write_text(json.dumps(ds.spec.to_dict(), indent=2, sort_keys=True) + "\n")


def read_dataset(path) -> SeriesDataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if header[-1] != "y" or header[:-1] != [f"x{k}" for k in range(len(header) - 1)]:
        raise ValueError(f"{path}: expected header x0,...,x{{d-1}},y")
    arr = np.array(body, dtype=float).reshape(len(body), len(header))
    side = provenance_path(path)
    spec = GeneratorSpec.from_dict(json.loads(side.read_text())) if side.exists() else None
    return SeriesDataset(arr[:, :-1], arr[:, -1], spec)
