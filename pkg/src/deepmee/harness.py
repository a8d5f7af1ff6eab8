"""Excess-risk evaluation, convergence-rate studies and robustness comparisons.

Experiments are described by plain JSON-compatible dicts so the same config
drives the Python API, the CLI and worker processes. Each (n, seed) cell is
an independent task; results are reduced in sorted order, so the worker
count never changes the output.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .data import GeneratorSpec, generate, stationary_inputs
from .density import SubbotinDensity, density_from_dict
from .estimators import DivergenceError, TrainConfig, train
from .network import Architecture, CompositionSpec, RateSpec, composition_rate, holder_architecture
from .penalty import PenaltySpec, default_penalty

MIN_MC = 100
EVAL_SEED_OFFSET = 0x5EED
LOSS_CONVENTION = "-log f(u), Subbotin: |u|^r/r - log C_r"


# -- excess risk ------------------------------------------------------------------

def _predict(model, x) -> np.ndarray:
    f = getattr(model, "predict", None)
    return f(x) if f is not None else np.asarray(model(x), dtype=float)


def _predict_chunked(model, x, chunk=65536) -> np.ndarray:
    return np.concatenate([_predict(model, x[i:i + chunk]) for i in range(0, len(x), chunk)])


def excess_risk_mc(model, truth: Callable, density, eval_inputs, noise_draws: int,
                   rng: np.random.Generator, noise=None) -> tuple[float, float]:
    """Paired Monte Carlo estimate of ``R(h) - R(h0)`` and its standard error.

    Each draw uses the same ``(X, xi)`` for both terms of
    ``-log f(Y - h(X)) + log f(Y - h0(X))``, so ``h == h0`` gives exactly 0.
    ``noise`` is the sampler for ``xi`` and defaults to ``density``.
    """
    if noise_draws < MIN_MC:
        raise ValueError(f"need at least {MIN_MC} Monte Carlo draws, got {noise_draws}")
    x = np.asarray(eval_inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) != noise_draws:
        x = x[rng.integers(0, len(x), size=noise_draws)]
    xi = (noise or density).sample(rng, noise_draws)
    h0 = truth(x)
    y = h0 + xi
    terms = density.log_density(y - h0) - density.log_density(y - _predict_chunked(model, x))
    est = float(np.mean(terms))
    se = float(np.std(terms, ddof=1) / math.sqrt(noise_draws))
    return est, se


def prediction_mse(model, truth: Callable, eval_inputs) -> float:
    x = np.asarray(eval_inputs, dtype=float)
    return float(np.mean((_predict_chunked(model, x) - truth(x)) ** 2))


@dataclass
class RiskReport:
    empirical_train_risk: float
    test_excess_risk: float
    standard_error: float
    test_mse: float
    n: int
    estimator_kind: str


def fit_loglog_slope(ns: Sequence[float], risks: Sequence[float]) -> float:
    """Least-squares slope of log(risk) against log(n)."""
    lx = np.log(np.asarray(ns, dtype=float))
    ly = np.log(np.asarray(risks, dtype=float))
    lx_c = lx - lx.mean()
    return float(np.sum(lx_c * (ly - ly.mean())) / np.sum(lx_c * lx_c))


# -- reference predictors -------------------------------------------------------------

class ConstantPredictor:
    """Predicts the training-sample mean of Y everywhere."""

    estimator_kind = "sample-mean"

    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, x):
        return np.full(np.asarray(x).shape[0], self.value)


class TruthPredictor:
    estimator_kind = "oracle"

    def __init__(self, truth):
        self.truth = truth

    def predict(self, x):
        return self.truth(x)


# -- experiment configs ---------------------------------------------------------------

def library_versions() -> dict:
    out = {}
    for pkg in ("artifact", "numpy", "scipy"):
        try:
            out[f"version_{pkg}"] = version(pkg)
        except PackageNotFoundError:
            out[f"version_{pkg}"] = "unknown"
    return out


def cell_seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([int(base), *map(int, parts)]).generate_state(1, np.uint64)[0])


def loss_density_for(cfg: dict, gen: GeneratorSpec):
    if "loss" in cfg:
        return density_from_dict(cfg["loss"])
    if isinstance(gen.noise, SubbotinDensity):
        return gen.noise
    return SubbotinDensity(1.0)


def architecture_for(cfg: dict, n: int, d: int) -> Architecture:
    if "widths" in cfg:
        return Architecture(tuple(cfg["widths"]), weight_bound=float(cfg.get("weight_cap", 1e3)),
                            output_bound=float(cfg.get("output_bound", 10.0)),
                            sparsity_budget=cfg.get("sparsity_budget"))
    rs = dict(cfg.get("rate", {}))
    rs.setdefault("smoothness", 1.0)
    rs.setdefault("input_dim", d)
    spec = RateSpec(**rs)
    return holder_architecture(spec, n, output_bound=float(cfg.get("output_bound", 10.0)),
                               weight_cap=float(cfg.get("weight_cap", 1e3)))


def penalty_for(cfg: dict, n: int) -> PenaltySpec:
    """Clipped-L1 penalty from ``cfg["penalty"]``; lam defaults to the tuning rule."""
    pen = dict(cfg.get("penalty") or {})
    spec = default_penalty(n, float(pen.get("nu3", 6.0)), float(pen.get("tau", 1e-6)))
    if "lam" in pen:
        spec = PenaltySpec(float(pen["lam"]), spec.tau)
    return spec


def theory_exponent(cfg: dict, d: int, n: int) -> float:
    """Predicted log-log slope of the excess risk, ignoring log factors."""
    rs = dict(cfg.get("rate", {}))
    rs.setdefault("smoothness", 1.0)
    rs.setdefault("input_dim", d)
    spec = RateSpec(**rs)
    if "composition" in cfg:
        c = cfg["composition"]
        comp = CompositionSpec(tuple(c["dims"]), tuple(c["actives"]), tuple(c["smoothness"]))
        phi = composition_rate(comp, n)
        return math.log(max(phi ** (spec.kappa / 2), phi)) / math.log(n)
    return -spec.exponent


def _train_cell(cfg: dict, gen: GeneratorSpec, n: int, seed_index: int, kind: str):
    base = int(cfg.get("seed", 0))
    data_seed = cell_seed(base, seed_index)
    data = generate(gen.with_seed(data_seed), n)
    if kind == "mean":
        return ConstantPredictor(np.mean(data.outputs)), math.nan
    if kind == "oracle":
        return TruthPredictor(gen.truth), math.nan
    density = loss_density_for(cfg, gen)
    arch = architecture_for(cfg, n, gen.input_dim)
    tc = dict(cfg.get("train", {}))
    tc["seed"] = cell_seed(base, seed_index, n)
    tcfg = TrainConfig.from_dict(tc)
    penalty = penalty_for(cfg, n) if kind == "spdnn" or cfg.get("penalty") is not None else None
    if kind != "npdnn":
        arch = arch.with_sparsity(None)
    model = train(kind, data, arch, tcfg, density=density, penalty=penalty,
                  bandwidth=cfg.get("bandwidth"))
    return model, model.final_risk


_EVAL_CACHE: dict = {}


def _eval_sample(cfg: dict, gen: GeneratorSpec):
    m = int(cfg.get("mc", 100_000))
    eval_seed = cell_seed(int(cfg.get("seed", 0)), EVAL_SEED_OFFSET)
    key = (repr(sorted(gen.to_dict().items())), m, eval_seed)
    if key not in _EVAL_CACHE:
        _EVAL_CACHE.clear()
        _EVAL_CACHE[key] = stationary_inputs(gen, m, eval_seed)
    return _EVAL_CACHE[key], m, np.random.default_rng(eval_seed)


def _rate_cell(args):
    cfg, n, k = args
    gen = GeneratorSpec.from_dict(cfg["generator"])
    kind = cfg.get("estimator", "npdnn")
    try:
        model, train_risk = _train_cell(cfg, gen, n, k, kind)
    except DivergenceError:
        return {"n": n, "seed": k, "status": "diverged", "excess": math.nan, "se": math.nan,
                "mse": math.nan, "train_risk": math.nan}
    x, m, rng = _eval_sample(cfg, gen)
    density = loss_density_for(cfg, gen)
    est, se = excess_risk_mc(model, gen.truth, density, x, m, rng, noise=gen.noise)
    return {"n": n, "seed": k, "status": "ok", "excess": est, "se": se,
            "mse": prediction_mse(model, gen.truth, x), "train_risk": train_risk}


def _init_worker():
    threadpool_limits(1)


def run_cells(fn, tasks: list, threads: int = 1) -> list:
    """Run independent cells, returning results in task order."""
    if threads <= 1 or len(tasks) <= 1:
        with threadpool_limits(1):
            return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
        return list(pool.map(fn, tasks))


@dataclass
class RateStudyResult:
    ns: list[int]
    risks: list[float]
    spreads: list[float]
    slope: float
    theory_exponent: float
    degenerate: bool = False
    cells: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def rows(self):
        for n, r, s in zip(self.ns, self.risks, self.spreads):
            yield n, r, s


def rate_study(cfg: dict, threads: int = 1) -> RateStudyResult:
    ns = sorted(int(n) for n in cfg["ns"])
    if len(set(ns)) < 3 or ns[0] < 256:
        raise ValueError("rate study needs >= 3 distinct sample sizes, each >= 256")
    seeds = int(cfg.get("seeds", 10))
    tasks = [(cfg, n, k) for n in ns for k in range(seeds)]
    cells = sorted(run_cells(_rate_cell, tasks, threads), key=lambda c: (c["n"], c["seed"]))

    gen = GeneratorSpec.from_dict(cfg["generator"])
    kept_ns, means, spreads = [], [], []
    for n in ns:
        vals = [c["excess"] for c in cells if c["n"] == n and c["status"] == "ok"]
        if vals:
            kept_ns.append(n)
            means.append(float(np.mean(vals)))
            spreads.append(float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0)
    degenerate = len(kept_ns) < 3 or any(not m > 0 for m in means)
    slope = math.nan if degenerate else fit_loglog_slope(kept_ns, means)
    meta = {
        "estimator": cfg.get("estimator", "npdnn"),
        "seed": int(cfg.get("seed", 0)),
        "seeds": seeds,
        "mc": int(cfg.get("mc", 100_000)),
        "weight_cap": float(cfg.get("weight_cap", 1e3)),
        "output_bound": float(cfg.get("output_bound", 10.0)),
        "rate_constants": json.dumps(cfg.get("rate", {}), sort_keys=True, separators=(",", ":")),
        "loss_convention": LOSS_CONVENTION,
        **library_versions(),
    }
    return RateStudyResult(kept_ns, means, spreads, slope,
                           theory_exponent(cfg, gen.input_dim, ns[0]), degenerate, cells, meta)


# -- robustness -----------------------------------------------------------------------

def _compare_cell(args):
    cfg, truth_idx, n, k = args
    gdict = dict(cfg["generator"])
    truth = cfg["truths"][truth_idx]
    gdict["truth"], gdict["truth_params"] = truth["name"], truth.get("params", {})
    gen = GeneratorSpec.from_dict(gdict)
    x, _, _ = _eval_sample(cfg, gen)
    out = {"truth": truth["name"], "n": n, "seed": k}
    for label, kind in (("mee", cfg.get("estimator", "mee")), ("ls", "ls")):
        try:
            model, _ = _train_cell(cfg, gen, n, k, kind)
            out[f"mse_{label}"] = prediction_mse(model, gen.truth, x)
        except DivergenceError:
            out[f"mse_{label}"] = math.nan
    a, b = out["mse_mee"], out["mse_ls"]
    out["mee_win"] = 1.0 if a < b else 0.5 if a == b else 0.0
    return out


def robustness_compare(cfg: dict, threads: int = 1) -> list[dict]:
    """Paired MEE vs least-squares runs; one row per (truth, n, seed)."""
    tasks = [(cfg, t, int(n), k) for t in range(len(cfg["truths"]))
             for n in sorted(cfg["ns"]) for k in range(int(cfg.get("seeds", 10)))]
    return run_cells(_compare_cell, tasks, threads)


def summarize_comparison(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["truth"], r["n"]), []).append(r)
    out = []
    for (truth, n), rs in groups.items():
        out.append({
            "truth": truth, "n": n, "seeds": len(rs),
            "median_mse_mee": float(np.median([r["mse_mee"] for r in rs])),
            "median_mse_ls": float(np.median([r["mse_ls"] for r in rs])),
            "mee_wins": float(sum(r["mee_win"] for r in rs)),
        })
    return out


# -- CSV output ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(meta: dict, columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()
