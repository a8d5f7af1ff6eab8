"""Command-line driver: ``deepmee [--threads K] [--seed U] <command> ...``.

Every command reads JSON configs and writes CSV (with a ``# key=value``
header block) or a network checkpoint. Exit codes: 0 success, 2 bad config
or input, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .data import GeneratorSpec, InstabilityError, generate, read_dataset, stationary_inputs, write_dataset
from .density import SubbotinDensity
from .estimators import DivergenceError, TrainConfig, train
from .harness import (EVAL_SEED_OFFSET, LOSS_CONVENTION, MIN_MC, RiskReport, architecture_for,
                      cell_seed, excess_risk_mc, format_csv, library_versions, loss_density_for,
                      penalty_for, prediction_mse, rate_study, robustness_compare,
                      summarize_comparison)
from .network import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
ESTIMATORS = ("npdnn", "spdnn", "kmee", "ls")


class ConfigError(ValueError):
    pass


def _read_json(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return cfg


def _generator_dict(cfg: dict) -> dict:
    return cfg["generator"] if "generator" in cfg else cfg


def _write(path, text: str) -> None:
    Path(path).write_text(text)


# -- commands ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _read_json(args.config)
    gdict = dict(_generator_dict(cfg))
    n = int(cfg.get("n", gdict.pop("n", 0)))
    gdict.pop("n", None)
    if args.seed is not None:
        gdict["seed"] = args.seed
    spec = GeneratorSpec.from_dict(gdict)
    write_dataset(generate(spec, n), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _read_json(args.config)
    data = read_dataset(args.data)
    n = len(data)
    if args.seed is not None:
        cfg.setdefault("train", {})["seed"] = args.seed
    tcfg = TrainConfig.from_dict(dict(cfg.get("train", {})))

    if "loss" in cfg or data.spec is not None:
        density = loss_density_for(cfg, data.spec)
    else:
        density = SubbotinDensity(2.0)
    arch = architecture_for(cfg, n, data.input_dim)
    if args.estimator != "npdnn":
        arch = arch.with_sparsity(None)
    elif arch.sparsity_budget is None:
        raise ConfigError("npdnn needs a sparsity budget ('sparsity_budget' or the 'rate' rule)")
    penalty = penalty_for(cfg, n) if args.estimator == "spdnn" or "penalty" in cfg else None

    status = "ok"
    try:
        model = train(args.estimator, data, arch, tcfg, density=density, penalty=penalty,
                      bandwidth=cfg.get("bandwidth"))
    except DivergenceError as exc:
        model, status = exc.checkpoint, "diverged"
        print(f"deepmee: {exc}; wrote last finite parameters", file=sys.stderr)

    meta = {
        "estimator": args.estimator,
        "n": n,
        "train_risk": model.final_risk if model.history else math.nan,
        "status": status,
        "train_config": tcfg.to_dict(),
        "loss": density.to_dict(),
        "penalty": penalty.to_dict() if penalty is not None else None,
        "bandwidth": model.bandwidth,
    }
    save_checkpoint(args.out, model.net, meta)

    rows = [(k + 1, risk, pen, risk + pen) for k, (risk, pen) in enumerate(model.history)]
    head = {"estimator": args.estimator, "n": n, "seed": tcfg.seed, "status": status,
            "weight_bound": arch.weight_bound, "output_bound": arch.output_bound,
            "sparsity_budget": arch.sparsity_budget if arch.sparsity_budget is not None else "none",
            **library_versions()}
    _write(f"{args.out}.history.csv",
           format_csv(head, ["epoch", "risk", "penalty", "objective"], rows))
    return EXIT_DIVERGED if status == "diverged" else EXIT_OK


def cmd_eval(args) -> int:
    net, meta = load_checkpoint(args.model)
    spec_cfg = _read_json(args.data_spec)
    gen = GeneratorSpec.from_dict(_generator_dict(spec_cfg))
    if net.arch.input_dim != gen.input_dim:
        raise ConfigError(f"model expects {net.arch.input_dim} inputs, data spec has {gen.input_dim}")
    if args.mc < MIN_MC:
        raise ConfigError(f"--mc must be >= {MIN_MC}")
    base = args.seed if args.seed is not None else gen.seed
    eval_seed = cell_seed(base, EVAL_SEED_OFFSET)
    x = stationary_inputs(gen, args.mc, eval_seed)
    rng = np.random.default_rng(eval_seed)
    density = loss_density_for(spec_cfg, gen)
    est, se = excess_risk_mc(net, gen.truth, density, x, args.mc, rng, noise=gen.noise)
    report = RiskReport(float(meta.get("train_risk", math.nan)), est, se,
                        prediction_mse(net, gen.truth, x), int(meta.get("n", 0)),
                        str(meta.get("estimator", "unknown")))
    cols = ["empirical_train_risk", "test_excess_risk", "standard_error", "test_mse", "n",
            "estimator_kind"]
    head = {"seed": base, "eval_seed": eval_seed, "mc": args.mc, "loss": density.to_dict()["kind"],
            "loss_convention": LOSS_CONVENTION, "weight_bound": net.arch.weight_bound,
            "output_bound": net.arch.output_bound, **library_versions()}
    _write(args.out, format_csv(head, cols, [[getattr(report, c) for c in cols]]))
    return EXIT_OK


def cmd_rate_study(args) -> int:
    cfg = _read_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    res = rate_study(cfg, threads=args.threads)
    head = {**res.meta, "slope": res.slope, "theory_exponent": res.theory_exponent,
            "degenerate": int(res.degenerate)}
    cols = ["n", "seed", "status", "excess", "se", "mse", "train_risk"]
    _write(args.out, format_csv(head, cols, res.cells))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _read_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    rows = robustness_compare(cfg, threads=args.threads)
    summary = summarize_comparison(rows)
    head = {"seed": int(cfg.get("seed", 0)), "estimator": cfg.get("estimator", "mee"),
            "loss": json.dumps(cfg.get("loss"), sort_keys=True),
            "noise": json.dumps(_generator_dict(cfg).get("noise"), sort_keys=True),
            **{f"wins_{s['truth']}_{s['n']}": s["mee_wins"] for s in summary},
            **{f"median_mee_{s['truth']}_{s['n']}": s["median_mse_mee"] for s in summary},
            **{f"median_ls_{s['truth']}_{s['n']}": s["median_mse_ls"] for s in summary},
            **library_versions()}
    _write(args.out, format_csv(head, ["truth", "n", "seed", "mse_mee", "mse_ls", "mee_win"], rows))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepmee", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=_positive, default=1, help="worker processes for studies")
    p.add_argument("--seed", type=_u64, default=None, help="override the config seed")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset CSV plus provenance JSON")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit an estimator and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--estimator", required=True, choices=ESTIMATORS)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="Monte Carlo excess risk of a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--data-spec", required=True)
    e.add_argument("--mc", type=int, default=100_000)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rate-study", help="excess risk across sample sizes")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rate_study)

    c = sub.add_parser("compare", help="MEE against least squares on paired data")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (DivergenceError, InstabilityError) as exc:
        print(f"deepmee: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"deepmee: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
