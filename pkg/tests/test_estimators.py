import math

import numpy as np
import pytest

import oracles
from deepmee.data import GeneratorSpec, SeriesDataset, Truth, generate
from deepmee.density import SubbotinDensity
from deepmee.estimators import (DivergenceError, TrainConfig, empirical_risk,
                                kernel_mee_objective, kernel_mee_residual_grad, squared_risk, train,
                                train_kernel_mee, train_least_squares, train_mee, train_npdnn,
                                train_spdnn)
from deepmee.harness import prediction_mse
from deepmee.network import Architecture, Network, mlp
from deepmee.penalty import PenaltySpec, prune_to_sparsity

GAUSS, LAPLACE = SubbotinDensity(2), SubbotinDensity(1)


def linear_data(n, seed, noise=GAUSS):
    return generate(GeneratorSpec(Truth("linear"), noise=noise, seed=seed), n)


# -- risks ------------------------------------------------------------------------------

def test_empirical_risk_hand_values():
    net = Network(Architecture((1, 1)))
    zero = SeriesDataset([[0.3], [-1.0]], [0.0, 0.0])
    assert empirical_risk(net, zero, GAUSS) == pytest.approx(0.9189385332, abs=1e-9)
    assert empirical_risk(net, zero, LAPLACE) == pytest.approx(0.6931471806, abs=1e-9)
    pm = SeriesDataset([[0.3], [-1.0]], [1.0, -1.0])
    assert empirical_risk(net, pm, GAUSS) == pytest.approx(0.9189385332 + 0.5, abs=1e-9)
    assert squared_risk(net, pm) == 0.5
    with pytest.raises(ValueError):
        empirical_risk(net, SeriesDataset(np.zeros((0, 1)), np.zeros(0)), GAUSS)


def test_empirical_risk_lower_bound():
    net = Network.initialize(mlp(1, [8]), np.random.default_rng(0))
    ds = linear_data(200, 1)
    for r in (1.0, 1.5, 2.0):
        d = SubbotinDensity(r)
        assert empirical_risk(net, ds, d) >= -d.log_c_r


# -- configuration ------------------------------------------------------------------------

def test_train_config_validation():
    for bad in ({"epochs": -1}, {"batch_size": 0}, {"step_size": 0.0}, {"optimizer": "lbfgs"},
                {"prune_every": 0}, {"penalty_mode": "exact"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epoch": 3})
    cfg = TrainConfig(epochs=3, optimizer="momentum")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- Gaussian equivalence ------------------------------------------------------------------

@pytest.mark.parametrize("optimizer", ["adam", "momentum"])
def test_gaussian_mee_equals_least_squares(optimizer):
    ds = linear_data(512, 2)
    arch = mlp(1, [16, 16])
    cfg = TrainConfig(epochs=5, seed=3, optimizer=optimizer)
    a = train_mee(ds, arch, GAUSS, cfg)
    b = train_least_squares(ds, arch, cfg)
    assert np.array_equal(a.net.theta(), b.net.theta())
    shift = -GAUSS.log_c_r
    for (ra, _), (rb, _) in zip(a.history, b.history):
        assert ra == pytest.approx(rb + shift, abs=1e-12)


def test_training_is_deterministic():
    ds = linear_data(300, 4)
    cfg = TrainConfig(epochs=4, seed=9)
    arch = mlp(1, [8, 8], sparsity_budget=60)
    a, b = train_npdnn(ds, arch, GAUSS, cfg), train_npdnn(ds, arch, GAUSS, cfg)
    assert np.array_equal(a.net.theta(), b.net.theta()) and a.history == b.history


# -- NPDNN -----------------------------------------------------------------------------------

def test_npdnn_requires_budget():
    with pytest.raises(ValueError):
        train_npdnn(linear_data(64, 0), mlp(1, [4]), GAUSS, TrainConfig(epochs=1))


def test_npdnn_zero_epochs_returns_projected_init():
    ds = linear_data(64, 0)
    arch = mlp(1, [8, 8], sparsity_budget=30)
    cfg = TrainConfig(epochs=0, seed=5)
    m = train_npdnn(ds, arch, GAUSS, cfg)
    assert m.history == []
    assert np.count_nonzero(m.net.theta()) <= 30
    init = Network.initialize(arch, np.random.default_rng(5).spawn(2)[0])
    assert np.all((m.net.theta() == 0) | (m.net.theta() == init.theta()))
    assert empirical_risk(m.net, ds, GAUSS) == pytest.approx(empirical_risk(m.net, ds, GAUSS))


@pytest.mark.parametrize("budget", [12, 40, 90])
def test_npdnn_returns_class_member(budget):
    ds = linear_data(256, 6)
    arch = mlp(1, [8, 8], sparsity_budget=budget, weight_bound=0.4, output_bound=2.0)
    m = train_npdnn(ds, arch, GAUSS, TrainConfig(epochs=13, seed=1, prune_every=5, step_size=1e-2))
    th = m.net.theta()
    assert np.count_nonzero(th) <= budget
    assert np.max(np.abs(th)) <= 0.4
    assert np.all(np.abs(m.predict(np.linspace(-50, 50, 1001)[:, None])) <= 2.0)
    assert len(m.history) == 13


def test_npdnn_vacuous_budget_matches_unconstrained():
    ds = linear_data(256, 7)
    arch = mlp(1, [8, 8])
    cfg = TrainConfig(epochs=6, seed=2, prune_every=2)
    a = train_npdnn(ds, arch.with_sparsity(arch.n_params), GAUSS, cfg)
    b = train_mee(ds, arch, GAUSS, cfg)
    assert np.array_equal(a.net.theta(), b.net.theta())


def test_npdnn_reduces_risk_on_linear_truth():
    wins = 0
    for seed in range(10):
        ds = linear_data(512, 100 + seed)
        arch = mlp(1, [16, 16], sparsity_budget=200)
        m = train_npdnn(ds, arch, GAUSS, TrainConfig(epochs=30, seed=seed))
        init = Network.initialize(arch, np.random.default_rng(seed).spawn(2)[0])
        wins += m.final_risk < empirical_risk(init, ds, GAUSS)
    assert wins >= 9


def test_objective_trails_below_lead():
    wins = 0
    for seed in range(10):
        ds = generate(GeneratorSpec(Truth("sin_additive"), seed=200 + seed), 512)
        m = train_npdnn(ds, mlp(1, [16, 16], sparsity_budget=200), GAUSS, TrainConfig(epochs=30, seed=seed))
        risks = [r for r, _ in m.history]
        wins += np.mean(risks[-10:]) <= np.mean(risks[:10])
    assert wins >= 9


# -- SPDNN -----------------------------------------------------------------------------------

def test_spdnn_zero_lambda_matches_unpenalized():
    ds = linear_data(256, 8)
    arch = mlp(1, [8, 8])
    cfg = TrainConfig(epochs=5, seed=4)
    for mode in ("prox", "subgradient"):
        c = TrainConfig(**{**cfg.to_dict(), "penalty_mode": mode})
        a = train_spdnn(ds, arch, GAUSS, PenaltySpec(0.0, 1e-6), c)
        b = train_mee(ds, arch, GAUSS, c)
        assert np.array_equal(a.net.theta(), b.net.theta())
        assert all(p == 0.0 for _, p in a.history)


def test_spdnn_heavy_penalty_sparsifies():
    ds = linear_data(256, 9)
    arch = mlp(1, [8, 8])
    cfg = TrainConfig(epochs=5, seed=4)
    init_risk = empirical_risk(Network.initialize(arch, np.random.default_rng(4).spawn(2)[0]), ds, GAUSS)
    spec = PenaltySpec(1e3 * init_risk, 1e-6)
    m = train_spdnn(ds, arch, GAUSS, spec, cfg)
    th = m.net.theta()
    assert np.mean((th == 0) | (np.abs(th) <= spec.tau)) >= 0.9


def test_spdnn_history_and_bounds():
    ds = linear_data(128, 10)
    arch = mlp(1, [6], weight_bound=0.3)
    spec = PenaltySpec(0.01, 1e-3)
    m = train_spdnn(ds, arch, GAUSS, spec, TrainConfig(epochs=4, seed=0, step_size=0.05))
    assert len(m.history) == 4
    assert np.max(np.abs(m.net.theta())) <= 0.3
    from deepmee.penalty import penalty_total
    assert m.history[-1][1] == pytest.approx(penalty_total(spec, m.net.theta()))


def test_spdnn_subgradient_mode_runs():
    ds = linear_data(128, 11)
    m = train_spdnn(ds, mlp(1, [6]), GAUSS, PenaltySpec(0.01, 1e-2),
                    TrainConfig(epochs=3, penalty_mode="subgradient"))
    assert np.all(np.isfinite(m.net.theta()))


# -- least squares ----------------------------------------------------------------------------

def test_least_squares_zero_epochs_is_init():
    ds = linear_data(64, 12)
    arch = mlp(1, [4])
    m = train_least_squares(ds, arch, TrainConfig(epochs=0, seed=7))
    init = Network.initialize(arch, np.random.default_rng(7).spawn(2)[0])
    assert np.array_equal(m.net.theta(), init.theta())


def test_least_squares_fits_linear_truth():
    good = 0
    for seed in range(10):
        gen = GeneratorSpec(Truth("linear"), seed=300 + seed)
        ds = generate(gen, 512)
        m = train_least_squares(ds, mlp(1, [16, 16]), TrainConfig(epochs=30, seed=seed))
        x = generate(gen.with_seed(10_000 + seed), 5000).inputs
        good += prediction_mse(m, gen.truth, x) < 1.5 * 1.0
    assert good >= 9


# -- kernel MEE ------------------------------------------------------------------------------

@pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
def test_kernel_objective_matches_loops(kernel):
    e = np.random.default_rng(0).standard_normal(25)
    k = oracles.gaussian_kernel if kernel == "gaussian" else oracles.epanechnikov_kernel
    got = kernel_mee_objective(e, 0.6, kernel, chunk=7)
    assert got == pytest.approx(oracles.kernel_objective_loops(e, 0.6, k), abs=1e-12)
    obj, _ = kernel_mee_residual_grad(e, 0.6, kernel)
    assert obj == pytest.approx(got, abs=1e-12)


def test_kernel_objective_constant_residuals():
    for b in (0.2, 1.0):
        assert kernel_mee_objective(np.full(10, 0.7), b) == pytest.approx(
            -math.log(1 / (b * math.sqrt(2 * math.pi))), abs=1e-14)


def test_kernel_objective_two_points_hand():
    # linear net h(x) = w x + c on two points
    w, c, b = 0.4, -0.1, 0.8
    x, y = np.array([1.0, -2.0]), np.array([0.5, 0.3])
    e = y - (w * x + c)
    kk = oracles.gaussian_kernel((e[1] - e[0]) / b) / b
    k0 = oracles.gaussian_kernel(0.0) / b
    want = -0.5 * (math.log(0.5 * (k0 + kk)) * 2)
    assert kernel_mee_objective(e, b) == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
def test_kernel_residual_gradient_finite_differences(kernel):
    e = np.random.default_rng(1).standard_normal(30)
    _, g = kernel_mee_residual_grad(e, 0.7, kernel)
    fd = oracles.central_difference(lambda v: kernel_mee_objective(v, 0.7, kernel), e, 1e-6)
    assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(fd)))


def test_kernel_mee_shift_invariance():
    e = np.random.default_rng(2).standard_normal(40)
    assert kernel_mee_objective(e + 3.0, 0.5) == pytest.approx(kernel_mee_objective(e, 0.5), abs=1e-12)


def test_kernel_mee_requires_data():
    ds = linear_data(7, 0)
    with pytest.raises(ValueError):
        train_kernel_mee(ds, mlp(1, [4]), TrainConfig(epochs=1))


def test_kernel_mee_default_bandwidth_and_median_centering():
    ds = linear_data(256, 13)
    m = train_kernel_mee(ds, mlp(1, [8]), TrainConfig(epochs=5, seed=1))
    assert m.bandwidth > 0
    resid = ds.outputs - m.predict(ds.inputs)
    assert abs(np.median(resid)) < 1e-9


def test_kernel_npdnn_respects_budget():
    ds = linear_data(128, 14)
    m = train_kernel_mee(ds, mlp(1, [8, 8], sparsity_budget=25), TrainConfig(epochs=4, prune_every=2),
                         bandwidth=0.5)
    assert m.estimator_kind == "kernel-NPDNN"
    assert np.count_nonzero(m.net.theta()) <= 25


def test_kernel_mee_close_to_known_density():
    close = 0
    for seed in range(10):
        gen = GeneratorSpec(Truth("tanh_bump"), seed=400 + seed)
        ds = generate(gen, 1024)
        arch = mlp(1, [16, 16])
        cfg = TrainConfig(epochs=30, seed=seed)
        x = generate(gen.with_seed(20_000 + seed), 5000).inputs
        known = prediction_mse(train_mee(ds, arch, GAUSS, cfg), gen.truth, x)
        plug = prediction_mse(train_kernel_mee(ds, arch, cfg), gen.truth, x)
        close += plug <= 2 * known
    assert close >= 7


# -- dispatch and divergence ---------------------------------------------------------------------

def test_train_dispatch():
    ds = linear_data(64, 15)
    cfg = TrainConfig(epochs=1)
    arch = mlp(1, [4], sparsity_budget=10)
    kinds = {"npdnn": "NPDNN", "mee": "MEE", "ls": "least-squares", "kmee": "kernel-NPDNN"}
    for short, long in kinds.items():
        assert train(short, ds, arch, cfg, density=GAUSS).estimator_kind == long
    assert train("spdnn", ds, arch, cfg, density=GAUSS, penalty=PenaltySpec(0.1)).estimator_kind == "SPDNN"
    with pytest.raises(ValueError):
        train("spdnn", ds, arch, cfg, density=GAUSS)
    with pytest.raises(ValueError):
        train("svm", ds, arch, cfg)


def test_divergence_returns_last_finite_checkpoint():
    ds = linear_data(64, 16)
    arch = mlp(1, [4], weight_bound=math.inf, output_bound=math.inf)
    cfg = TrainConfig(epochs=50, optimizer="momentum", step_size=1e300, batch_size=8)
    with pytest.raises(DivergenceError) as info:
        train_mee(ds, arch, GAUSS, cfg)
    ckpt = info.value.checkpoint
    assert np.all(np.isfinite(ckpt.net.theta()))
    assert all(math.isfinite(r) for r, _ in ckpt.history)
