"""Smoke tests for the python bindings: the main operations round-trip
through numpy and reproduce a few closed-form values."""

import math

import numpy as np
import pytest

import sngd


def test_metric_roundtrip():
    rng = sngd.Rng(1)
    a = np.random.default_rng(0).normal(size=(4, 4))
    g = sngd.MetricMatrix(a @ a.T + np.eye(4))
    v = np.arange(1.0, 5.0)
    u = g.solve(v)
    assert np.linalg.norm(g.entries @ u - v) < 1e-8 * np.linalg.norm(v)
    sign, logdet = np.linalg.slogdet(g.entries)
    assert sign > 0
    assert abs(g.log_det() - logdet) < 1e-8
    draw = sngd.draw_noise(g, temperature=1.0, eps=0.5, data_size=4, rng=rng)
    assert draw.vector.shape == (4,)
    assert draw.scale == pytest.approx(1.0)


def test_temperature_formula():
    assert sngd.temperature(0.1, 1000, 50) == pytest.approx(0.95)
    assert sngd.batch_for_temperature(0.125, 1024, 1.0) == 60


def test_logistic_model_and_fisher():
    rng = sngd.Rng(7)
    model = sngd.Model(sngd.ModelSpec(sngd.ModelKind.logistic, 3))
    w = np.zeros(3)
    x = np.array([1.0, -2.0, 0.5])
    p = model.predict(w, x)
    assert p == pytest.approx([0.5, 0.5])
    assert model.loss(w, x, 1) == pytest.approx(math.log(2.0))

    data = sngd.generate_synthetic_logistic(500, 3, np.array([1.0, -1.0, 0.0]), rng)
    est = sngd.fisher_exact(model, w, data.inputs)
    assert est.source == sngd.FisherSource.exact_expectation
    # at w = 0 the logistic Fisher is E[x x^T] / 4
    expected = data.inputs.T @ data.inputs / (4.0 * data.size)
    assert np.linalg.norm(est.matrix.entries - expected) < 1e-10


def test_chain_runs_and_matches_laplace():
    rng = sngd.Rng(11)
    w_true = np.array([16.0, 0.0])
    data = sngd.generate_synthetic_logistic(1000, 2, w_true, rng)
    model = sngd.Model(sngd.ModelSpec(sngd.ModelKind.logistic, 2))

    cfg = sngd.SamplerConfig()
    cfg.rule = sngd.SamplerRule.precond_static
    cfg.eps = 0.1
    cfg.temperature = 1.0
    cfg.damping = 1e-4
    cfg.burn_in_steps = 2000
    cfg.sample_steps = 2000

    problem = sngd.make_problem(model, data, cfg)
    chain = sngd.run_chain(problem, cfg, np.zeros(2), seed=3)
    assert chain.samples.shape == (2000, 2)

    lap = sngd.laplace(model, data, 1.0)
    dist = sngd.gaussian_distance(chain.sample_mean(), chain.sample_covariance(), lap)
    assert dist.cov_frobenius_rel < 0.6
    assert dist.mean_mahalanobis < 1.0

    # determinism
    again = sngd.run_chain(problem, cfg, np.zeros(2), seed=3)
    assert np.array_equal(chain.samples, again.samples)


def test_stationary_density_and_tv():
    toy = sngd.exp_metric_toy()
    grid = sngd.GridSpec(-5.0, 7.0, 801)
    oracle = sngd.stationary_density_1d(
        lambda u: 0.5 * u * u, lambda u: math.exp(2.0 * u), 1.0,
        sngd.DensityBias.jeffreys, grid)
    # normal(1, 1) by completing the square
    mean = float(np.trapezoid(oracle.density * oracle.grid, oracle.grid))
    assert mean == pytest.approx(1.0, abs=1e-6)

    samples = np.random.default_rng(5).normal(loc=1.0, size=200000)
    assert sngd.total_variation(list(samples), oracle) < 0.05
    assert sngd.make_toy_problem(toy).dim == 1


def test_reduction_lattice_full_batch():
    rng = sngd.Rng(13)
    data = sngd.generate_synthetic_logistic(60, 2, np.array([1.0, -0.5]), rng)
    model = sngd.Model(sngd.ModelSpec(sngd.ModelKind.logistic, 2, l2=0.1))
    cfg = sngd.SamplerConfig()
    cfg.rule = sngd.SamplerRule.sngd
    cfg.eps = 0.1
    cfg.batch_size = 60
    cfg.damping = 1e-4
    cfg.sample_steps = 20
    problem = sngd.make_problem(model, data, cfg)
    sngd_chain = sngd.run_chain(problem, cfg, np.zeros(2), seed=9)
    cfg.rule = sngd.SamplerRule.minibatch_ngd
    ngd_chain = sngd.run_chain(problem, cfg, np.zeros(2), seed=9)
    assert np.array_equal(sngd_chain.samples, ngd_chain.samples)


def test_evaluate_and_emit(tmp_path):
    rng = sngd.Rng(17)
    model = sngd.Model(sngd.ModelSpec(sngd.ModelKind.logistic, 2))
    data = sngd.generate_synthetic_logistic(50, 2, np.array([2.0, 0.0]), rng)
    probs = model.predict_batch(np.array([2.0, 0.0]), data.inputs)
    metrics = sngd.evaluate(probs, data.labels, model)
    assert 0.5 < metrics.accuracy <= 1.0

    cfg = sngd.ExperimentConfig()
    cfg.model = sngd.ModelSpec(sngd.ModelKind.logistic, 4)
    cfg.w_true = np.array([4.0, 0.0, 0.0, 0.0])
    cfg.n_train = 100
    cfg.n_test = 200
    cfg.sampler.eps = 0.1
    cfg.sampler.damping = 1e-4
    cfg.sampler.burn_in_steps = 50
    cfg.sampler.sample_steps = 50
    cfg.sweep_mode = sngd.SweepMode.ngd
    cfg.sweep_values = [1.0, 2.0]
    cfg.seed = 2
    cfg.workers = 2
    results = sngd.run_temperature_sweep(cfg)
    assert len(results) == 2
    out = tmp_path / "sweep.csv"
    sngd.emit(results, "csv", str(out))
    header = out.read_text().splitlines()[0]
    assert header.startswith("sweep_value,temperature,batch_size")


def test_error_types():
    bad = sngd.MetricMatrix(np.diag([1.0, -1.0]))
    assert not bad.factorizable()
    with pytest.raises(sngd.FactorizationError):
        bad.solve(np.ones(2))
    model = sngd.Model(sngd.ModelSpec(sngd.ModelKind.mlp, 3, 3, hidden_units=4))
    with pytest.raises(sngd.UnsupportedModelError):
        model.hessian_total(np.zeros(model.param_dim), sngd.Dataset(np.zeros((1, 3)), np.zeros(1, dtype=np.int32)))
