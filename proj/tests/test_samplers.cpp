#include "sngd/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "support.hpp"

using namespace sngd;
using test_support::random_spd;
using test_support::random_vector;

namespace {

// N = 1 quadratic target 1/2 (w - mu)^T H (w - mu) with a constant metric.
SamplingProblem quadratic_problem(const Eigen::VectorXd& mu, const Eigen::MatrixXd& h,
                                  const Eigen::MatrixXd& metric, double damping = 0.0) {
  SamplingProblem p;
  p.dim = static_cast<int>(mu.size());
  p.data_size = 1;
  p.cost = [mu, h](const Eigen::VectorXd& w) {
    return 0.5 * (w - mu).dot(h * (w - mu));
  };
  p.mean_grad = [mu, h](const Eigen::VectorXd& w) { return Eigen::VectorXd(h * (w - mu)); };
  p.metric = [metric, damping](const Eigen::VectorXd&, Rng&) {
    return damp_to_factorizable(MetricMatrix(metric), damping);
  };
  p.metric_derivatives = [](const Eigen::VectorXd& w, Rng&) {
    MetricDerivatives d;
    for (int j = 0; j < w.size(); ++j) {
      d.per_coordinate.push_back(Eigen::MatrixXd::Zero(w.size(), w.size()));
    }
    return d;
  };
  return p;
}

SamplingProblem logistic_problem(const Model& model, const Dataset& data, double damping,
                                 FisherOptions opts = {}) {
  SamplerConfig cfg;
  cfg.damping = damping;
  return make_problem(model, data, cfg, opts);
}

}  // namespace

TEST_CASE("temperature formula") {
  CHECK(temperature(0.1, 1000, 50) == 0.95);
  CHECK(temperature(0.1, 1000, 1000) == 0.0);
  CHECK(temperature(0.125, 1024, 64) == 0.9375);
  CHECK_THROWS_AS(temperature(0.1, 100, 101), std::invalid_argument);
  CHECK_THROWS_AS(temperature(0.1, 100, 0), std::invalid_argument);
}

TEST_CASE("batch_for_temperature") {
  CHECK(batch_for_temperature(0.125, 1024, 1.0) == 60);
  CHECK(batch_for_temperature(0.1, 1000, 1e-14) == 1000);
  CHECK(batch_for_temperature(0.1, 1000, 1e6) == 1);

  SUBCASE("round trip within one-unit batch sensitivity") {
    for (double t : {0.125, 0.5, 1.0, 2.0, 8.0}) {
      const int b = batch_for_temperature(0.1, 1000, t);
      const double realized = temperature(0.1, 1000, b);
      double sensitivity = 0.0;
      if (b > 1) sensitivity = std::abs(temperature(0.1, 1000, b - 1) - realized);
      if (b < 1000) {
        sensitivity = std::max(sensitivity, std::abs(temperature(0.1, 1000, b + 1) - realized));
      }
      CHECK(std::abs(realized - t) <= sensitivity);
    }
  }
}

TEST_CASE("sngd correction prefactor equals eps T / N algebraically") {
  for (const auto& [eps, n, b] : {std::tuple{0.1, std::int64_t(1000), 50},
                                  std::tuple{0.125, std::int64_t(1024), 64},
                                  std::tuple{0.05, std::int64_t(4096), 256},
                                  std::tuple{1.0 / 3.0, std::int64_t(977), 13}}) {
    const double direct = eps * eps / (2.0 * b) * (1.0 - static_cast<double>(b) / n);
    const double via_temperature = eps * temperature(eps, n, b) / static_cast<double>(n);
    CHECK(std::abs(direct - via_temperature) <= 1e-15 * direct);
  }
}

TEST_CASE("draw_minibatch") {
  SUBCASE("full batch is the whole dataset") {
    Rng rng(1);
    Minibatch batch = draw_minibatch(12, 12, rng);
    std::set<int> seen(batch.indices.begin(), batch.indices.end());
    CHECK(seen.size() == 12);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 11);
  }
  SUBCASE("no duplicate indices, correct size") {
    Rng rng(2);
    std::vector<int> pool;
    for (int t = 0; t < 200; ++t) {
      const auto batch = draw_minibatch(pool, 50, 7, rng);
      std::set<int> seen(batch.begin(), batch.end());
      CHECK(seen.size() == 7);
      CHECK(*seen.begin() >= 0);
      CHECK(*seen.rbegin() < 50);
    }
  }
  SUBCASE("inclusion frequency approaches B/N") {
    Rng rng(3);
    const int n = 20, b = 5, draws = 10000;
    std::vector<int> pool;
    std::vector<int> counts(n, 0);
    for (int t = 0; t < draws; ++t) {
      for (const int idx : draw_minibatch(pool, n, b, rng)) ++counts[idx];
    }
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(counts[i] / double(draws) - 0.25) < 0.02);
    }
  }
}

TEST_CASE("gradient_noise vanishes at full batch") {
  Rng rng(4);
  Model m(ModelSpec{ModelKind::logistic, 3, 2, 0, 0.4});
  Dataset data = generate_synthetic_logistic(30, 3, random_vector(3, rng), rng);
  SamplingProblem p = logistic_problem(m, data, 1e-6);
  std::vector<int> all(30);
  for (int i = 0; i < 30; ++i) all[i] = i;
  const GradientNoise beta =
      gradient_noise(p, random_vector(3, rng), std::span<const int>(all));
  CHECK(beta.vector.norm() == 0.0);
}

TEST_CASE("step_langevin") {
  Rng rng(5);
  const Eigen::VectorXd mu = random_vector(2, rng);
  SamplingProblem p = quadratic_problem(mu, random_spd(2, rng),
                                        Eigen::MatrixXd::Identity(2, 2));
  SamplerConfig cfg;
  cfg.rule = SamplerRule::langevin;
  cfg.eps = 0.05;

  SUBCASE("zero temperature is plain gradient descent") {
    cfg.temperature = 0.0;
    const Eigen::VectorXd w = random_vector(2, rng);
    Rng step_rng(6);
    const Eigen::VectorXd next = step_langevin(p, w, cfg, step_rng);
    CHECK((next - (w - cfg.eps * p.mean_grad(w))).norm() == 0.0);
  }
  SUBCASE("zero gradient and zero temperature is a fixed point") {
    cfg.temperature = 0.0;
    Rng step_rng(7);
    CHECK(step_langevin(p, mu, cfg, step_rng) == mu);
  }
}

TEST_CASE("reduction lattice") {
  Rng rng(8);
  Model m(ModelSpec{ModelKind::logistic, 3, 2, 0, 0.2});
  Dataset data = generate_synthetic_logistic(40, 3, random_vector(3, rng), rng);
  const Eigen::VectorXd w = 0.3 * random_vector(3, rng);

  SUBCASE("precond_static with identity metric equals langevin") {
    SamplingProblem p = logistic_problem(m, data, 0.0);
    SamplerConfig cfg;
    cfg.eps = 0.1;
    cfg.temperature = 1.0;
    MetricMatrix identity(Eigen::MatrixXd::Identity(3, 3));
    Rng a(9), b(9);
    const Eigen::VectorXd via_static = step_precond_static(p, w, identity, cfg, a);
    const Eigen::VectorXd via_langevin = step_langevin(p, w, cfg, b);
    CHECK(via_static == via_langevin);
  }
  SUBCASE("riemannian with constant metric equals precond_static") {
    Rng mrng(10);
    const Eigen::MatrixXd g = random_spd(2, mrng);
    const Eigen::VectorXd mu = random_vector(2, mrng);
    SamplingProblem p = quadratic_problem(mu, random_spd(2, mrng), g);
    SamplerConfig cfg;
    cfg.eps = 0.05;
    cfg.temperature = 0.7;
    const Eigen::VectorXd w0 = random_vector(2, mrng);
    const MetricMatrix frozen = damp_to_factorizable(MetricMatrix(g), 0.0);
    for (auto bias : {CorrectionBias::jeffreys, CorrectionBias::flat, CorrectionBias::none}) {
      Rng a(11), b(11);
      const Eigen::VectorXd via_riemannian = step_riemannian(p, w0, bias, cfg, a);
      const Eigen::VectorXd via_static = step_precond_static(p, w0, frozen, cfg, b);
      CHECK(via_riemannian == via_static);
    }
  }
  SUBCASE("full-batch sngd equals full-batch minibatch NGD equals NGD") {
    SamplingProblem p = logistic_problem(m, data, 1e-4);
    SamplerConfig cfg;
    cfg.eps = 0.1;
    cfg.batch_size = static_cast<int>(data.size());
    Rng a(12), b(12), c(12);
    const Eigen::VectorXd via_sngd = step_sngd(p, w, cfg, a);
    const Eigen::VectorXd via_mb = step_minibatch_ngd(p, w, cfg, b);
    // Hand-rolled full-batch NGD step as the third leg.
    const MetricMatrix g = p.metric(w, c);
    const Eigen::VectorXd manual = w - cfg.eps * g.solve(p.mean_grad(w));
    CHECK(via_sngd == via_mb);
    CHECK(via_mb == manual);
  }
}

TEST_CASE("sngd correction shrinks as eps^2 at fixed batch") {
  Rng rng(13);
  Model m(ModelSpec{ModelKind::logistic, 2, 2, 0, 0.1});
  Dataset data = generate_synthetic_logistic(60, 2, random_vector(2, rng), rng);
  SamplingProblem p = logistic_problem(m, data, 1e-4);
  const Eigen::VectorXd w = 0.2 * random_vector(2, rng);
  const auto correction_norm = [&](double eps) {
    SamplerConfig cfg;
    cfg.eps = eps;
    cfg.batch_size = 15;
    Rng a(14), b(14);  // shared seeds: identical batches and metrics
    const Eigen::VectorXd with_corr = step_sngd(p, w, cfg, a);
    const Eigen::VectorXd without = step_minibatch_ngd(p, w, cfg, b);
    // The step difference is exactly the correction term, but we must also
    // remove the O(eps) gradient part; note both steps share it.
    return (with_corr - without).norm();
  };
  const double at_eps = correction_norm(0.1);
  const double at_half = correction_norm(0.05);
  CHECK(at_eps / at_half == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("minibatch NGD is unbiased for the full-batch step") {
  Rng rng(15);
  Model m(ModelSpec{ModelKind::logistic, 2, 2, 0, 0.3});
  Dataset data = generate_synthetic_logistic(200, 2, random_vector(2, rng), rng);
  SamplingProblem p = logistic_problem(m, data, 1e-6);
  const Eigen::VectorXd w = 0.4 * random_vector(2, rng);
  SamplerConfig cfg;
  cfg.eps = 0.1;
  cfg.batch_size = 20;

  Eigen::VectorXd mean_step = Eigen::VectorXd::Zero(2);
  const int reps = 4000;
  Rng step_rng(16);
  std::vector<int> pool;
  for (int t = 0; t < reps; ++t) {
    mean_step += step_minibatch_ngd(p, w, cfg, step_rng, nullptr, &pool) - w;
  }
  mean_step /= reps;
  cfg.batch_size = static_cast<int>(data.size());
  Rng full_rng(17);
  const Eigen::VectorXd full_step = step_minibatch_ngd(p, w, cfg, full_rng) - w;
  CHECK((mean_step - full_step).norm() < 0.02 * full_step.norm());
}

TEST_CASE("run_chain") {
  Rng rng(18);
  const Eigen::VectorXd mu = random_vector(2, rng);
  const Eigen::MatrixXd h = random_spd(2, rng);
  SamplingProblem p = quadratic_problem(mu, h, h);

  SUBCASE("zero sample steps give an empty chain") {
    SamplerConfig cfg;
    cfg.rule = SamplerRule::precond_static;
    cfg.eps = 0.05;
    cfg.temperature = 1.0;
    cfg.burn_in_steps = 10;
    cfg.sample_steps = 0;
    const Chain chain = run_chain(p, cfg, mu, Rng(19));
    CHECK(chain.size() == 0);
  }
  SUBCASE("bit-identical chains under a shared seed") {
    SamplerConfig cfg;
    cfg.rule = SamplerRule::riemannian_flat;
    cfg.eps = 0.02;
    cfg.temperature = 1.0;
    cfg.burn_in_steps = 50;
    cfg.sample_steps = 100;
    const Chain a = run_chain(p, cfg, mu, Rng(20));
    const Chain b = run_chain(p, cfg, mu, Rng(20));
    CHECK(a.samples == b.samples);
    CHECK(a.grad_norms == b.grad_norms);
  }
  SUBCASE("thinning keeps floor(sample_steps / thinning) samples") {
    SamplerConfig cfg;
    cfg.rule = SamplerRule::langevin;
    cfg.eps = 0.01;
    cfg.temperature = 1.0;
    cfg.sample_steps = 103;
    cfg.thinning = 10;
    const Chain chain = run_chain(p, cfg, mu, Rng(21));
    CHECK(chain.size() == 10);
    CHECK(chain.grad_norms.size() == 10);
  }
  SUBCASE("divergence guard reports the step") {
    SamplerConfig cfg;
    cfg.rule = SamplerRule::langevin;
    cfg.eps = 3.0;  // unstable for this curvature
    cfg.temperature = 0.0;
    cfg.sample_steps = 500;
    Eigen::VectorXd far = mu;
    far.array() += 100.0;
    try {
      run_chain(p, cfg, far, Rng(22));
      FAIL("expected divergence");
    } catch (const DivergenceError& err) {
      CHECK(err.step >= 0);
      CHECK(err.step < 500);
    }
  }
  SUBCASE("frozen metric precond_static consumes the metric once") {
    SamplerConfig cfg;
    cfg.rule = SamplerRule::precond_static;
    cfg.refresh_metric = false;
    cfg.eps = 0.05;
    cfg.temperature = 1.0;
    cfg.sample_steps = 50;
    int metric_calls = 0;
    SamplingProblem counted = p;
    counted.metric = [&metric_calls, &p](const Eigen::VectorXd& w, Rng& r) {
      ++metric_calls;
      return p.metric(w, r);
    };
    (void)run_chain(counted, cfg, mu, Rng(23));
    CHECK(metric_calls == 1);
  }
}

TEST_CASE("chain serialization round trip") {
  Rng rng(24);
  const Eigen::VectorXd mu = random_vector(3, rng);
  const Eigen::MatrixXd h = random_spd(3, rng);
  SamplingProblem p = quadratic_problem(mu, h, h);
  SamplerConfig cfg;
  cfg.rule = SamplerRule::precond_static;
  cfg.eps = 0.05;
  cfg.temperature = 1.0;
  cfg.burn_in_steps = 20;
  cfg.sample_steps = 40;
  const Chain chain = run_chain(p, cfg, mu, Rng(25));
  const ModelSpec spec{ModelKind::logistic, 3, 2, 0, 0.0};
  save_chain(chain, cfg, model_spec_hash(spec), "chain_roundtrip.txt");
  const Chain loaded = load_chain("chain_roundtrip.txt");
  CHECK(loaded.samples == chain.samples);
  CHECK(loaded.seed == chain.seed);
  CHECK(loaded.realized_temperature == chain.realized_temperature);
  std::remove("chain_roundtrip.txt");
  std::remove("chain_roundtrip.txt.diag.jsonl");

  CHECK(model_spec_hash(spec) == model_spec_hash(spec));
  CHECK(model_spec_hash(spec) != model_spec_hash(ModelSpec{ModelKind::logistic, 4, 2, 0, 0.0}));
}

TEST_CASE("rule names round trip") {
  for (auto rule : {SamplerRule::langevin, SamplerRule::precond_static,
                    SamplerRule::riemannian_jeffreys, SamplerRule::riemannian_flat,
                    SamplerRule::minibatch_ngd, SamplerRule::sngd}) {
    CHECK(rule_from_string(to_string(rule)) == rule);
  }
  CHECK_THROWS_AS(rule_from_string("adam"), std::invalid_argument);
}
