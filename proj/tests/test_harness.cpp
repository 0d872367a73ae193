#include <filesystem>
#include "sngd/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "support.hpp"

using namespace sngd;
using test_support::random_vector;

namespace {

ExperimentConfig tiny_logistic_config() {
  ExperimentConfig cfg;
  cfg.model = ModelSpec{ModelKind::logistic, 4, 2, 0, 0.0};
  cfg.w_true = Eigen::VectorXd::Zero(4);
  cfg.w_true[0] = 4.0;
  cfg.n_train = 120;
  cfg.n_test = 400;
  cfg.sampler.eps = 0.1;
  cfg.sampler.damping = 1e-4;
  cfg.sampler.burn_in_steps = 100;
  cfg.sampler.sample_steps = 100;
  cfg.seed = 3;
  cfg.workers = 2;
  return cfg;
}

}  // namespace

TEST_CASE("predict_batch matches per-row predict") {
  Rng rng(1);
  for (const ModelSpec spec :
       {ModelSpec{ModelKind::logistic, 3, 2, 0, 0.0}, ModelSpec{ModelKind::softmax, 3, 4, 0, 0.0},
        ModelSpec{ModelKind::mlp, 3, 4, 6, 0.0}}) {
    Model m(spec);
    const Eigen::VectorXd w = random_vector(m.param_dim(), rng);
    const Eigen::MatrixXd inputs = test_support::random_matrix(15, 3, rng);
    const Eigen::MatrixXd batched = m.predict_batch(w, inputs);
    for (int i = 0; i < 15; ++i) {
      CHECK((batched.row(i).transpose() - m.predict(w, inputs.row(i))).cwiseAbs().maxCoeff() <
            1e-12);
    }
  }
}

TEST_CASE("ensemble_predict") {
  Rng rng(2);
  Model m(ModelSpec{ModelKind::logistic, 3, 2, 0, 0.0});
  const Eigen::MatrixXd inputs = test_support::random_matrix(20, 3, rng);

  SUBCASE("single-sample chain equals plain prediction") {
    Chain chain;
    chain.samples = random_vector(3, rng).transpose();
    CHECK((ensemble_predict(chain, m, inputs) - m.predict_batch(chain.samples.row(0), inputs))
              .norm() == 0.0);
  }
  SUBCASE("chain of identical samples equals plain prediction") {
    Chain chain;
    const Eigen::VectorXd w = random_vector(3, rng);
    chain.samples.resize(5, 3);
    for (int i = 0; i < 5; ++i) chain.samples.row(i) = w;
    CHECK((ensemble_predict(chain, m, inputs) - m.predict_batch(w, inputs)).cwiseAbs().maxCoeff() <
          1e-15);
  }
  SUBCASE("empty chain rejected") {
    Chain chain;
    CHECK_THROWS_AS(ensemble_predict(chain, m, inputs), std::invalid_argument);
  }
}

TEST_CASE("evaluate") {
  Model m(ModelSpec{ModelKind::softmax, 2, 3, 0, 0.0});
  SUBCASE("perfect one-hot predictions") {
    Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(3, 3);
    Eigen::VectorXi labels(3);
    for (int i = 0; i < 3; ++i) {
      probs(i, i) = 1.0;
      labels[i] = i;
    }
    const EvalMetrics metrics = evaluate(probs, labels, m);
    CHECK(metrics.accuracy == 1.0);
    CHECK(metrics.cross_entropy < 1e-11);
  }
  SUBCASE("uniform predictions on balanced binary labels") {
    Model binary(ModelSpec{ModelKind::logistic, 2, 2, 0, 0.0});
    Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(10, 2, 0.5);
    Eigen::VectorXi labels(10);
    for (int i = 0; i < 10; ++i) labels[i] = i % 2 == 0 ? -1 : 1;
    const EvalMetrics metrics = evaluate(probs, labels, binary);
    CHECK(metrics.cross_entropy == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK(metrics.accuracy == 0.5);
  }
  SUBCASE("matches a per-example loop oracle") {
    Rng rng(3);
    Model binary(ModelSpec{ModelKind::logistic, 3, 2, 0, 0.0});
    const Eigen::VectorXd w = random_vector(3, rng);
    Dataset data = generate_synthetic_logistic(50, 3, random_vector(3, rng), rng);
    const Eigen::MatrixXd probs = binary.predict_batch(w, data.inputs);
    const EvalMetrics metrics = evaluate(probs, data.labels, binary);
    double hits = 0.0, nats = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int truth = binary.label_to_class(data.labels[i]);
      if ((probs(i, 1) > probs(i, 0) ? 1 : 0) == truth) hits += 1.0;
      nats -= std::log(std::clamp(probs(i, truth), 1e-12, 1.0 - 1e-12));
    }
    CHECK(metrics.accuracy == doctest::Approx(hits / 50.0).epsilon(1e-14));
    CHECK(metrics.cross_entropy == doctest::Approx(nats / 50.0).epsilon(1e-13));
  }
}

TEST_CASE("jensen inequality on a real chain") {
  ExperimentConfig cfg = tiny_logistic_config();
  const Task task = make_task(cfg);
  SamplerConfig chain_cfg = cfg.sampler;
  chain_cfg.rule = SamplerRule::precond_static;
  chain_cfg.temperature = 1.0;
  SamplingProblem problem = make_problem(task.model, task.train, chain_cfg, cfg.fisher);
  const Chain chain = run_chain(problem, chain_cfg, Eigen::VectorXd::Zero(4), Rng(9));
  const EnsembleResult r = evaluate_chain(chain, task.model, task.test);
  CHECK(r.ensemble_cross_entropy <= r.single_cross_entropy + 1e-12);
}

TEST_CASE("ellipse_polyline") {
  SUBCASE("identity covariance draws a circle of radius 3") {
    const Eigen::MatrixXd pts =
        ellipse_polyline(Eigen::Vector2d(1.0, -2.0), Eigen::Matrix2d::Identity(), 64);
    for (int i = 0; i < pts.rows(); ++i) {
      const double r = (pts.row(i).transpose() - Eigen::Vector2d(1.0, -2.0)).norm();
      CHECK(r == doctest::Approx(3.0).epsilon(1e-12));
    }
    CHECK((pts.row(0) - pts.row(63)).norm() < 1e-12);  // closed polyline
  }
  SUBCASE("anisotropic covariance reaches 3 sigma extremes") {
    Eigen::Matrix2d cov;
    cov << 4.0, 0.0, 0.0, 0.25;
    const Eigen::MatrixXd pts = ellipse_polyline(Eigen::Vector2d::Zero(), cov, 721);
    CHECK(pts.col(0).cwiseAbs().maxCoeff() == doctest::Approx(6.0).epsilon(1e-4));
    CHECK(pts.col(1).cwiseAbs().maxCoeff() == doctest::Approx(1.5).epsilon(1e-4));
  }
}

TEST_CASE("emit") {
  std::vector<EnsembleResult> results;
  EnsembleResult a;
  a.sweep_value = 0.5;
  a.temperature = 0.475;
  a.batch_size = 100;
  a.ensemble_accuracy = 0.9125;
  a.ensemble_cross_entropy = 0.21791517123456789;
  a.single_accuracy = 0.88;
  a.single_cross_entropy = 0.256789;
  EnsembleResult b = a;
  b.sweep_value = 2.0;
  b.diverged = true;
  results = {a, b};

  SUBCASE("empty results rejected before any file is created") {
    std::vector<EnsembleResult> empty;
    CHECK_THROWS_AS(emit(empty, "csv", "should_not_exist.csv"), std::invalid_argument);
    std::ifstream probe("should_not_exist.csv");
    CHECK_FALSE(probe.good());
  }
  SUBCASE("csv round trip is bit exact and the header is fixed") {
    emit(results, "csv", "emit_test.csv");
    std::ifstream in("emit_test.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "sweep_value,temperature,batch_size,ensemble_accuracy,ensemble_xent,"
          "single_accuracy,single_xent,diverged");
    const auto parsed = parse_emitted("csv", "emit_test.csv");
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].ensemble_cross_entropy == a.ensemble_cross_entropy);
    CHECK(parsed[1].sweep_value == b.sweep_value);
    CHECK(parsed[1].diverged);
    std::remove("emit_test.csv");
  }
  SUBCASE("json mirrors the csv columns") {
    emit(results, "json", "emit_test.json");
    const auto parsed = parse_emitted("json", "emit_test.json");
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].single_cross_entropy == a.single_cross_entropy);
    CHECK(parsed[0].batch_size == 100);
    CHECK(parsed[1].diverged);
    std::remove("emit_test.json");
  }
  SUBCASE("unknown format rejected") {
    CHECK_THROWS_AS(emit(results, "xml", "nope.xml"), std::invalid_argument);
  }
}

TEST_CASE("config file parsing") {
  {
    std::ofstream out("test_config.cfg");
    out << "# comment line\n"
        << "model.kind = mlp\n"
        << "model.input_dim = 10\n"
        << "model.hidden_units = 40\n"
        << "model.class_count = 10\n"
        << "sampler.eps = 0.125\n"
        << "sweep.values = 8, 16, 32\n"
        << "fisher.source = sampled   # trailing comment\n"
        << "run.seed = 42\n";
  }
  ExperimentConfig cfg;
  apply_config(cfg, read_key_value_file("test_config.cfg"));
  CHECK(cfg.model.kind == ModelKind::mlp);
  CHECK(cfg.model.hidden_units == 40);
  CHECK(cfg.sampler.eps == 0.125);
  CHECK(cfg.fisher.source == FisherSource::sampled_labels);
  CHECK(cfg.seed == 42);
  REQUIRE(cfg.sweep_values.size() == 3);
  CHECK(cfg.sweep_values[1] == 16.0);
  std::remove("test_config.cfg");

  SUBCASE("unknown keys rejected") {
    ExperimentConfig fresh;
    CHECK_THROWS_AS(apply_config(fresh, {{"sampler.momentum", "0.9"}}), std::invalid_argument);
  }
}

TEST_CASE("make_task determinism and teacher label noise") {
  ExperimentConfig cfg = tiny_logistic_config();
  const Task a = make_task(cfg);
  const Task b = make_task(cfg);
  CHECK(a.train.inputs == b.train.inputs);
  CHECK(a.train.labels == b.train.labels);
  CHECK(a.test.inputs == b.test.inputs);

  ExperimentConfig mlp_cfg;
  mlp_cfg.model = ModelSpec{ModelKind::mlp, 5, 3, 8, 0.0};
  mlp_cfg.n_train = 200;
  mlp_cfg.n_test = 50;
  mlp_cfg.teacher_gain = 3.0;
  mlp_cfg.seed = 7;
  const Task t = make_task(mlp_cfg);
  CHECK(t.train.labels.minCoeff() >= 0);
  CHECK(t.train.labels.maxCoeff() < 3);
  // all classes appear for a generic teacher
  Eigen::Vector3i counts = Eigen::Vector3i::Zero();
  for (int i = 0; i < 200; ++i) counts[t.train.labels[i]]++;
  CHECK(counts.minCoeff() > 0);
}

TEST_CASE("fast 1-d logistic problem matches the generic one") {
  Rng rng(11);
  Eigen::VectorXd w_true(1);
  w_true << 1.3;
  Dataset data = generate_synthetic_logistic(80, 1, w_true, rng);
  Model model(ModelSpec{ModelKind::logistic, 1, 2, 0, 0.0});
  SamplerConfig cfg;
  cfg.damping = 1e-3;
  SamplingProblem generic = make_problem(model, data, cfg, FisherOptions{});
  SamplingProblem fast = make_logistic_1d_problem(data, 1e-3);
  std::vector<int> batch = {3, 17, 42, 8};
  for (double u : {-0.7, 0.0, 0.9, 2.1}) {
    Eigen::VectorXd w(1);
    w << u;
    Rng r1(1), r2(1);
    CHECK(std::abs(generic.cost(w) - fast.cost(w)) < 1e-10);
    CHECK(std::abs(generic.mean_grad(w)[0] - fast.mean_grad(w)[0]) < 1e-13);
    CHECK(std::abs(generic.metric(w, r1).entries()(0, 0) - fast.metric(w, r2).entries()(0, 0)) <
          1e-13);
    CHECK(std::abs(generic.metric_derivatives(w, r1).per_coordinate[0](0, 0) -
                   fast.metric_derivatives(w, r2).per_coordinate[0](0, 0)) < 1e-13);
    CHECK(std::abs(generic.minibatch_grad(w, batch)[0] - fast.minibatch_grad(w, batch)[0]) <
          1e-13);
  }
}

TEST_CASE("parallel_for") {
  SUBCASE("results independent of worker count") {
    std::vector<double> one(40), four(40);
    parallel_for(40, 1, [&](int i) { one[i] = std::sqrt(i); });
    parallel_for(40, 4, [&](int i) { four[i] = std::sqrt(i); });
    CHECK(one == four);
  }
  SUBCASE("exceptions propagate") {
    CHECK_THROWS_AS(parallel_for(8, 2,
                                 [](int i) {
                                   if (i == 5) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
  }
}

TEST_CASE("temperature sweep reporting invariants") {
  ExperimentConfig cfg = tiny_logistic_config();
  cfg.sweep_mode = SweepMode::ngd;
  cfg.sweep_values = {1.0};
  const auto results = run_temperature_sweep(cfg);
  REQUIRE(results.size() == 1);
  const Task task = make_task(cfg);
  const int batch = batch_for_temperature(cfg.sampler.eps, task.train.size(), 1.0);
  CHECK(results[0].batch_size == batch);
  CHECK(results[0].temperature == temperature(cfg.sampler.eps, task.train.size(), batch));
  CHECK_FALSE(results[0].diverged);
  CHECK(results[0].ensemble_accuracy > 0.5);  // far better than chance on this task

  SUBCASE("permuting the sweep axis permutes results identically") {
    ExperimentConfig two = cfg;
    two.sweep_values = {0.5, 2.0};
    ExperimentConfig swapped = cfg;
    swapped.sweep_values = {2.0, 0.5};
    const auto ab = run_temperature_sweep(two);
    const auto ba = run_temperature_sweep(swapped);
    CHECK(ab[0].ensemble_cross_entropy == ba[1].ensemble_cross_entropy);
    CHECK(ab[1].ensemble_cross_entropy == ba[0].ensemble_cross_entropy);
    CHECK(ab[0].single_accuracy == ba[1].single_accuracy);
  }
  SUBCASE("bit-identical emitted files for identical config and seed") {
    const auto again = run_temperature_sweep(cfg);
    emit(results, "csv", "sweep_a.csv");
    emit(again, "csv", "sweep_b.csv");
    std::ifstream fa("sweep_a.csv"), fb("sweep_b.csv");
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
    std::remove("sweep_a.csv");
    std::remove("sweep_b.csv");
  }
}

TEST_CASE("figure1 writes scatter, ellipses and summary") {
  ExperimentConfig cfg;
  cfg.model = ModelSpec{ModelKind::logistic, 2, 2, 0, 0.0};
  cfg.w_true = Eigen::Vector2d(16.0, 0.0);
  cfg.n_train = 300;
  cfg.n_test = 10;
  cfg.sampler.eps = 0.1;
  cfg.sampler.temperature = 1.0;
  cfg.sampler.damping = 1e-4;
  cfg.sampler.burn_in_steps = 300;
  cfg.sampler.sample_steps = 300;
  cfg.seed = 5;
  cfg.workers = 2;
  cfg.out_dir = "fig1_test_out";
  const Figure1Result result = run_figure1(cfg, true);
  REQUIRE(result.variants.size() == 3);
  for (const auto& name :
       {"fig1a_paper", "fig1a_corrected", "fig1b_ngd"}) {
    std::ifstream samples(std::string("fig1_test_out/") + name + "_samples.csv");
    CHECK(samples.good());
    std::ifstream ellipse(std::string("fig1_test_out/") + name + "_ellipse_laplace.csv");
    CHECK(ellipse.good());
  }
  std::ifstream summary("fig1_test_out/figure1_summary.json");
  CHECK(summary.good());
  // short chains still land in the right neighborhood
  for (const auto& v : result.variants) {
    CHECK(v.distance.mean_mahalanobis < 3.0);
  }
  std::filesystem::remove_all("fig1_test_out");
}
