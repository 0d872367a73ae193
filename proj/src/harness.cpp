#include "sngd/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sngd/mnist.hpp"
#include "sngd/toys.hpp"

namespace sngd {

Eigen::MatrixXd ensemble_predict(const Chain& chain, const Model& model,
                                 const Eigen::MatrixXd& test_inputs) {
  if (chain.size() == 0) throw std::invalid_argument("ensemble_predict: empty chain");
  Eigen::MatrixXd mean =
      Eigen::MatrixXd::Zero(test_inputs.rows(), model.class_count());
  for (std::int64_t s = 0; s < chain.size(); ++s) {
    mean += model.predict_batch(chain.samples.row(s), test_inputs);
  }
  return mean / static_cast<double>(chain.size());
}

EvalMetrics evaluate(const Eigen::MatrixXd& probabilities, const Eigen::VectorXi& labels,
                     const Model& model) {
  if (probabilities.rows() != labels.size()) {
    throw std::invalid_argument("evaluate: row/label count mismatch");
  }
  if (probabilities.cols() != model.class_count()) {
    throw std::invalid_argument("evaluate: class count mismatch");
  }
  EvalMetrics metrics;
  const std::int64_t n = labels.size();
  std::int64_t hits = 0;
  double nats = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int truth = model.label_to_class(labels[i]);
    int argmax = 0;
    probabilities.row(i).maxCoeff(&argmax);
    if (argmax == truth) ++hits;
    const double p = std::clamp(probabilities(i, truth), 1e-12, 1.0 - 1e-12);
    nats -= std::log(p);
  }
  metrics.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  metrics.cross_entropy = nats / static_cast<double>(n);
  return metrics;
}

EnsembleResult evaluate_chain(const Chain& chain, const Model& model, const Dataset& test) {
  if (chain.size() == 0) throw std::invalid_argument("evaluate_chain: empty chain");
  EnsembleResult out;
  Eigen::MatrixXd mean_probs =
      Eigen::MatrixXd::Zero(test.inputs.rows(), model.class_count());
  double acc = 0.0, xent = 0.0;
  for (std::int64_t s = 0; s < chain.size(); ++s) {
    const Eigen::MatrixXd probs = model.predict_batch(chain.samples.row(s), test.inputs);
    mean_probs += probs;
    const EvalMetrics m = evaluate(probs, test.labels, model);
    acc += m.accuracy;
    xent += m.cross_entropy;
  }
  const double k = static_cast<double>(chain.size());
  mean_probs /= k;
  const EvalMetrics ens = evaluate(mean_probs, test.labels, model);
  out.ensemble_accuracy = ens.accuracy;
  out.ensemble_cross_entropy = ens.cross_entropy;
  out.single_accuracy = acc / k;
  out.single_cross_entropy = xent / k;
  out.temperature = chain.realized_temperature;
  return out;
}

namespace {

// Teacher parameters for synthetic softmax/mlp tasks. A non-positive gain
// draws every parameter from the model's own Gaussian prior N(0, 1/lambda),
// which makes T = 1 the Bayes-optimal sampling temperature by construction.
// A positive gain instead draws fan-in-scaled weights with zero biases,
// where the gain sets the label noise level.
Eigen::VectorXd teacher_parameters(const Model& model, double gain, Rng& rng) {
  const ModelSpec& spec = model.spec();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(model.param_dim());
  if (gain <= 0.0) {
    if (spec.l2 <= 0.0) {
      throw std::invalid_argument("prior-matched teacher requires model.l2 > 0");
    }
    const double scale = 1.0 / std::sqrt(spec.l2);
    for (int i = 0; i < w.size(); ++i) w[i] = scale * rng.normal();
    return w;
  }
  if (spec.kind == ModelKind::softmax) {
    const double scale = gain / std::sqrt(static_cast<double>(spec.input_dim));
    for (int i = 0; i < w.size(); ++i) w[i] = scale * rng.normal();
    return w;
  }
  const int h = spec.hidden_units, n = spec.input_dim, c = spec.class_count;
  const double s1 = gain * std::numbers::sqrt2 / std::sqrt(static_cast<double>(n));
  const double s2 = gain * std::numbers::sqrt2 / std::sqrt(static_cast<double>(h));
  for (int i = 0; i < h * n; ++i) w[i] = s1 * rng.normal();
  for (int i = 0; i < c * h; ++i) w[h * n + h + i] = s2 * rng.normal();
  return w;
}

// Small symmetric-breaking start for the MLP descent.
Eigen::VectorXd mlp_start(const Model& model, Rng& rng) {
  Eigen::VectorXd w(model.param_dim());
  for (int i = 0; i < w.size(); ++i) w[i] = 0.01 * rng.normal();
  return w;
}

}  // namespace

Task make_task(const ExperimentConfig& cfg) {
  Model model(cfg.model);
  const Rng base(cfg.seed);
  if (cfg.data_source == "synthetic") {
    Rng train_rng = base.split(1);
    Rng test_rng = base.split(2);
    if (cfg.model.kind == ModelKind::logistic) {
      if (cfg.w_true.size() != cfg.model.input_dim) {
        throw std::invalid_argument("make_task: w_true dim must match model.input_dim");
      }
      return Task{model, generate_synthetic_logistic(cfg.n_train, cfg.model.input_dim,
                                                     cfg.w_true, train_rng),
                  generate_synthetic_logistic(cfg.n_test, cfg.model.input_dim, cfg.w_true,
                                              test_rng)};
    }
    Rng teacher_rng = base.split(3);
    const Eigen::VectorXd w_teacher = teacher_parameters(model, cfg.teacher_gain, teacher_rng);
    return Task{model,
                generate_synthetic_classification(model, w_teacher, cfg.n_train, train_rng,
                                                  cfg.input_scale),
                generate_synthetic_classification(model, w_teacher, cfg.n_test, test_rng,
                                                  cfg.input_scale)};
  }
  if (cfg.data_source == "mnist") {
    // Both splits share the projection: the loader draws it from the rng
    // first, and both calls start from the same derived seed.
    Rng proj_a = base.split(4);
    Rng proj_b = base.split(4);
    Task task{model,
              load_mnist_projected(cfg.mnist_images, cfg.mnist_labels, cfg.projection_dim,
                                   cfg.n_train, proj_a),
              load_mnist_projected(cfg.mnist_test_images, cfg.mnist_test_labels,
                                   cfg.projection_dim, cfg.n_test, proj_b)};
    return task;
  }
  if (cfg.data_source == "file") {
    return Task{model, load_dataset(cfg.data_file), load_dataset(cfg.test_file)};
  }
  throw std::invalid_argument("make_task: unknown data source " + cfg.data_source);
}

Eigen::VectorXd initial_parameters(const Task& task, const ExperimentConfig& cfg, Rng rng) {
  if (task.model.spec().kind != ModelKind::mlp) {
    return Eigen::VectorXd::Zero(task.model.param_dim());
  }
  Eigen::VectorXd w = mlp_start(task.model, rng);
  if (cfg.init_descent_steps <= 0) return w;
  // Zero-temperature full-batch NGD with step backtracking; the plain update
  // can overshoot in the first iterations when the start is far from a
  // minimum.
  SamplerConfig descent = cfg.sampler;
  descent.temperature = 0.0;
  SamplingProblem problem = make_problem(task.model, task.train, descent, cfg.fisher);
  Rng descent_rng = rng.split(7);
  double cost = problem.cost(w);
  for (std::int64_t step = 0; step < cfg.init_descent_steps; ++step) {
    const Eigen::VectorXd g = problem.mean_grad(w);
    const MetricMatrix metric = problem.metric(w, descent_rng);
    const Eigen::VectorXd direction = metric.solve(g);
    double scale = cfg.sampler.eps;
    for (int backtrack = 0; backtrack < 30; ++backtrack) {
      const Eigen::VectorXd candidate = w - scale * direction;
      const double candidate_cost = problem.cost(candidate);
      if (candidate_cost <= cost) {
        w = candidate;
        cost = candidate_cost;
        break;
      }
      scale *= 0.5;
    }
  }
  return w;
}

Eigen::MatrixXd ellipse_polyline(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                 int n_points, double radius) {
  if (mean.size() != 2 || cov.rows() != 2 || cov.cols() != 2) {
    throw std::invalid_argument("ellipse_polyline: 2-d only");
  }
  const Eigen::MatrixXd l = MetricMatrix(cov).factor();
  Eigen::MatrixXd points(n_points, 2);
  for (int k = 0; k < n_points; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / (n_points - 1);
    Eigen::Vector2d unit(std::cos(angle), std::sin(angle));
    points.row(k) = (mean + radius * (l * unit)).transpose();
  }
  return points;
}

namespace {

void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& header,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << header << '\n' << std::setprecision(17);
  for (std::int64_t i = 0; i < m.rows(); ++i) {
    for (std::int64_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

}  // namespace

Figure1Result run_figure1(const ExperimentConfig& cfg, bool write_files) {
  const Task task = make_task(cfg);
  Figure1Result result;
  result.laplace_oracle = laplace(task.model, task.train, cfg.sampler.temperature);

  struct VariantSpec {
    const char* name;
    SamplerRule rule;
    bool minibatch;
  };
  const VariantSpec variants[] = {
      {"fig1a_paper", SamplerRule::precond_static, false},
      {"fig1a_corrected", SamplerRule::riemannian_jeffreys, false},
      {"fig1b_ngd", SamplerRule::minibatch_ngd, true},
  };

  result.variants.resize(3);
  const Rng base(cfg.seed);
  parallel_for(3, cfg.workers, [&](int i) {
    SamplerConfig chain_cfg = cfg.sampler;
    chain_cfg.rule = variants[i].rule;
    chain_cfg.refresh_metric = true;
    if (variants[i].minibatch) {
      chain_cfg.temperature = 0.0;
      if (chain_cfg.batch_size <= 0) {
        chain_cfg.batch_size = static_cast<int>(
            std::llround(chain_cfg.eps * static_cast<double>(task.train.size()) / 2.0));
      }
    } else {
      chain_cfg.batch_size = 0;
    }
    SamplingProblem problem = make_problem(task.model, task.train, chain_cfg, cfg.fisher);
    Figure1Variant& variant = result.variants[static_cast<std::size_t>(i)];
    variant.name = variants[i].name;
    variant.chain = run_chain(problem, chain_cfg,
                              Eigen::VectorXd::Zero(task.model.param_dim()),
                              base.split(10 + static_cast<std::uint64_t>(i)));
    variant.distance = gaussian_distance(variant.chain.sample_mean(),
                                         variant.chain.sample_covariance(),
                                         result.laplace_oracle);
  });

  if (write_files) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string prefix = cfg.out_dir + "/";
    nlohmann::json summary;
    summary["laplace_mode"] = {result.laplace_oracle.mode[0], result.laplace_oracle.mode[1]};
    for (const Figure1Variant& variant : result.variants) {
      write_matrix_csv(variant.chain.samples, "w0,w1", prefix + variant.name + "_samples.csv");
      write_matrix_csv(
          ellipse_polyline(result.laplace_oracle.mode, result.laplace_oracle.covariance.entries()),
          "w0,w1", prefix + variant.name + "_ellipse_laplace.csv");
      write_matrix_csv(
          ellipse_polyline(variant.chain.sample_mean(), variant.chain.sample_covariance()),
          "w0,w1", prefix + variant.name + "_ellipse_sample.csv");
      summary[variant.name] = {{"mean_mahalanobis", variant.distance.mean_mahalanobis},
                               {"cov_frobenius_rel", variant.distance.cov_frobenius_rel},
                               {"eig_ratio_max", variant.distance.eig_ratio_max}};
    }
    std::ofstream out(prefix + "figure1_summary.json");
    out << summary.dump(2) << '\n';
  }
  return result;
}

namespace {

EnsembleResult diverged_point(double sweep_value, double temp, int batch) {
  EnsembleResult r;
  r.sweep_value = sweep_value;
  r.temperature = temp;
  r.batch_size = batch;
  r.ensemble_accuracy = r.single_accuracy = std::numeric_limits<double>::quiet_NaN();
  r.ensemble_cross_entropy = r.single_cross_entropy =
      std::numeric_limits<double>::quiet_NaN();
  r.diverged = true;
  return r;
}

}  // namespace

std::vector<EnsembleResult> run_temperature_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep_values.empty()) {
    throw std::invalid_argument("run_temperature_sweep: empty sweep axis");
  }
  const Task task = make_task(cfg);
  const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(task.model.param_dim());
  std::vector<EnsembleResult> results(cfg.sweep_values.size());
  const Rng base(cfg.seed);
  parallel_for(static_cast<int>(cfg.sweep_values.size()), cfg.workers, [&](int i) {
    const double t = cfg.sweep_values[static_cast<std::size_t>(i)];
    SamplerConfig chain_cfg = cfg.sampler;
    int batch;
    double realized;
    if (cfg.sweep_mode == SweepMode::precond_langevin) {
      chain_cfg.rule = SamplerRule::precond_static;
      chain_cfg.refresh_metric = true;
      chain_cfg.temperature = t;
      batch = static_cast<int>(task.train.size());
      realized = t;
    } else {
      chain_cfg.rule = SamplerRule::minibatch_ngd;
      chain_cfg.temperature = 0.0;
      batch = batch_for_temperature(chain_cfg.eps, task.train.size(), t);
      chain_cfg.batch_size = batch;
      realized = temperature(chain_cfg.eps, task.train.size(), batch);
    }
    SamplingProblem problem = make_problem(task.model, task.train, chain_cfg, cfg.fisher);
    EnsembleResult point;
    // Seed streams key on the sweep value, so permuting the axis permutes
    // the results identically.
    const Rng chain_rng = base.split(0x7e4b5 ^ std::bit_cast<std::uint64_t>(t));
    try {
      const Chain chain = run_chain(problem, chain_cfg, w0, chain_rng);
      point = evaluate_chain(chain, task.model, task.test);
    } catch (const DivergenceError&) {
      point = diverged_point(t, realized, batch);
    }
    point.sweep_value = t;
    point.temperature = realized;
    point.batch_size = batch;
    results[static_cast<std::size_t>(i)] = point;
  });
  return results;
}

std::vector<EnsembleResult> run_batch_sweep(const ExperimentConfig& cfg) {
  if (cfg.sweep_values.empty()) {
    throw std::invalid_argument("run_batch_sweep: empty sweep axis");
  }
  const Task task = make_task(cfg);
  const Rng base(cfg.seed);
  // One shared zero-temperature descent initializes every sweep point.
  const Eigen::VectorXd w0 = initial_parameters(task, cfg, base.split(5));
  std::vector<EnsembleResult> results(cfg.sweep_values.size());
  parallel_for(static_cast<int>(cfg.sweep_values.size()), cfg.workers, [&](int i) {
    const int batch = static_cast<int>(cfg.sweep_values[static_cast<std::size_t>(i)]);
    SamplerConfig chain_cfg = cfg.sampler;
    chain_cfg.rule = SamplerRule::minibatch_ngd;
    chain_cfg.temperature = 0.0;
    chain_cfg.batch_size = batch;
    const double realized = temperature(chain_cfg.eps, task.train.size(), batch);
    SamplingProblem problem = make_problem(task.model, task.train, chain_cfg, cfg.fisher);
    EnsembleResult point;
    const Rng chain_rng = base.split(0x9b21f ^ static_cast<std::uint64_t>(batch));
    try {
      const Chain chain = run_chain(problem, chain_cfg, w0, chain_rng);
      point = evaluate_chain(chain, task.model, task.test);
    } catch (const DivergenceError&) {
      point = diverged_point(batch, realized, batch);
    }
    point.sweep_value = batch;
    point.temperature = realized;
    point.batch_size = batch;
    results[static_cast<std::size_t>(i)] = point;
  });
  return results;
}

SamplingProblem make_logistic_1d_problem(const Dataset& data, double damping) {
  if (data.input_dim() != 1) {
    throw std::invalid_argument("make_logistic_1d_problem: inputs must be 1-d");
  }
  const auto state = std::make_shared<std::pair<Eigen::ArrayXd, Eigen::ArrayXd>>(
      data.inputs.col(0).array(), data.labels.cast<double>().array());
  const double n = static_cast<double>(data.size());

  SamplingProblem p;
  p.dim = 1;
  p.data_size = data.size();
  p.cost = [state](const Eigen::VectorXd& w) {
    const Eigen::ArrayXd t = state->second * state->first * w[0];
    // softplus(t), split by sign for stability
    return (t.max(0.0) + (1.0 + (-t.abs()).exp()).log()).sum();
  };
  p.mean_grad = [state, n](const Eigen::VectorXd& w) {
    const Eigen::ArrayXd t = state->second * state->first * w[0];
    Eigen::VectorXd g(1);
    g[0] = (state->second * state->first / (1.0 + (-t).exp())).sum() / n;
    return g;
  };
  p.minibatch_grad = [state, n](const Eigen::VectorXd& w, std::span<const int> batch) {
    const Eigen::ArrayXd& bx = state->first;
    const Eigen::ArrayXd& by = state->second;
    double sum = 0.0;
    for (const int i : batch) {
      const double t = by[i] * bx[i] * w[0];
      sum += by[i] * bx[i] / (1.0 + std::exp(-t));
    }
    Eigen::VectorXd g(1);
    g[0] = sum / static_cast<double>(batch.size());
    return g;
  };
  p.metric = [state, n, damping](const Eigen::VectorXd& w, Rng&) {
    const Eigen::ArrayXd sig = (1.0 + (-state->first * w[0]).exp()).inverse();
    const double f = (sig * (1.0 - sig) * state->first.square()).sum() / n;
    return damp_to_factorizable(MetricMatrix((Eigen::MatrixXd(1, 1) << f).finished()),
                                damping);
  };
  p.metric_derivatives = [state, n](const Eigen::VectorXd& w, Rng&) {
    const Eigen::ArrayXd sig = (1.0 + (-state->first * w[0]).exp()).inverse();
    const double df =
        (sig * (1.0 - sig) * (1.0 - 2.0 * sig) * state->first.cube()).sum() / n;
    MetricDerivatives d;
    d.per_coordinate.push_back((Eigen::MatrixXd(1, 1) << df).finished());
    return d;
  };
  return p;
}

std::vector<FokkerPlanckEntry> run_fokker_planck_suite(const FokkerPlanckConfig& cfg) {
  struct Job {
    std::string system;
    SamplerRule rule;
    double eps;
  };
  std::vector<Job> jobs;
  for (const SamplerRule rule :
       {SamplerRule::riemannian_jeffreys, SamplerRule::riemannian_flat}) {
    jobs.push_back({"gaussian_flat", rule, cfg.eps_values.back()});
    jobs.push_back({"polynomial_metric", rule, cfg.eps_values.back()});
    for (const double eps : cfg.eps_values) jobs.push_back({"exp_metric", rule, eps});
  }
  jobs.push_back({"logistic_1d", SamplerRule::sngd, cfg.toy_eps});

  // Shared quadrature oracles.
  const Toy1D flat_toy = gaussian_toy();
  const Toy1D exp_toy = exp_metric_toy();
  const Toy1D poly_toy = polynomial_metric_toy();
  const DensityGrid normal01 = stationary_density_1d(flat_toy.cost, flat_toy.metric, 1.0,
                                                     DensityBias::flat, {-6.0, 6.0, 601});
  const DensityGrid normal11 = stationary_density_1d(exp_toy.cost, exp_toy.metric, 1.0,
                                                     DensityBias::jeffreys, {-5.0, 7.0, 601});
  const DensityGrid poly_jeffreys = stationary_density_1d(poly_toy.cost, poly_toy.metric, 1.0,
                                                          DensityBias::jeffreys, {-7.0, 7.0, 601});

  // 1-d logistic toy for the sngd stationary check.
  Rng data_rng = Rng(cfg.seed).split(77);
  Eigen::VectorXd w_true(1);
  w_true << 1.0;
  const Dataset toy_data =
      generate_synthetic_logistic(cfg.toy_data_size, 1, w_true, data_rng);
  const Model toy_model(ModelSpec{ModelKind::logistic, 1, 2, 0, 0.0});
  const Eigen::VectorXd w_star =
      minimize(toy_model, toy_data, Eigen::VectorXd::Zero(1));
  const double toy_t = temperature(cfg.toy_eps, toy_data.size(), cfg.toy_batch);
  const double f_star =
      fisher_exact(toy_model, w_star, toy_data.inputs).matrix.entries()(0, 0);
  const double toy_width =
      std::sqrt(toy_t / (static_cast<double>(toy_data.size()) * f_star));
  const DensityGrid toy_oracle = stationary_density_1d(
      [&](double u) {
        Eigen::VectorXd w(1);
        w[0] = u;
        return toy_model.total_cost(w, toy_data);
      },
      [&](double u) {
        Eigen::VectorXd w(1);
        w[0] = u;
        return fisher_exact(toy_model, w, toy_data.inputs).matrix.entries()(0, 0);
      },
      toy_t, DensityBias::jeffreys,
      {w_star[0] - 8.0 * toy_width, w_star[0] + 8.0 * toy_width, 601});

  std::vector<FokkerPlanckEntry> entries(jobs.size());
  const Rng base(cfg.seed);
  parallel_for(static_cast<int>(jobs.size()), 0, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    FokkerPlanckEntry entry;
    entry.system = job.system;
    entry.rule = to_string(job.rule);
    entry.eps = job.eps;
    SamplerConfig chain_cfg;
    chain_cfg.rule = job.rule;
    chain_cfg.eps = job.eps;
    Rng rng = base.split(300 + static_cast<std::uint64_t>(i));
    try {
      if (job.rule == SamplerRule::sngd) {
        chain_cfg.batch_size = cfg.toy_batch;
        chain_cfg.burn_in_steps = cfg.toy_steps / 10;
        chain_cfg.sample_steps = cfg.toy_steps;
        chain_cfg.damping = 0.0;
        entry.steps = cfg.toy_steps;
        SamplingProblem problem = make_logistic_1d_problem(toy_data, chain_cfg.damping);
        const Chain chain = run_chain(problem, chain_cfg, w_star, rng);
        entry.tv = total_variation(chain.component(0), toy_oracle);
      } else {
        chain_cfg.temperature = 1.0;
        chain_cfg.burn_in_steps = cfg.burn_in;
        chain_cfg.sample_steps = cfg.steps;
        entry.steps = cfg.steps;
        const bool jeffreys = job.rule == SamplerRule::riemannian_jeffreys;
        const Toy1D& toy = job.system == "exp_metric"
                               ? exp_toy
                               : (job.system == "polynomial_metric" ? poly_toy : flat_toy);
        const DensityGrid& oracle =
            job.system == "exp_metric" && jeffreys
                ? normal11
                : (job.system == "polynomial_metric" && jeffreys ? poly_jeffreys : normal01);
        SamplingProblem problem = make_toy_problem(toy, 0.0);
        Eigen::VectorXd start(1);
        start[0] = job.system == "exp_metric" && jeffreys ? 1.0 : 0.0;
        const Chain chain = run_chain(problem, chain_cfg, start, rng);
        entry.tv = total_variation(chain.component(0), oracle);
      }
    } catch (const DivergenceError&) {
      entry.diverged = true;
    }
    entries[static_cast<std::size_t>(i)] = entry;
  });
  return entries;
}

void emit(const std::vector<EnsembleResult>& results, const std::string& format,
          const std::string& path) {
  if (results.empty()) throw std::invalid_argument("emit: no results");
  if (format != "csv" && format != "json") {
    throw std::invalid_argument("emit: format must be csv or json");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit: cannot open " + path + " for writing");
  if (format == "csv") {
    out << "sweep_value,temperature,batch_size,ensemble_accuracy,ensemble_xent,"
           "single_accuracy,single_xent,diverged\n";
    out << std::setprecision(17);
    for (const EnsembleResult& r : results) {
      out << r.sweep_value << ',' << r.temperature << ',' << r.batch_size << ','
          << r.ensemble_accuracy << ',' << r.ensemble_cross_entropy << ','
          << r.single_accuracy << ',' << r.single_cross_entropy << ','
          << (r.diverged ? 1 : 0) << '\n';
    }
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const EnsembleResult& r : results) {
      rows.push_back({{"sweep_value", r.sweep_value},
                      {"temperature", r.temperature},
                      {"batch_size", r.batch_size},
                      {"ensemble_accuracy", r.ensemble_accuracy},
                      {"ensemble_xent", r.ensemble_cross_entropy},
                      {"single_accuracy", r.single_accuracy},
                      {"single_xent", r.single_cross_entropy},
                      {"diverged", r.diverged}});
    }
    out << rows.dump(2) << '\n';
  }
  if (!out) throw std::runtime_error("emit: write to " + path + " failed");
}

std::vector<EnsembleResult> parse_emitted(const std::string& format, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<EnsembleResult> results;
  if (format == "csv") {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      EnsembleResult r;
      int diverged;
      ss >> r.sweep_value >> r.temperature >> r.batch_size >> r.ensemble_accuracy >>
          r.ensemble_cross_entropy >> r.single_accuracy >> r.single_cross_entropy >> diverged;
      if (ss.fail()) throw std::runtime_error(path + ": malformed row");
      r.diverged = diverged != 0;
      results.push_back(r);
    }
    return results;
  }
  nlohmann::json rows;
  in >> rows;
  for (const auto& row : rows) {
    EnsembleResult r;
    r.sweep_value = row.at("sweep_value").get<double>();
    r.temperature = row.at("temperature").get<double>();
    r.batch_size = row.at("batch_size").get<int>();
    r.ensemble_accuracy = row.at("ensemble_accuracy").get<double>();
    r.ensemble_cross_entropy = row.at("ensemble_xent").get<double>();
    r.single_accuracy = row.at("single_accuracy").get<double>();
    r.single_cross_entropy = row.at("single_xent").get<double>();
    r.diverged = row.at("diverged").get<bool>();
    results.push_back(r);
  }
  return results;
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<double> parse_double_list(const std::string& value) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(std::stod(trim(item)));
  }
  return out;
}

bool parse_bool(const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("expected boolean, got " + value);
}

}  // namespace

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 'key = value'");
    }
    kv[trim(stripped.substr(0, eq))] = trim(stripped.substr(eq + 1));
  }
  return kv;
}

void apply_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "model.kind") {
      if (value == "logistic") cfg.model.kind = ModelKind::logistic;
      else if (value == "softmax") cfg.model.kind = ModelKind::softmax;
      else if (value == "mlp") cfg.model.kind = ModelKind::mlp;
      else throw std::invalid_argument("unknown model.kind " + value);
    } else if (key == "model.input_dim") cfg.model.input_dim = std::stoi(value);
    else if (key == "model.class_count") cfg.model.class_count = std::stoi(value);
    else if (key == "model.hidden_units") cfg.model.hidden_units = std::stoi(value);
    else if (key == "model.l2") cfg.model.l2 = std::stod(value);
    else if (key == "data.source") cfg.data_source = value;
    else if (key == "data.n_train") cfg.n_train = std::stoll(value);
    else if (key == "data.n_test") cfg.n_test = std::stoll(value);
    else if (key == "data.w_true") {
      const std::vector<double> values = parse_double_list(value);
      cfg.w_true = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                     static_cast<std::int64_t>(values.size()));
    } else if (key == "data.teacher_gain") cfg.teacher_gain = std::stod(value);
    else if (key == "data.input_scale") cfg.input_scale = std::stod(value);
    else if (key == "data.projection_dim") cfg.projection_dim = std::stoi(value);
    else if (key == "data.mnist_images") cfg.mnist_images = value;
    else if (key == "data.mnist_labels") cfg.mnist_labels = value;
    else if (key == "data.mnist_test_images") cfg.mnist_test_images = value;
    else if (key == "data.mnist_test_labels") cfg.mnist_test_labels = value;
    else if (key == "data.file") cfg.data_file = value;
    else if (key == "data.test_file") cfg.test_file = value;
    else if (key == "sampler.rule") cfg.sampler.rule = rule_from_string(value);
    else if (key == "sampler.eps") cfg.sampler.eps = std::stod(value);
    else if (key == "sampler.temperature") cfg.sampler.temperature = std::stod(value);
    else if (key == "sampler.batch_size") cfg.sampler.batch_size = std::stoi(value);
    else if (key == "sampler.damping") cfg.sampler.damping = std::stod(value);
    else if (key == "sampler.burn_in_steps") cfg.sampler.burn_in_steps = std::stoll(value);
    else if (key == "sampler.sample_steps") cfg.sampler.sample_steps = std::stoll(value);
    else if (key == "sampler.thinning") cfg.sampler.thinning = std::stoll(value);
    else if (key == "sampler.refresh_metric") cfg.sampler.refresh_metric = parse_bool(value);
    else if (key == "fisher.source") {
      if (value == "exact") cfg.fisher.source = FisherSource::exact_expectation;
      else if (value == "sampled") cfg.fisher.source = FisherSource::sampled_labels;
      else if (value == "empirical") cfg.fisher.source = FisherSource::empirical;
      else throw std::invalid_argument("unknown fisher.source " + value);
    } else if (key == "fisher.derivative_mode") {
      if (value == "analytic") cfg.fisher.derivative_mode = DerivativeMode::analytic;
      else if (value == "finite_difference")
        cfg.fisher.derivative_mode = DerivativeMode::finite_difference;
      else throw std::invalid_argument("unknown fisher.derivative_mode " + value);
    } else if (key == "fisher.fd_step") cfg.fisher.fd_step = std::stod(value);
    else if (key == "fisher.ma_smoothing") cfg.fisher.ma_smoothing = std::stod(value);
    else if (key == "fisher.estimation_batch") cfg.fisher.estimation_batch = std::stoi(value);
    else if (key == "sweep.mode") {
      if (value == "precond_langevin") cfg.sweep_mode = SweepMode::precond_langevin;
      else if (value == "ngd") cfg.sweep_mode = SweepMode::ngd;
      else throw std::invalid_argument("unknown sweep.mode " + value);
    } else if (key == "sweep.values") cfg.sweep_values = parse_double_list(value);
    else if (key == "sweep.seeds") cfg.sweep_seeds = std::stoi(value);
    else if (key == "init.descent_steps") cfg.init_descent_steps = std::stoll(value);
    else if (key == "run.seed") cfg.seed = std::stoull(value);
    else if (key == "run.out_dir") cfg.out_dir = value;
    else if (key == "run.format") cfg.format = value;
    else if (key == "run.workers") cfg.workers = std::stoi(value);
    else throw std::invalid_argument("unknown config key: " + key);
  }
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int pool = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
  pool = std::max(1, std::min(pool, n));
  if (pool == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(pool));
  for (int t = 0; t < pool; ++t) {
    threads.emplace_back([&, t]() {
      for (int i = t; i < n; i += pool) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : threads) th.join();
  for (const std::exception_ptr& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace sngd
