#include "sngd/samplers.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace sngd {

double temperature(double eps, std::int64_t data_size, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("temperature: batch size must be >= 1");
  if (batch_size > data_size) {
    throw std::invalid_argument("temperature: batch size " + std::to_string(batch_size) +
                                " exceeds data size " + std::to_string(data_size));
  }
  const double n = static_cast<double>(data_size);
  const double b = static_cast<double>(batch_size);
  return eps * n / (2.0 * b) * (1.0 - b / n);
}

int batch_for_temperature(double eps, std::int64_t data_size, double t) {
  if (t < 0.0) throw std::invalid_argument("batch_for_temperature: T must be >= 0");
  const double n = static_cast<double>(data_size);
  const double raw = eps * n / (2.0 * t + eps);
  const auto rounded = static_cast<std::int64_t>(std::llround(raw));
  return static_cast<int>(std::clamp<std::int64_t>(rounded, 1, data_size));
}

std::span<const int> draw_minibatch(std::vector<int>& pool, std::int64_t data_size,
                                    int batch_size, Rng& rng) {
  if (batch_size < 1 || batch_size > data_size) {
    throw std::invalid_argument("draw_minibatch: need 1 <= B <= N");
  }
  if (pool.size() != static_cast<std::size_t>(data_size)) {
    pool.resize(static_cast<std::size_t>(data_size));
    std::iota(pool.begin(), pool.end(), 0);
  }
  // Partial Fisher-Yates; any starting permutation yields a uniform ordered
  // B-subset, so the pool can persist across draws.
  const auto n = static_cast<std::uint64_t>(data_size);
  for (int i = 0; i < batch_size; ++i) {
    const auto j = static_cast<std::size_t>(i + rng.uniform_int(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  return {pool.data(), static_cast<std::size_t>(batch_size)};
}

Minibatch draw_minibatch(std::int64_t data_size, int batch_size, Rng& rng) {
  std::vector<int> pool;
  const auto selected = draw_minibatch(pool, data_size, batch_size, rng);
  Minibatch batch;
  batch.indices.assign(selected.begin(), selected.end());
  return batch;
}

GradientNoise gradient_noise(const SamplingProblem& problem, const Eigen::VectorXd& w,
                             std::span<const int> batch) {
  GradientNoise noise;
  noise.vector = problem.minibatch_grad(w, batch) - problem.mean_grad(w);
  return noise;
}

namespace {

// Shared state behind the provider lambdas of a model-backed problem.
struct FisherProviderState {
  Model model;
  const Dataset* data;
  FisherOptions opts;
  double damping;
  FisherMovingAverage ma;
  std::vector<int> estimation_pool;

  FisherEstimate estimate(const Eigen::VectorXd& w, const Eigen::MatrixXd& inputs, Rng& rng) {
    switch (opts.source) {
      case FisherSource::exact_expectation:
        return fisher_exact(model, w, inputs);
      case FisherSource::sampled_labels:
        return fisher_sampled(model, w, inputs, rng);
      case FisherSource::empirical:
        // Only meaningful over the full dataset, where labels line up.
        return fisher_empirical(model, w, *data);
    }
    throw std::logic_error("unreachable");
  }

  Eigen::MatrixXd estimation_inputs(Rng& rng) {
    const std::int64_t n = data->size();
    if (opts.estimation_batch <= 0 || opts.estimation_batch >= n) return data->inputs;
    const auto subset = draw_minibatch(estimation_pool, n, opts.estimation_batch, rng);
    Eigen::MatrixXd sub(opts.estimation_batch, data->input_dim());
    for (int i = 0; i < opts.estimation_batch; ++i) sub.row(i) = data->inputs.row(subset[i]);
    return sub;
  }

  MetricMatrix metric(const Eigen::VectorXd& w, Rng& rng) {
    const Eigen::MatrixXd inputs = estimation_inputs(rng);
    FisherEstimate raw = estimate(w, inputs, rng);
    if (opts.ma_smoothing > 0.0) {
      ma.smoothing = opts.ma_smoothing;
      ma = moving_average_update(ma, raw);
      raw = ma.current;
    }
    return damp_to_factorizable(raw.matrix, damping);
  }

  MetricDerivatives derivatives(const Eigen::VectorXd& w, Rng& rng) {
    if (opts.derivative_mode == DerivativeMode::analytic) {
      return fisher_derivatives(model, w, data->inputs, DerivativeMode::analytic);
    }
    // Frozen label seed: both sides of each difference quotient see the same
    // sampled labels, keeping the quotient free of Monte Carlo noise.
    const std::uint64_t frozen_seed = rng.engine()();
    const Eigen::MatrixXd inputs = data->inputs;
    return matrix_fd_derivatives(
        [&](const Eigen::VectorXd& p) {
          Rng frozen(frozen_seed);
          Eigen::MatrixXd in = inputs;
          return estimate(p, in, frozen).matrix.entries();
        },
        w, opts.fd_step);
  }
};

}  // namespace

SamplingProblem make_problem(const Model& model, const Dataset& data,
                             const SamplerConfig& cfg, const FisherOptions& fisher) {
  auto state = std::make_shared<FisherProviderState>(
      FisherProviderState{model, &data, fisher, cfg.damping, {}, {}});
  SamplingProblem problem;
  problem.dim = model.param_dim();
  problem.data_size = data.size();
  const double n = static_cast<double>(data.size());
  problem.cost = [state](const Eigen::VectorXd& w) {
    return state->model.total_cost(w, *state->data);
  };
  auto mean_grad = [state, n](const Eigen::VectorXd& w) {
    return Eigen::VectorXd(state->model.grad_total(w, *state->data) / n);
  };
  problem.mean_grad = mean_grad;
  problem.minibatch_grad = [state, n, mean_grad](const Eigen::VectorXd& w,
                                                 std::span<const int> batch) {
    if (batch.size() == static_cast<std::size_t>(state->data->size())) {
      return mean_grad(w);  // exactly the full-batch mean, beta = 0
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(state->model.param_dim());
    Eigen::VectorXd buffer(state->model.param_dim());
    for (const int idx : batch) {
      state->model.grad_for_class_into(w, state->data->inputs.row(idx),
                                       state->model.label_to_class(state->data->labels[idx]),
                                       buffer);
      sum += buffer;
    }
    sum /= static_cast<double>(batch.size());
    sum += (state->model.spec().l2 / n) * w;
    return sum;
  };
  problem.metric = [state](const Eigen::VectorXd& w, Rng& rng) {
    return state->metric(w, rng);
  };
  problem.metric_derivatives = [state](const Eigen::VectorXd& w, Rng& rng) {
    return state->derivatives(w, rng);
  };
  return problem;
}

SamplingProblem make_toy_problem(const Toy1D& toy, double damping) {
  SamplingProblem problem;
  problem.dim = 1;
  problem.data_size = 1;
  problem.cost = [toy](const Eigen::VectorXd& w) { return toy.cost(w[0]); };
  problem.mean_grad = [toy](const Eigen::VectorXd& w) {
    Eigen::VectorXd g(1);
    g[0] = toy.cost_grad(w[0]);
    return g;
  };
  problem.metric = [toy, damping](const Eigen::VectorXd& w, Rng&) {
    Eigen::MatrixXd g(1, 1);
    g(0, 0) = toy.metric(w[0]);
    return damp_to_factorizable(MetricMatrix(g), damping);
  };
  problem.metric_derivatives = [toy](const Eigen::VectorXd& w, Rng&) {
    MetricDerivatives d;
    d.per_coordinate.push_back((Eigen::MatrixXd(1, 1) << toy.metric_grad(w[0])).finished());
    return d;
  };
  return problem;
}

namespace {

// Isotropic noise with covariance 2T I/(eps N); zero draws at T = 0.
Eigen::VectorXd isotropic_noise(int dim, double temperature, double eps, std::int64_t n,
                                Rng& rng) {
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(dim);
  if (temperature == 0.0) return alpha;
  const double scale = std::sqrt(2.0 * temperature / (eps * static_cast<double>(n)));
  for (int i = 0; i < dim; ++i) alpha[i] = scale * rng.normal();
  return alpha;
}

}  // namespace

Eigen::VectorXd step_langevin(const SamplingProblem& problem, const Eigen::VectorXd& w,
                              const SamplerConfig& cfg, Rng& rng, StepDiagnostics* diag) {
  const Eigen::VectorXd g = problem.mean_grad(w);
  const Eigen::VectorXd alpha =
      isotropic_noise(problem.dim, cfg.temperature, cfg.eps, problem.data_size, rng);
  if (diag) diag->grad_norm = g.norm();
  return w - cfg.eps * (g + alpha);
}

Eigen::VectorXd step_precond_static(const SamplingProblem& problem, const Eigen::VectorXd& w,
                                    const MetricMatrix& g_metric, const SamplerConfig& cfg,
                                    Rng& rng, StepDiagnostics* diag) {
  const Eigen::VectorXd g = problem.mean_grad(w);
  const NoiseDraw alpha =
      draw_noise(g_metric, cfg.temperature, cfg.eps, problem.data_size, rng);
  if (diag) {
    diag->grad_norm = g.norm();
    diag->metric_condition = g_metric.condition_estimate();
  }
  return w - cfg.eps * g_metric.solve(Eigen::VectorXd(g + alpha.vector));
}

Eigen::VectorXd step_riemannian(const SamplingProblem& problem, const Eigen::VectorXd& w,
                                CorrectionBias bias, const SamplerConfig& cfg, Rng& rng,
                                StepDiagnostics* diag) {
  const MetricMatrix g_metric = problem.metric(w, rng);
  const Eigen::VectorXd g = problem.mean_grad(w);
  const NoiseDraw alpha =
      draw_noise(g_metric, cfg.temperature, cfg.eps, problem.data_size, rng);
  Eigen::VectorXd update = g_metric.solve(Eigen::VectorXd(g + alpha.vector));
  if (bias != CorrectionBias::none && cfg.temperature != 0.0) {
    const MetricDerivatives dg = problem.metric_derivatives(w, rng);
    const Eigen::VectorXd corr = bias == CorrectionBias::jeffreys
                                     ? jeffreys_correction(g_metric, dg)
                                     : flat_correction(g_metric, dg);
    update += (cfg.temperature / static_cast<double>(problem.data_size)) * corr;
  }
  if (diag) {
    diag->grad_norm = g.norm();
    diag->metric_condition = g_metric.condition_estimate();
  }
  return w - cfg.eps * update;
}

namespace {

std::span<const int> select_batch(const SamplingProblem& problem, const SamplerConfig& cfg,
                                  Rng& rng, std::vector<int>* pool, std::vector<int>& local) {
  std::vector<int>& storage = pool ? *pool : local;
  if (cfg.batch_size == problem.data_size) {
    // Whole dataset; no randomness consumed, summation in dataset order.
    if (storage.size() != static_cast<std::size_t>(problem.data_size)) {
      storage.resize(static_cast<std::size_t>(problem.data_size));
      std::iota(storage.begin(), storage.end(), 0);
    }
    return {storage.data(), storage.size()};
  }
  return draw_minibatch(storage, problem.data_size, cfg.batch_size, rng);
}

}  // namespace

Eigen::VectorXd step_minibatch_ngd(const SamplingProblem& problem, const Eigen::VectorXd& w,
                                   const SamplerConfig& cfg, Rng& rng, StepDiagnostics* diag,
                                   std::vector<int>* pool) {
  std::vector<int> local;
  const auto batch = select_batch(problem, cfg, rng, pool, local);
  const Eigen::VectorXd gb = problem.minibatch_grad(w, batch);
  const MetricMatrix g_metric = problem.metric(w, rng);
  if (diag) {
    diag->grad_norm = gb.norm();
    diag->metric_condition = g_metric.condition_estimate();
  }
  return w - cfg.eps * g_metric.solve(gb);
}

Eigen::VectorXd step_sngd(const SamplingProblem& problem, const Eigen::VectorXd& w,
                          const SamplerConfig& cfg, Rng& rng, StepDiagnostics* diag,
                          std::vector<int>* pool) {
  std::vector<int> local;
  const auto batch = select_batch(problem, cfg, rng, pool, local);
  const Eigen::VectorXd gb = problem.minibatch_grad(w, batch);
  const MetricMatrix g_metric = problem.metric(w, rng);
  Eigen::VectorXd next = w - cfg.eps * g_metric.solve(gb);
  if (cfg.batch_size != problem.data_size) {
    // eps^2/(2B) (1 - B/N) == eps T / N with T = temperature(eps, N, B).
    const double b = static_cast<double>(cfg.batch_size);
    const double n = static_cast<double>(problem.data_size);
    const double prefactor = cfg.eps * cfg.eps / (2.0 * b) * (1.0 - b / n);
    const MetricDerivatives dg = problem.metric_derivatives(w, rng);
    next -= prefactor * jeffreys_correction(g_metric, dg);
  }
  if (diag) {
    diag->grad_norm = gb.norm();
    diag->metric_condition = g_metric.condition_estimate();
  }
  return next;
}

Eigen::VectorXd Chain::sample_mean() const {
  return samples.colwise().mean();
}

Eigen::MatrixXd Chain::sample_covariance() const {
  if (samples.rows() < 2) {
    throw std::invalid_argument("sample_covariance: need at least 2 samples");
  }
  const Eigen::MatrixXd centered = samples.rowwise() - samples.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

std::vector<double> Chain::component(int j) const {
  std::vector<double> out(static_cast<std::size_t>(samples.rows()));
  for (std::int64_t i = 0; i < samples.rows(); ++i) out[static_cast<std::size_t>(i)] = samples(i, j);
  return out;
}

namespace {

void validate_config(const SamplingProblem& problem, const SamplerConfig& cfg) {
  if (cfg.eps <= 0.0) throw std::invalid_argument("run_chain: eps must be > 0");
  if (cfg.temperature < 0.0) throw std::invalid_argument("run_chain: T must be >= 0");
  if (cfg.thinning < 1) throw std::invalid_argument("run_chain: thinning must be >= 1");
  if (cfg.burn_in_steps < 0 || cfg.sample_steps < 0) {
    throw std::invalid_argument("run_chain: negative step counts");
  }
  if (cfg.rule == SamplerRule::minibatch_ngd || cfg.rule == SamplerRule::sngd) {
    if (cfg.batch_size < 1 || cfg.batch_size > problem.data_size) {
      throw std::invalid_argument("run_chain: minibatch rules need 1 <= B <= N");
    }
    if (!problem.minibatch_grad) {
      throw std::invalid_argument("run_chain: problem has no minibatch gradient");
    }
  }
}

}  // namespace

Chain run_chain(const SamplingProblem& problem, const SamplerConfig& cfg,
                const Eigen::VectorXd& initial, Rng rng) {
  validate_config(problem, cfg);
  if (initial.size() != problem.dim) {
    throw std::invalid_argument("run_chain: initial parameter dim mismatch");
  }
  const bool minibatch_rule =
      cfg.rule == SamplerRule::minibatch_ngd || cfg.rule == SamplerRule::sngd;

  Chain chain;
  chain.seed = rng.seed();
  chain.realized_temperature =
      minibatch_rule ? temperature(cfg.eps, problem.data_size, cfg.batch_size)
                     : cfg.temperature;
  const std::int64_t kept = cfg.sample_steps / cfg.thinning;
  chain.samples.resize(kept, problem.dim);
  chain.grad_norms.reserve(static_cast<std::size_t>(kept));
  chain.metric_conditions.reserve(static_cast<std::size_t>(kept));

  std::optional<MetricMatrix> frozen;
  if (cfg.rule == SamplerRule::precond_static && !cfg.refresh_metric) {
    frozen = problem.metric(initial, rng);
  }

  Eigen::VectorXd w = initial;
  std::vector<int> pool;
  std::int64_t written = 0;
  const std::int64_t total = cfg.burn_in_steps + cfg.sample_steps;
  for (std::int64_t step = 0; step < total; ++step) {
    const bool record = step >= cfg.burn_in_steps &&
                        (step - cfg.burn_in_steps + 1) % cfg.thinning == 0 && written < kept;
    StepDiagnostics diag;
    StepDiagnostics* diag_ptr = record ? &diag : nullptr;
    switch (cfg.rule) {
      case SamplerRule::langevin:
        w = step_langevin(problem, w, cfg, rng, diag_ptr);
        break;
      case SamplerRule::precond_static:
        if (frozen) {
          w = step_precond_static(problem, w, *frozen, cfg, rng, diag_ptr);
        } else {
          w = step_riemannian(problem, w, CorrectionBias::none, cfg, rng, diag_ptr);
        }
        break;
      case SamplerRule::riemannian_jeffreys:
        w = step_riemannian(problem, w, CorrectionBias::jeffreys, cfg, rng, diag_ptr);
        break;
      case SamplerRule::riemannian_flat:
        w = step_riemannian(problem, w, CorrectionBias::flat, cfg, rng, diag_ptr);
        break;
      case SamplerRule::minibatch_ngd:
        w = step_minibatch_ngd(problem, w, cfg, rng, diag_ptr, &pool);
        break;
      case SamplerRule::sngd:
        w = step_sngd(problem, w, cfg, rng, diag_ptr, &pool);
        break;
    }
    if (!w.allFinite() || w.norm() > 1e6) {
      throw DivergenceError(step, "chain diverged at step " + std::to_string(step) +
                                      " (|w| = " + std::to_string(w.norm()) + ")");
    }
    if (record) {
      chain.samples.row(written++) = w;
      chain.grad_norms.push_back(diag.grad_norm);
      chain.metric_conditions.push_back(diag.metric_condition);
    }
  }
  return chain;
}

const char* to_string(SamplerRule rule) {
  switch (rule) {
    case SamplerRule::langevin: return "langevin";
    case SamplerRule::precond_static: return "precond_static";
    case SamplerRule::riemannian_jeffreys: return "riemannian_jeffreys";
    case SamplerRule::riemannian_flat: return "riemannian_flat";
    case SamplerRule::minibatch_ngd: return "minibatch_ngd";
    case SamplerRule::sngd: return "sngd";
  }
  return "unknown";
}

SamplerRule rule_from_string(const std::string& name) {
  for (const SamplerRule rule :
       {SamplerRule::langevin, SamplerRule::precond_static, SamplerRule::riemannian_jeffreys,
        SamplerRule::riemannian_flat, SamplerRule::minibatch_ngd, SamplerRule::sngd}) {
    if (name == to_string(rule)) return rule;
  }
  throw std::invalid_argument("unknown sampler rule: " + name);
}

std::uint64_t model_spec_hash(const ModelSpec& spec) {
  std::uint64_t hash = 1469598103934665603ull;
  const auto mix = [&hash](std::uint64_t v) {
    for (int byte = 0; byte < 8; ++byte) {
      hash ^= (v >> (8 * byte)) & 0xff;
      hash *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(spec.kind));
  mix(static_cast<std::uint64_t>(spec.input_dim));
  mix(static_cast<std::uint64_t>(spec.class_count));
  mix(static_cast<std::uint64_t>(spec.hidden_units));
  std::uint64_t l2_bits;
  std::memcpy(&l2_bits, &spec.l2, sizeof(l2_bits));
  mix(l2_bits);
  return hash;
}

void save_chain(const Chain& chain, const SamplerConfig& cfg, std::uint64_t spec_hash,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  nlohmann::json header;
  header["format"] = "sngd-chain-v1";
  header["spec_hash"] = spec_hash;
  header["seed"] = chain.seed;
  header["realized_temperature"] = chain.realized_temperature;
  header["dim"] = chain.samples.cols();
  header["samples"] = chain.samples.rows();
  header["config"] = {
      {"rule", to_string(cfg.rule)},       {"eps", cfg.eps},
      {"temperature", cfg.temperature},    {"batch_size", cfg.batch_size},
      {"damping", cfg.damping},            {"burn_in_steps", cfg.burn_in_steps},
      {"sample_steps", cfg.sample_steps},  {"thinning", cfg.thinning},
  };
  out << header.dump() << '\n';
  out << std::setprecision(17);
  for (std::int64_t i = 0; i < chain.samples.rows(); ++i) {
    for (std::int64_t j = 0; j < chain.samples.cols(); ++j) {
      if (j) out << ' ';
      out << chain.samples(i, j);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");

  std::ofstream diag(path + ".diag.jsonl");
  for (std::size_t i = 0; i < chain.grad_norms.size(); ++i) {
    nlohmann::json row;
    row["sample"] = i;
    row["grad_norm"] = chain.grad_norms[i];
    if (std::isfinite(chain.metric_conditions[i])) {
      row["metric_condition"] = chain.metric_conditions[i];
    }
    diag << row.dump() << '\n';
  }
}

Chain load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": missing header");
  const nlohmann::json header = nlohmann::json::parse(line);
  Chain chain;
  chain.seed = header.at("seed").get<std::uint64_t>();
  chain.realized_temperature = header.at("realized_temperature").get<double>();
  const std::int64_t rows = header.at("samples").get<std::int64_t>();
  const std::int64_t cols = header.at("dim").get<std::int64_t>();
  chain.samples.resize(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated samples");
    std::istringstream ss(line);
    for (std::int64_t j = 0; j < cols; ++j) {
      if (!(ss >> chain.samples(i, j))) throw std::runtime_error(path + ": malformed row");
    }
  }
  return chain;
}

}  // namespace sngd
