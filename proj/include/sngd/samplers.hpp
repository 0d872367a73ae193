#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "sngd/dataset.hpp"
#include "sngd/fisher.hpp"
#include "sngd/metric.hpp"
#include "sngd/models.hpp"
#include "sngd/rng.hpp"
#include "sngd/toys.hpp"

namespace sngd {

enum class SamplerRule {
  langevin,
  precond_static,
  riemannian_jeffreys,
  riemannian_flat,
  minibatch_ngd,
  sngd,
};

/// Which correction terms a parameter-dependent-metric step applies.
/// `none` is the paper-faithful mode that re-estimates the metric each step
/// but runs the static-metric update rule anyway.
enum class CorrectionBias { jeffreys, flat, none };

struct SamplerConfig {
  SamplerRule rule = SamplerRule::langevin;
  double eps = 0.1;
  double temperature = 0.0;  // rules with injected noise
  int batch_size = 0;        // minibatch rules
  double damping = 0.0;      // delta, applied inside the metric provider
  std::int64_t burn_in_steps = 0;
  std::int64_t sample_steps = 0;
  std::int64_t thinning = 1;
  std::uint64_t seed = 0;
  // precond_static only: re-estimate the metric at the current iterate each
  // step (the paper's Figure 1a protocol) instead of freezing it.
  bool refresh_metric = true;
};

/// T = eps N / (2B) (1 - B/N); the sampling temperature generated by
/// minibatch gradient noise.
double temperature(double eps, std::int64_t data_size, int batch_size);

/// Nearest-integer inverse of temperature(): B = [eps N / (2T + eps)],
/// clamped to [1, N].
int batch_for_temperature(double eps, std::int64_t data_size, double t);

/// B distinct indices, uniform over size-B subsets, re-randomized per call.
Minibatch draw_minibatch(std::int64_t data_size, int batch_size, Rng& rng);

/// Scratch-reusing variant: `pool` persists across steps (any permutation
/// state is valid); the returned span aliases its first B entries.
std::span<const int> draw_minibatch(std::vector<int>& pool, std::int64_t data_size,
                                    int batch_size, Rng& rng);

/// What a chain samples from. Factories below bind models or analytic toys;
/// the metric provider returns the damped metric ready for factorization.
struct SamplingProblem {
  int dim = 0;
  std::int64_t data_size = 1;  // N in the update rules
  std::function<double(const Eigen::VectorXd&)> cost;            // total C(w)
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> mean_grad;  // (1/N) dC/dw
  // (1/B) sum_batch dL/dw + (lambda/N) w; empty for toy problems
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, std::span<const int>)> minibatch_grad;
  std::function<MetricMatrix(const Eigen::VectorXd&, Rng&)> metric;
  std::function<MetricDerivatives(const Eigen::VectorXd&, Rng&)> metric_derivatives;
};

/// Minibatch gradient noise beta = minibatch mean gradient - full mean
/// gradient; exactly zero when the batch is the whole dataset.
struct GradientNoise {
  Eigen::VectorXd vector;
};

GradientNoise gradient_noise(const SamplingProblem& problem, const Eigen::VectorXd& w,
                             std::span<const int> batch);

struct FisherOptions {
  FisherSource source = FisherSource::exact_expectation;
  DerivativeMode derivative_mode = DerivativeMode::analytic;
  double fd_step = 1e-5;
  double ma_smoothing = 0.0;  // 0 disables the Fisher moving average
  // Examples per metric refresh, drawn without replacement from the
  // training inputs; 0 uses the full dataset.
  int estimation_batch = 0;
};

/// Binds a model + dataset into a SamplingProblem. The returned problem owns
/// a copy of the model and shares the dataset by reference (caller keeps it
/// alive). Holds the Fisher moving-average state, so each chain should own
/// its problem instance when a moving average is enabled.
SamplingProblem make_problem(const Model& model, const Dataset& data,
                             const SamplerConfig& cfg, const FisherOptions& fisher);

/// Analytic 1-D toy with data_size 1: the mean gradient is C'(u).
SamplingProblem make_toy_problem(const Toy1D& toy, double damping = 0.0);

/// Optional per-step measurements, filled only when requested.
struct StepDiagnostics {
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  double metric_condition = std::numeric_limits<double>::quiet_NaN();
};

Eigen::VectorXd step_langevin(const SamplingProblem& problem, const Eigen::VectorXd& w,
                              const SamplerConfig& cfg, Rng& rng,
                              StepDiagnostics* diag = nullptr);

Eigen::VectorXd step_precond_static(const SamplingProblem& problem, const Eigen::VectorXd& w,
                                    const MetricMatrix& g, const SamplerConfig& cfg, Rng& rng,
                                    StepDiagnostics* diag = nullptr);

Eigen::VectorXd step_riemannian(const SamplingProblem& problem, const Eigen::VectorXd& w,
                                CorrectionBias bias, const SamplerConfig& cfg, Rng& rng,
                                StepDiagnostics* diag = nullptr);

Eigen::VectorXd step_minibatch_ngd(const SamplingProblem& problem, const Eigen::VectorXd& w,
                                   const SamplerConfig& cfg, Rng& rng,
                                   StepDiagnostics* diag = nullptr,
                                   std::vector<int>* pool = nullptr);

Eigen::VectorXd step_sngd(const SamplingProblem& problem, const Eigen::VectorXd& w,
                          const SamplerConfig& cfg, Rng& rng,
                          StepDiagnostics* diag = nullptr, std::vector<int>* pool = nullptr);

/// Chain escaped (norm above 1e6 or non-finite iterate); carries the step
/// index at which it happened.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t at_step, const std::string& what)
      : std::runtime_error(what), step(at_step) {}
  std::int64_t step;
};

/// Post-burn-in, post-thinning samples with per-sample diagnostics.
struct Chain {
  Eigen::MatrixXd samples;  // kept samples x dim
  std::vector<double> grad_norms;
  std::vector<double> metric_conditions;
  double realized_temperature = 0.0;
  std::uint64_t seed = 0;

  std::int64_t size() const { return samples.rows(); }
  Eigen::VectorXd sample_mean() const;
  Eigen::MatrixXd sample_covariance() const;
  std::vector<double> component(int j) const;
};

/// Runs burn_in_steps discarded steps followed by sample_steps recorded
/// steps (thinned); fully deterministic given the generator.
Chain run_chain(const SamplingProblem& problem, const SamplerConfig& cfg,
                const Eigen::VectorXd& initial, Rng rng);

/// Columnar text serialization: one JSON header line (config, seed, spec
/// hash), then one whitespace-separated row per sample. Diagnostics go to
/// `path + ".diag.jsonl"` as JSON lines.
void save_chain(const Chain& chain, const SamplerConfig& cfg, std::uint64_t spec_hash,
                const std::string& path);
Chain load_chain(const std::string& path);

/// FNV-1a hash of the fields that determine a model architecture.
std::uint64_t model_spec_hash(const ModelSpec& spec);

const char* to_string(SamplerRule rule);
SamplerRule rule_from_string(const std::string& name);

}  // namespace sngd
