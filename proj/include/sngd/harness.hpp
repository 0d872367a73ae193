#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sngd/models.hpp"
#include "sngd/oracles.hpp"
#include "sngd/samplers.hpp"

namespace sngd {

/// Mean of Model::predict_batch over chain samples (probability averaging).
Eigen::MatrixXd ensemble_predict(const Chain& chain, const Model& model,
                                 const Eigen::MatrixXd& test_inputs);

struct EvalMetrics {
  double accuracy = 0.0;
  double cross_entropy = 0.0;  // mean per-example nats, clamped like the models
};

/// Accuracy (argmax match) and mean cross-entropy of row-stochastic
/// predictions against encoded labels.
EvalMetrics evaluate(const Eigen::MatrixXd& probabilities, const Eigen::VectorXi& labels,
                     const Model& model);

/// One sweep point: ensemble metrics and mean single-sample metrics.
struct EnsembleResult {
  double sweep_value = 0.0;
  double temperature = 0.0;
  int batch_size = 0;
  double ensemble_accuracy = 0.0;
  double ensemble_cross_entropy = 0.0;
  double single_accuracy = 0.0;
  double single_cross_entropy = 0.0;
  bool diverged = false;
};

/// Ensemble + single-sample metrics of a chain on a test set, in one pass.
EnsembleResult evaluate_chain(const Chain& chain, const Model& model, const Dataset& test);

/// How a temperature sweep realizes each T.
enum class SweepMode {
  precond_langevin,  // injected noise at T, full-batch gradient
  ngd,               // batch size from batch_for_temperature, no injected noise
};

/// Declarative experiment description; parse_config fills it from the flat
/// dotted-key file format, subcommands provide paper-protocol defaults.
struct ExperimentConfig {
  ModelSpec model;
  // data
  std::string data_source = "synthetic";  // synthetic | mnist | file
  std::int64_t n_train = 1000;
  std::int64_t n_test = 10000;
  Eigen::VectorXd w_true;      // synthetic logistic teacher
  double teacher_gain = 1.0;   // synthetic softmax/mlp teacher weight scale; <= 0 draws from the model prior
  double input_scale = 1.0;    // synthetic teacher input standard deviation
  int projection_dim = 10;
  std::string mnist_images, mnist_labels, mnist_test_images, mnist_test_labels;
  std::string data_file, test_file;
  // sampling
  SamplerConfig sampler;
  FisherOptions fisher;
  // sweeps
  SweepMode sweep_mode = SweepMode::ngd;
  std::vector<double> sweep_values;
  int sweep_seeds = 1;
  // mlp initialization descent
  std::int64_t init_descent_steps = 500;
  // execution
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::string format = "csv";
  int workers = 0;  // 0 = hardware concurrency
};

/// Training task materialized from a config: model, train and held-out test
/// sets drawn from seed-derived streams.
struct Task {
  Model model;
  Dataset train;
  Dataset test;
};

Task make_task(const ExperimentConfig& cfg);

/// Deterministic MLP chain start: He-scaled Gaussian draw followed by
/// init_descent_steps of full-batch zero-temperature NGD.
Eigen::VectorXd initial_parameters(const Task& task, const ExperimentConfig& cfg, Rng rng);

/// Figure-1 style protocol: returns per-variant chains and their distances
/// from the Laplace oracle, and writes scatter/ellipse/covariance files.
struct Figure1Variant {
  std::string name;
  Chain chain;
  GaussianDistance distance;
};

struct Figure1Result {
  LaplaceApprox laplace_oracle;
  std::vector<Figure1Variant> variants;  // 1a paper-faithful, 1a corrected, 1b
};

Figure1Result run_figure1(const ExperimentConfig& cfg, bool write_files = true);

/// Temperature sweep (Figures 2-3): one EnsembleResult per sweep value.
std::vector<EnsembleResult> run_temperature_sweep(const ExperimentConfig& cfg);

/// Batch-size sweep (Figures 4-5).
std::vector<EnsembleResult> run_batch_sweep(const ExperimentConfig& cfg);

/// Fokker-Planck verification: long 1-D chains vs quadrature densities.
struct FokkerPlanckEntry {
  std::string system;
  std::string rule;
  double eps = 0.0;
  std::int64_t steps = 0;
  double tv = 1.0;
  bool diverged = false;
};

struct FokkerPlanckConfig {
  std::int64_t steps = 1000000;
  std::int64_t burn_in = 100000;
  std::vector<double> eps_values = {1e-3};  // exp-metric toy discretization sweep
  std::uint64_t seed = 1;
  // sngd logistic toy protocol
  std::int64_t toy_data_size = 1000;
  int toy_batch = 25;
  double toy_eps = 0.05;
  std::int64_t toy_steps = 1000000;
};

std::vector<FokkerPlanckEntry> run_fokker_planck_suite(const FokkerPlanckConfig& cfg);

/// Vectorized 1-D logistic-regression problem (exact Fisher, analytic
/// derivatives), equivalent to make_problem on the same data but fast enough
/// for million-step chains. No regularizer.
SamplingProblem make_logistic_1d_problem(const Dataset& data, double damping);

/// 3-sigma ellipse polyline (closed, n_points rows of x y).
Eigen::MatrixXd ellipse_polyline(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                 int n_points = 96, double radius = 3.0);

/// Deterministic column order:
/// sweep_value,temperature,batch_size,ensemble_accuracy,ensemble_xent,
/// single_accuracy,single_xent,diverged
void emit(const std::vector<EnsembleResult>& results, const std::string& format,
          const std::string& path);
std::vector<EnsembleResult> parse_emitted(const std::string& format, const std::string& path);

/// Flat dotted-key config file: `section.key = value`, '#' comments.
/// Unknown keys are rejected.
std::map<std::string, std::string> read_key_value_file(const std::string& path);
void apply_config(ExperimentConfig& cfg, const std::map<std::string, std::string>& kv);

/// Index-stable parallel map over [0, n) with at most `workers` threads
/// (0 = hardware concurrency). Tasks must not share mutable state.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace sngd
