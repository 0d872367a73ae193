#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

#include "sngd/dataset.hpp"
#include "sngd/metric.hpp"
#include "sngd/rng.hpp"

namespace sngd {

/// Requested operation is not defined for this model kind.
class UnsupportedModelError : public std::invalid_argument {
 public:
  explicit UnsupportedModelError(const std::string& what) : std::invalid_argument(what) {}
};

enum class ModelKind { logistic, softmax, mlp };

struct ModelSpec {
  ModelKind kind = ModelKind::logistic;
  int input_dim = 0;
  int class_count = 2;
  int hidden_units = 0;  // mlp only
  double l2 = 0.0;       // regularization coefficient lambda
};

/// Probabilistic classifier exposing per-example loss, analytic gradients,
/// and the predictive label distribution.
///
/// Binary logistic regression follows the convention
///   P(y | x, w) = 1 / (1 + exp(y w.x)),  y in {-1, +1},
/// so the +1 label has probability sigmoid(-w.x). Class index 0 maps to
/// label -1 and class index 1 to label +1. All label statistics are
/// symmetric under the global relabeling y -> -y, so only the sign of
/// fitted parameters depends on this choice.
///
/// The MLP is one hidden ReLU layer with biases and a softmax output;
/// gradients are a hand-coded layer-wise backward pass. The ReLU subgradient
/// at 0 is taken as 0.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  int param_dim() const { return param_dim_; }
  int class_count() const { return spec_.class_count; }

  /// Dataset label encoding for a class index (identity except logistic,
  /// where classes {0, 1} encode labels {-1, +1}).
  int class_to_label(int class_index) const;
  int label_to_class(int label) const;

  /// Predictive distribution over class indices; entries are non-negative
  /// and sum to one.
  Eigen::VectorXd predict(const Eigen::VectorXd& w, const Eigen::VectorXd& input) const;

  /// predict() for every row of `inputs` at once (gemm-backed).
  Eigen::MatrixXd predict_batch(const Eigen::VectorXd& w, const Eigen::MatrixXd& inputs) const;

  /// Cross-entropy -log P(label | input, w), with the predicted probability
  /// clamped to [1e-12, 1 - 1e-12] before the log.
  double loss(const Eigen::VectorXd& w, const Eigen::VectorXd& input, int label) const;

  /// Analytic gradient of loss with respect to w.
  Eigen::VectorXd grad(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                       int label) const;

  /// grad() as if the example carried class index c; used by Fisher
  /// estimators that enumerate or sample labels.
  Eigen::VectorXd grad_for_class(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                                 int class_index) const;

  /// Writes grad_for_class into a caller-owned buffer (hot path for Fisher
  /// accumulation; avoids per-example allocation).
  void grad_for_class_into(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                           int class_index, Eigen::Ref<Eigen::VectorXd> out) const;

  /// Sum of per-example losses plus the L2 regularizer lambda/2 |w|^2.
  double total_cost(const Eigen::VectorXd& w, const Dataset& data) const;

  /// Gradient of total_cost, regularizer term lambda w included.
  Eigen::VectorXd grad_total(const Eigen::VectorXd& w, const Dataset& data) const;

  /// Label drawn from predict(); returned in the dataset encoding.
  int sample_label(const Eigen::VectorXd& w, const Eigen::VectorXd& input, Rng& rng) const;

  /// Class index drawn from predict().
  int sample_class(const Eigen::VectorXd& w, const Eigen::VectorXd& input, Rng& rng) const;

  /// Exact Hessian of total_cost. Logistic regression only (the Laplace
  /// oracle is restricted to the convex model); throws UnsupportedModelError
  /// otherwise.
  MetricMatrix hessian_total(const Eigen::VectorXd& w, const Dataset& data) const;

 private:
  void check_input(const Eigen::VectorXd& w, const Eigen::VectorXd& input) const;

  ModelSpec spec_;
  int param_dim_ = 0;
};

/// Inverse-CDF draw from a probability vector.
int sample_class_index(const Eigen::VectorXd& probabilities, Rng& rng);

/// Inputs from an n-dimensional unit Gaussian, labels sampled from the
/// Bernoulli distribution of the true-parameter sigmoid.
Dataset generate_synthetic_logistic(std::int64_t n_examples, int input_dim,
                                    const Eigen::VectorXd& w_true, Rng& rng);

/// Teacher-generated classification data: Gaussian inputs with the given
/// per-coordinate scale, labels sampled from the teacher model's predictive
/// distribution. Keeps the task well-specified for any student of the same
/// architecture.
Dataset generate_synthetic_classification(const Model& teacher,
                                          const Eigen::VectorXd& w_teacher,
                                          std::int64_t n_examples, Rng& rng,
                                          double input_scale = 1.0);

}  // namespace sngd
