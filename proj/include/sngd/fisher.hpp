#pragma once

#include <Eigen/Core>
#include <functional>

#include "sngd/dataset.hpp"
#include "sngd/metric.hpp"
#include "sngd/models.hpp"
#include "sngd/rng.hpp"

namespace sngd {

enum class FisherSource { exact_expectation, sampled_labels, empirical };

/// Fisher information estimate, stored before damping.
struct FisherEstimate {
  MetricMatrix matrix;
  FisherSource source = FisherSource::exact_expectation;
  std::int64_t sample_size = 0;  // examples (x label draws) behind the estimate
};

/// Exponential moving average of Fisher estimates,
/// current <- rho * current + (1 - rho) * incoming.
struct FisherMovingAverage {
  FisherEstimate current;
  double smoothing = 0.0;  // rho in [0, 1)
};

/// Exact Fisher (expectation over the predicted label distribution):
///   F = 1/N sum_i sum_c p_c(x_i) g_{i,c} g_{i,c}^T.
/// Enumerates classes, so it is guarded at 50 classes.
FisherEstimate fisher_exact(const Model& model, const Eigen::VectorXd& w,
                            const Eigen::MatrixXd& inputs);

/// Monte Carlo Fisher with one sampled label per example; unbiased for
/// fisher_exact.
FisherEstimate fisher_sampled(const Model& model, const Eigen::VectorXd& w,
                              const Eigen::MatrixXd& inputs, Rng& rng);

/// Empirical Fisher: outer products of gradients at the observed labels.
FisherEstimate fisher_empirical(const Model& model, const Eigen::VectorXd& w,
                                const Dataset& data);

/// Covariance of the per-example loss gradients,
///   Sigma_{x,y} = F_{x,y} - gbar gbar^T.
MetricMatrix gradient_noise_covariance(const Model& model, const Eigen::VectorXd& w,
                                       const Dataset& data);

enum class DerivativeMode { analytic, finite_difference };

/// Per-coordinate Fisher derivatives dF/dw_j. Analytic mode is available for
/// logistic regression only; finite_difference central-differences
/// fisher_exact with the given step.
MetricDerivatives fisher_derivatives(const Model& model, const Eigen::VectorXd& w,
                                     const Eigen::MatrixXd& inputs, DerivativeMode mode,
                                     double fd_step = 1e-5);

/// Central-difference derivatives of an arbitrary matrix-valued function of
/// the parameters (used for frozen-seed sampled-Fisher differentiation).
MetricDerivatives matrix_fd_derivatives(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& matrix_fn,
    const Eigen::VectorXd& w, double fd_step = 1e-5);

/// Convex blend toward the incoming estimate with coefficient rho.
FisherMovingAverage moving_average_update(const FisherMovingAverage& state,
                                          const FisherEstimate& incoming);

/// Learning-rate-coupled smoothing coefficient 0.95^(eps/0.001).
inline double fisher_ma_smoothing(double eps) { return std::pow(0.95, eps / 0.001); }

/// Writes the estimate for offline inspection: "text" is one dense row per
/// line (row-major), "json" carries entries plus source and sample size.
void save_fisher(const FisherEstimate& estimate, const std::string& format,
                 const std::string& path);

}  // namespace sngd
