#pragma once

#include <Eigen/Core>
#include <functional>

#include "sngd/dataset.hpp"
#include "sngd/metric.hpp"
#include "sngd/models.hpp"

namespace sngd {

using CostFn = std::function<double(const Eigen::VectorXd&)>;
using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using HessFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Thrown when the minimizer hits its iteration cap; carries the final
/// gradient norm in the message.
class MinimizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic damped-Newton descent with Armijo backtracking. Converges
/// in one step on quadratics and quadratically near any smooth minimum.
Eigen::VectorXd minimize(const CostFn& cost, const GradFn& grad, const HessFn& hess,
                         const Eigen::VectorXd& initial, double tolerance = 1e-8,
                         int max_iterations = 200);

/// Convenience wrapper for logistic regression (analytic Hessian).
Eigen::VectorXd minimize(const Model& model, const Dataset& data,
                         const Eigen::VectorXd& initial, double tolerance = 1e-8);

/// Gaussian posterior approximation at the cost minimum: covariance is T
/// times the inverse Hessian at the mode.
struct LaplaceApprox {
  Eigen::VectorXd mode;
  MetricMatrix covariance;
};

LaplaceApprox laplace(const CostFn& cost, const GradFn& grad, const HessFn& hess,
                      const Eigen::VectorXd& initial, double temperature,
                      double tolerance = 1e-8);

/// Logistic-model Laplace approximation from the zero initialization.
LaplaceApprox laplace(const Model& model, const Dataset& data, double temperature,
                      double tolerance = 1e-8);

/// Normalized density tabulated on a strictly increasing grid; the
/// trapezoidal integral is 1 up to rounding.
struct DensityGrid {
  Eigen::VectorXd grid;
  Eigen::VectorXd density;

  /// Probability mass of each grid cell [grid_i, grid_{i+1}].
  Eigen::VectorXd cell_masses() const;
};

enum class DensityBias { jeffreys, flat };

struct GridSpec {
  double lo = -6.0;
  double hi = 6.0;
  int points = 2001;
};

using ScalarFn = std::function<double(double)>;

/// Stationary density of the 1-D Riemannian Langevin SDE:
/// e^{-C(u)/T} |g(u)|^{1/2} for the jeffreys bias, e^{-C(u)/T} for flat,
/// trapezoid-normalized on the grid. Throws if the tails have not decayed at
/// the grid edges (non-integrable or truncated density).
DensityGrid stationary_density_1d(const ScalarFn& cost, const ScalarFn& metric,
                                  double temperature, DensityBias bias,
                                  const GridSpec& grid_spec);

/// Total variation between the histogram of samples (binned on the oracle's
/// cells, with out-of-range mass counted against the oracle) and the oracle.
double total_variation(const std::vector<double>& samples, const DensityGrid& oracle);

/// Total variation between two densities tabulated on the same grid.
double total_variation(const DensityGrid& a, const DensityGrid& b);

/// Summary of how far sample moments sit from a Gaussian reference.
struct GaussianDistance {
  double mean_mahalanobis = 0.0;   // sqrt((m-m0)^T Cov0^-1 (m-m0))
  double cov_frobenius_rel = 0.0;  // |Cov - Cov0|_F / |Cov0|_F
  double eig_ratio_max = 0.0;      // max eigenvalue of Cov Cov0^-1
};

GaussianDistance gaussian_distance(const Eigen::VectorXd& sample_mean,
                                   const Eigen::MatrixXd& sample_cov,
                                   const LaplaceApprox& reference);

/// JSON emission for figure pipelines.
void save_density_grid(const DensityGrid& grid, const std::string& path);
void save_laplace(const LaplaceApprox& approx, const std::string& path);

}  // namespace sngd
