#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sngd/rng.hpp"

namespace sngd {

/// Thrown when a matrix that must be positive definite cannot be factorized,
/// after any jitter escalation has been exhausted.
class FactorizationError : public std::runtime_error {
 public:
  explicit FactorizationError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense symmetric positive-definite metric with a lazily cached Cholesky
/// factor. Construction symmetrizes the input as (M + M^T)/2, since Monte
/// Carlo estimates accumulate asymmetric rounding.
class MetricMatrix {
 public:
  MetricMatrix() = default;
  explicit MetricMatrix(const Eigen::MatrixXd& entries, double damping_applied = 0.0);

  /// Adopts an exactly symmetric matrix without the averaging pass (hot path
  /// for estimators that already build from rank updates).
  static MetricMatrix from_symmetric(Eigen::MatrixXd entries, double damping_applied = 0.0);

  int dim() const { return static_cast<int>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  double damping_applied() const { return damping_applied_; }

  /// Lower-triangular L with L L^T = entries. Throws FactorizationError if
  /// the matrix is not positive definite.
  const Eigen::MatrixXd& factor() const;

  /// True if the Cholesky factorization succeeds (and caches it).
  bool factorizable() const;

  /// Throws FactorizationError unless the matrix is positive definite.
  void require_factorizable() const;

  /// Solves G u = v (single or multi right-hand-side). Relative residual is
  /// at the level of the factorization accuracy for well-conditioned G.
  template <typename Derived>
  auto solve(const Eigen::MatrixBase<Derived>& v) const {
    require_factorizable();
    return llt_.solve(v.derived()).eval();
  }

  /// log |det G| = 2 sum_i log L_ii.
  double log_det() const;

  /// Estimate of the l2 condition number via power iteration on G and
  /// inverse iteration through the cached factor. Deterministic.
  double condition_estimate(int iterations = 12) const;

 private:
  void ensure_factor() const;

  Eigen::MatrixXd entries_;
  double damping_applied_ = 0.0;
  // Cholesky cache; mutable so factor() stays const past first use. The
  // dense triangular copy is materialized separately, only when asked for.
  mutable Eigen::LLT<Eigen::MatrixXd> llt_;
  mutable Eigen::MatrixXd factor_;
  mutable int factor_state_ = 0;  // 0 = unknown, 1 = ok, -1 = failed
  mutable bool factor_dense_ = false;
};

/// Per-coordinate metric derivatives: per_coordinate[j] = dG/dw_j.
struct MetricDerivatives {
  std::vector<Eigen::MatrixXd> per_coordinate;

  int dim() const { return static_cast<int>(per_coordinate.size()); }
};

/// Correlated Gaussian draw with covariance scale * G, scale = 2T/(eps N).
struct NoiseDraw {
  Eigen::VectorXd vector;
  double scale = 0.0;
};

/// F + delta I. Rejects negative delta.
MetricMatrix damp(const MetricMatrix& f, double delta);

/// Damps with jitter escalation: tries delta, then 10x, 100x, 1000x, and
/// throws FactorizationError if the result still fails to factorize. The
/// returned metric has its factor already cached.
MetricMatrix damp_to_factorizable(const MetricMatrix& f, double delta);

/// alpha = sqrt(2T/(eps N)) L z with z standard normal; T = 0 gives the
/// zero vector without consuming randomness.
NoiseDraw draw_noise(const MetricMatrix& g, double temperature, double eps,
                     std::int64_t n, Rng& rng);

/// The braced correction of the stochastic NGD update, without prefactor:
///   c_i = sum_j (G^-1 dG_j G^-1)_ij - 1/2 sum_j G^-1_ij Tr(G^-1 dG_j).
Eigen::VectorXd jeffreys_correction(const MetricMatrix& g, const MetricDerivatives& dg);

/// First correction term only: c_i = sum_j (G^-1 dG_j G^-1)_ij.
Eigen::VectorXd flat_correction(const MetricMatrix& g, const MetricDerivatives& dg);

/// Checks |g|^{-1/2} d_j (g^-1 |g|^{1/2}) = -g^-1 (d_j g) g^-1
///   + 1/2 g^-1 Tr(g^-1 d_j g)
/// by central-differencing the left side along the linear path g + h dG_j.
/// Returns the max absolute entry-wise residual over all coordinates.
double verify_logdet_identity(const MetricMatrix& g, const MetricDerivatives& dg,
                              double step = 1e-5);

}  // namespace sngd
