#include "sngd/metric.hpp"

#include <cmath>

namespace sngd {

MetricMatrix::MetricMatrix(const Eigen::MatrixXd& entries, double damping_applied)
    : damping_applied_(damping_applied) {
  if (entries.rows() != entries.cols()) {
    throw std::invalid_argument("MetricMatrix: entries must be square, got " +
                                std::to_string(entries.rows()) + "x" +
                                std::to_string(entries.cols()));
  }
  entries_ = 0.5 * (entries + entries.transpose());
}

MetricMatrix MetricMatrix::from_symmetric(Eigen::MatrixXd entries, double damping_applied) {
  if (entries.rows() != entries.cols()) {
    throw std::invalid_argument("MetricMatrix: entries must be square");
  }
  MetricMatrix m;
  m.entries_ = std::move(entries);
  m.damping_applied_ = damping_applied;
  return m;
}

void MetricMatrix::ensure_factor() const {
  if (factor_state_ != 0) return;
  llt_.compute(entries_);
  factor_state_ = llt_.info() == Eigen::Success ? 1 : -1;
}

bool MetricMatrix::factorizable() const {
  ensure_factor();
  return factor_state_ == 1;
}

void MetricMatrix::require_factorizable() const {
  ensure_factor();
  if (factor_state_ != 1) {
    throw FactorizationError("Cholesky factorization failed: matrix of dim " +
                             std::to_string(dim()) + " is not positive definite");
  }
}

const Eigen::MatrixXd& MetricMatrix::factor() const {
  require_factorizable();
  if (!factor_dense_) {
    factor_ = llt_.matrixL();
    factor_dense_ = true;
  }
  return factor_;
}

double MetricMatrix::log_det() const {
  require_factorizable();
  // The packed LLT storage carries L on its lower triangle, diagonal included.
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

double MetricMatrix::condition_estimate(int iterations) const {
  require_factorizable();
  const int n = dim();
  if (n == 1) return 1.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n).normalized();
  Eigen::VectorXd u = v;
  double lambda_max = 0.0;
  double lambda_min_inv = 0.0;
  for (int it = 0; it < iterations; ++it) {
    v = entries_ * v;
    lambda_max = v.norm();
    v /= lambda_max;
    u = llt_.solve(u);
    lambda_min_inv = u.norm();
    u /= lambda_min_inv;
  }
  return lambda_max * lambda_min_inv;
}

MetricMatrix damp(const MetricMatrix& f, double delta) {
  if (delta < 0.0) {
    throw std::invalid_argument("damp: delta must be non-negative, got " +
                                std::to_string(delta));
  }
  Eigen::MatrixXd m = f.entries();
  m.diagonal().array() += delta;
  // Entries are symmetric by construction, so skip the averaging pass.
  return MetricMatrix::from_symmetric(std::move(m), f.damping_applied() + delta);
}

MetricMatrix damp_to_factorizable(const MetricMatrix& f, double delta) {
  // Escalation base when delta == 0; a strictly zero jitter can never rescue
  // a semi-definite estimate.
  const double base = delta > 0.0 ? delta : 1e-10;
  MetricMatrix damped = damp(f, delta);
  if (damped.factorizable()) return damped;
  double jitter = base;
  for (int attempt = 0; attempt < 3; ++attempt) {
    jitter *= 10.0;
    damped = damp(f, jitter);
    if (damped.factorizable()) return damped;
  }
  throw FactorizationError(
      "metric not positive definite after jitter escalation to delta = " +
      std::to_string(jitter));
}

NoiseDraw draw_noise(const MetricMatrix& g, double temperature, double eps,
                     std::int64_t n, Rng& rng) {
  if (temperature < 0.0) throw std::invalid_argument("draw_noise: T must be >= 0");
  if (eps <= 0.0) throw std::invalid_argument("draw_noise: eps must be > 0");
  if (n < 1) throw std::invalid_argument("draw_noise: N must be >= 1");
  const double scale = 2.0 * temperature / (eps * static_cast<double>(n));
  NoiseDraw draw;
  draw.scale = scale;
  if (temperature == 0.0) {
    draw.vector = Eigen::VectorXd::Zero(g.dim());
    return draw;
  }
  Eigen::VectorXd z(g.dim());
  for (int i = 0; i < g.dim(); ++i) z[i] = rng.normal();
  draw.vector = std::sqrt(scale) * (g.factor() * z);
  return draw;
}

namespace {

void check_derivative_dims(const MetricMatrix& g, const MetricDerivatives& dg,
                           const char* op) {
  if (dg.dim() != g.dim()) {
    throw std::invalid_argument(std::string(op) + ": expected " +
                                std::to_string(g.dim()) + " derivative matrices, got " +
                                std::to_string(dg.dim()));
  }
  for (const auto& m : dg.per_coordinate) {
    if (m.rows() != g.dim() || m.cols() != g.dim()) {
      throw std::invalid_argument(std::string(op) + ": derivative block shape mismatch");
    }
  }
}

}  // namespace

Eigen::VectorXd jeffreys_correction(const MetricMatrix& g, const MetricDerivatives& dg) {
  check_derivative_dims(g, dg, "jeffreys_correction");
  const int n = g.dim();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd g_inv = g.solve(identity);
  for (int j = 0; j < n; ++j) {
    const Eigen::MatrixXd ginv_dg = g_inv * dg.per_coordinate[j];
    out += (ginv_dg * g_inv).col(j);
    out -= 0.5 * ginv_dg.trace() * g_inv.col(j);
  }
  return out;
}

Eigen::VectorXd flat_correction(const MetricMatrix& g, const MetricDerivatives& dg) {
  check_derivative_dims(g, dg, "flat_correction");
  const int n = g.dim();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd g_inv = g.solve(identity);
  for (int j = 0; j < n; ++j) {
    out += (g_inv * dg.per_coordinate[j] * g_inv).col(j);
  }
  return out;
}

double verify_logdet_identity(const MetricMatrix& g, const MetricDerivatives& dg,
                              double step) {
  check_derivative_dims(g, dg, "verify_logdet_identity");
  const int n = g.dim();
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd g_inv = g.solve(identity);
  const double half_logdet = 0.5 * g.log_det();

  double max_residual = 0.0;
  for (int j = 0; j < n; ++j) {
    // Central difference of g^-1 |g|^{1/2} along g + h dG_j, normalized by
    // |g|^{-1/2}. Exponents are kept in log space to avoid overflow.
    const MetricMatrix plus(g.entries() + step * dg.per_coordinate[j]);
    const MetricMatrix minus(g.entries() - step * dg.per_coordinate[j]);
    const double wp = std::exp(0.5 * plus.log_det() - half_logdet);
    const double wm = std::exp(0.5 * minus.log_det() - half_logdet);
    const Eigen::MatrixXd lhs =
        (wp * plus.solve(identity) - wm * minus.solve(identity)) / (2.0 * step);

    const Eigen::MatrixXd ginv_dg = g_inv * dg.per_coordinate[j];
    const Eigen::MatrixXd rhs = -ginv_dg * g_inv + 0.5 * ginv_dg.trace() * g_inv;

    max_residual = std::max(max_residual, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  return max_residual;
}

}  // namespace sngd
