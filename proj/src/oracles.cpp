#include <algorithm>
#include <limits>
#include "sngd/oracles.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sngd {

Eigen::VectorXd minimize(const CostFn& cost, const GradFn& grad, const HessFn& hess,
                         const Eigen::VectorXd& initial, double tolerance,
                         int max_iterations) {
  Eigen::VectorXd x = initial;
  Eigen::VectorXd g = grad(x);
  if (g.norm() < tolerance) return x;
  double fx = cost(x);
  for (int iter = 0; iter < max_iterations; ++iter) {
    Eigen::MatrixXd h = hess(x);
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    double ridge = 1e-10;
    while (llt.info() != Eigen::Success) {
      h.diagonal().array() += ridge;
      llt.compute(h);
      ridge *= 10.0;
      if (ridge > 1e6) throw MinimizeError("minimize: Hessian could not be regularized");
    }
    const Eigen::VectorXd direction = -llt.solve(g);
    const double slope = g.dot(direction);

    double step = 1.0;
    Eigen::VectorXd candidate = x + direction;
    double f_candidate = cost(candidate);
    int backtracks = 0;
    // The epsilon-scaled slack keeps the test decidable once cost decreases
    // fall below double rounding (final Newton steps).
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(fx), 1.0);
    while (f_candidate > fx + 1e-4 * step * slope + slack && backtracks < 60) {
      step *= 0.5;
      candidate = x + step * direction;
      f_candidate = cost(candidate);
      ++backtracks;
    }
    x = candidate;
    fx = f_candidate;
    g = grad(x);
    if (g.norm() < tolerance) return x;
  }
  throw MinimizeError("minimize: no convergence in " + std::to_string(max_iterations) +
                      " iterations, final gradient norm " + std::to_string(g.norm()));
}

Eigen::VectorXd minimize(const Model& model, const Dataset& data,
                         const Eigen::VectorXd& initial, double tolerance) {
  return minimize([&](const Eigen::VectorXd& w) { return model.total_cost(w, data); },
                  [&](const Eigen::VectorXd& w) { return model.grad_total(w, data); },
                  [&](const Eigen::VectorXd& w) { return model.hessian_total(w, data).entries(); },
                  initial, tolerance);
}

namespace {

MetricMatrix scaled_inverse_hessian(const Eigen::MatrixXd& hess, double temperature) {
  MetricMatrix h(hess);
  if (!h.factorizable()) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.entries());
    std::ostringstream msg;
    msg << "laplace: singular Hessian at the mode; eigenvalues:";
    for (int i = 0; i < es.eigenvalues().size(); ++i) msg << ' ' << es.eigenvalues()[i];
    throw FactorizationError(msg.str());
  }
  const Eigen::MatrixXd inv =
      h.solve(Eigen::MatrixXd::Identity(h.dim(), h.dim()));
  return MetricMatrix(temperature * inv);
}

}  // namespace

LaplaceApprox laplace(const CostFn& cost, const GradFn& grad, const HessFn& hess,
                      const Eigen::VectorXd& initial, double temperature, double tolerance) {
  LaplaceApprox result;
  result.mode = minimize(cost, grad, hess, initial, tolerance);
  result.covariance = scaled_inverse_hessian(hess(result.mode), temperature);
  return result;
}

LaplaceApprox laplace(const Model& model, const Dataset& data, double temperature,
                      double tolerance) {
  return laplace([&](const Eigen::VectorXd& w) { return model.total_cost(w, data); },
                 [&](const Eigen::VectorXd& w) { return model.grad_total(w, data); },
                 [&](const Eigen::VectorXd& w) { return model.hessian_total(w, data).entries(); },
                 Eigen::VectorXd::Zero(model.param_dim()), temperature, tolerance);
}

Eigen::VectorXd DensityGrid::cell_masses() const {
  const int cells = static_cast<int>(grid.size()) - 1;
  Eigen::VectorXd masses(cells);
  for (int i = 0; i < cells; ++i) {
    masses[i] = 0.5 * (density[i] + density[i + 1]) * (grid[i + 1] - grid[i]);
  }
  return masses;
}

DensityGrid stationary_density_1d(const ScalarFn& cost, const ScalarFn& metric,
                                  double temperature, DensityBias bias,
                                  const GridSpec& grid_spec) {
  if (grid_spec.points < 3) throw std::invalid_argument("grid needs at least 3 points");
  if (grid_spec.hi <= grid_spec.lo) throw std::invalid_argument("grid bounds reversed");
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");

  DensityGrid out;
  out.grid = Eigen::VectorXd::LinSpaced(grid_spec.points, grid_spec.lo, grid_spec.hi);
  Eigen::VectorXd log_density(grid_spec.points);
  for (int i = 0; i < grid_spec.points; ++i) {
    const double u = out.grid[i];
    double lp = -cost(u) / temperature;
    if (bias == DensityBias::jeffreys) {
      const double g = metric(u);
      if (g <= 0.0) throw std::invalid_argument("metric must be positive on the grid");
      lp += 0.5 * std::log(g);
    }
    log_density[i] = lp;
  }
  const double shift = log_density.maxCoeff();
  out.density = (log_density.array() - shift).exp();

  const double mass = out.cell_masses().sum();
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw std::runtime_error("stationary_density_1d: density not integrable on the grid");
  }
  out.density /= mass;
  // Tails must have decayed; otherwise the grid truncates real mass (or the
  // density diverges).
  const double edge = std::max(out.density[0], out.density[grid_spec.points - 1]);
  if (edge > 1e-3 * out.density.maxCoeff()) {
    throw std::runtime_error(
        "stationary_density_1d: density has not decayed at the grid edges; "
        "widen the grid or check integrability");
  }
  return out;
}

double total_variation(const std::vector<double>& samples, const DensityGrid& oracle) {
  if (samples.empty()) throw std::invalid_argument("total_variation: empty sample set");
  const int cells = static_cast<int>(oracle.grid.size()) - 1;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(cells);
  std::int64_t outside = 0;
  const double lo = oracle.grid[0];
  const double hi = oracle.grid[cells];
  const double* begin = oracle.grid.data();
  const double* end = begin + oracle.grid.size();
  for (double s : samples) {
    if (s < lo || s >= hi) {
      ++outside;
      continue;
    }
    const int cell = static_cast<int>(std::upper_bound(begin, end, s) - begin) - 1;
    counts[std::min(cell, cells - 1)] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  const Eigen::VectorXd oracle_masses = oracle.cell_masses();
  const double oracle_total = oracle_masses.sum();
  double tv = std::abs(static_cast<double>(outside) / n - (1.0 - oracle_total));
  for (int i = 0; i < cells; ++i) {
    tv += std::abs(counts[i] / n - oracle_masses[i]);
  }
  return 0.5 * tv;
}

double total_variation(const DensityGrid& a, const DensityGrid& b) {
  if (a.grid.size() != b.grid.size() || (a.grid - b.grid).cwiseAbs().maxCoeff() > 0.0) {
    throw std::invalid_argument("total_variation: grids must coincide");
  }
  return 0.5 * (a.cell_masses() - b.cell_masses()).cwiseAbs().sum();
}

GaussianDistance gaussian_distance(const Eigen::VectorXd& sample_mean,
                                   const Eigen::MatrixXd& sample_cov,
                                   const LaplaceApprox& reference) {
  const int dim = reference.covariance.dim();
  if (sample_mean.size() != dim || sample_cov.rows() != dim || sample_cov.cols() != dim) {
    throw std::invalid_argument("gaussian_distance: dimension mismatch");
  }
  GaussianDistance out;
  const Eigen::VectorXd delta = sample_mean - reference.mode;
  out.mean_mahalanobis = std::sqrt(delta.dot(reference.covariance.solve(delta)));
  out.cov_frobenius_rel =
      (sample_cov - reference.covariance.entries()).norm() / reference.covariance.entries().norm();
  // Spectrum of Cov Cov0^-1 via the symmetric form L^-1 Cov L^-T.
  const Eigen::MatrixXd l = reference.covariance.factor();
  const Eigen::MatrixXd whitened = l.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd(l.triangularView<Eigen::Lower>().solve(sample_cov).transpose()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(whitened);
  out.eig_ratio_max = es.eigenvalues().maxCoeff();
  return out;
}

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (std::int64_t i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace

void save_density_grid(const DensityGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_density_grid: cannot open " + path);
  nlohmann::json doc;
  doc["grid"] = vector_to_json(grid.grid);
  doc["density"] = vector_to_json(grid.density);
  out << doc.dump(2) << '\n';
}

void save_laplace(const LaplaceApprox& approx, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_laplace: cannot open " + path);
  nlohmann::json doc;
  doc["mode"] = vector_to_json(approx.mode);
  nlohmann::json rows = nlohmann::json::array();
  const Eigen::MatrixXd& cov = approx.covariance.entries();
  for (std::int64_t i = 0; i < cov.rows(); ++i) {
    rows.push_back(vector_to_json(cov.row(i)));
  }
  doc["covariance"] = std::move(rows);
  out << doc.dump(2) << '\n';
}

}  // namespace sngd
