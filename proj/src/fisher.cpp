#include "sngd/fisher.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "json.hpp"

namespace sngd {

namespace {

// Accumulates sum of v v^T via blocked rank updates; keeps peak memory flat
// regardless of how many outer products are folded in. Vectors are staged as
// columns so each slot is contiguous.
class OuterProductAccumulator {
 public:
  OuterProductAccumulator(int dim, int block_size = 1024)
      : sum_(Eigen::MatrixXd::Zero(dim, dim)), block_(dim, block_size), used_(0) {}

  Eigen::Ref<Eigen::VectorXd> next_slot() {
    if (used_ == block_.cols()) flush();
    return block_.col(used_++);
  }

  void scale_last(double factor) { block_.col(used_ - 1) *= factor; }

  Eigen::MatrixXd take(double scale) {
    flush();
    sum_ = sum_.selfadjointView<Eigen::Lower>();
    return scale * sum_;
  }

 private:
  void flush() {
    if (used_ == 0) return;
    sum_.selfadjointView<Eigen::Lower>().rankUpdate(block_.leftCols(used_), 1.0);
    used_ = 0;
  }

  Eigen::MatrixXd sum_;
  Eigen::MatrixXd block_;
  Eigen::Index used_;
};

}  // namespace

FisherEstimate fisher_exact(const Model& model, const Eigen::VectorXd& w,
                            const Eigen::MatrixXd& inputs) {
  const int classes = model.class_count();
  if (classes > 50) {
    throw UnsupportedModelError("fisher_exact: class enumeration guarded above 50 classes");
  }
  const std::int64_t n = inputs.rows();
  OuterProductAccumulator acc(model.param_dim());
  Eigen::VectorXd x(inputs.cols());
  for (std::int64_t i = 0; i < n; ++i) {
    x = inputs.row(i);
    const Eigen::VectorXd p = model.predict(w, x);
    for (int c = 0; c < classes; ++c) {
      auto row = acc.next_slot();
      model.grad_for_class_into(w, x, c, row);
      acc.scale_last(std::sqrt(p[c]));
    }
  }
  FisherEstimate est;
  est.matrix = MetricMatrix::from_symmetric(acc.take(1.0 / static_cast<double>(n)));
  est.source = FisherSource::exact_expectation;
  est.sample_size = n;
  return est;
}

FisherEstimate fisher_sampled(const Model& model, const Eigen::VectorXd& w,
                              const Eigen::MatrixXd& inputs, Rng& rng) {
  const std::int64_t n = inputs.rows();
  OuterProductAccumulator acc(model.param_dim());
  Eigen::VectorXd x(inputs.cols());
  for (std::int64_t i = 0; i < n; ++i) {
    x = inputs.row(i);
    const int c = sample_class_index(model.predict(w, x), rng);
    auto row = acc.next_slot();
    model.grad_for_class_into(w, x, c, row);
  }
  FisherEstimate est;
  est.matrix = MetricMatrix::from_symmetric(acc.take(1.0 / static_cast<double>(n)));
  est.source = FisherSource::sampled_labels;
  est.sample_size = n;
  return est;
}

FisherEstimate fisher_empirical(const Model& model, const Eigen::VectorXd& w,
                                const Dataset& data) {
  const std::int64_t n = data.size();
  OuterProductAccumulator acc(model.param_dim());
  Eigen::VectorXd x(data.input_dim());
  for (std::int64_t i = 0; i < n; ++i) {
    x = data.inputs.row(i);
    auto row = acc.next_slot();
    model.grad_for_class_into(w, x, model.label_to_class(data.labels[i]), row);
  }
  FisherEstimate est;
  est.matrix = MetricMatrix::from_symmetric(acc.take(1.0 / static_cast<double>(n)));
  est.source = FisherSource::empirical;
  est.sample_size = n;
  return est;
}

MetricMatrix gradient_noise_covariance(const Model& model, const Eigen::VectorXd& w,
                                       const Dataset& data) {
  const std::int64_t n = data.size();
  OuterProductAccumulator acc(model.param_dim());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(model.param_dim());
  Eigen::VectorXd x(data.input_dim());
  for (std::int64_t i = 0; i < n; ++i) {
    x = data.inputs.row(i);
    auto row = acc.next_slot();
    model.grad_for_class_into(w, x, model.label_to_class(data.labels[i]), row);
    mean += row;
  }
  mean /= static_cast<double>(n);
  Eigen::MatrixXd sigma = acc.take(1.0 / static_cast<double>(n));
  sigma -= mean * mean.transpose();
  return MetricMatrix::from_symmetric(std::move(sigma));
}

MetricDerivatives fisher_derivatives(const Model& model, const Eigen::VectorXd& w,
                                     const Eigen::MatrixXd& inputs, DerivativeMode mode,
                                     double fd_step) {
  if (mode == DerivativeMode::analytic) {
    if (model.spec().kind != ModelKind::logistic) {
      throw UnsupportedModelError("fisher_derivatives: analytic mode requires logistic");
    }
    const std::int64_t n = inputs.rows();
    const int dim = model.param_dim();
    MetricDerivatives out;
    out.per_coordinate.assign(dim, Eigen::MatrixXd::Zero(dim, dim));
    for (std::int64_t i = 0; i < n; ++i) {
      const Eigen::VectorXd x = inputs.row(i);
      const double s = 1.0 / (1.0 + std::exp(-w.dot(x)));
      const double coeff = s * (1.0 - s) * (1.0 - 2.0 * s) / static_cast<double>(n);
      const Eigen::MatrixXd outer = x * x.transpose();
      for (int j = 0; j < dim; ++j) {
        out.per_coordinate[j] += coeff * x[j] * outer;
      }
    }
    return out;
  }
  return matrix_fd_derivatives(
      [&](const Eigen::VectorXd& p) { return fisher_exact(model, p, inputs).matrix.entries(); },
      w, fd_step);
}

MetricDerivatives matrix_fd_derivatives(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& matrix_fn,
    const Eigen::VectorXd& w, double fd_step) {
  MetricDerivatives out;
  Eigen::VectorXd shifted = w;
  for (int j = 0; j < w.size(); ++j) {
    shifted[j] = w[j] + fd_step;
    const Eigen::MatrixXd plus = matrix_fn(shifted);
    shifted[j] = w[j] - fd_step;
    const Eigen::MatrixXd minus = matrix_fn(shifted);
    shifted[j] = w[j];
    out.per_coordinate.push_back((plus - minus) / (2.0 * fd_step));
  }
  return out;
}

FisherMovingAverage moving_average_update(const FisherMovingAverage& state,
                                          const FisherEstimate& incoming) {
  if (state.smoothing < 0.0 || state.smoothing >= 1.0) {
    throw std::invalid_argument("moving_average_update: smoothing must lie in [0, 1)");
  }
  FisherMovingAverage next;
  next.smoothing = state.smoothing;
  if (state.current.matrix.dim() == 0 || state.smoothing == 0.0) {
    next.current = incoming;
    return next;
  }
  if (state.current.matrix.dim() != incoming.matrix.dim()) {
    throw std::invalid_argument("moving_average_update: dimension mismatch");
  }
  const double rho = state.smoothing;
  next.current.matrix = MetricMatrix(rho * state.current.matrix.entries() +
                                     (1.0 - rho) * incoming.matrix.entries());
  next.current.source = incoming.source;
  next.current.sample_size =
      static_cast<std::int64_t>(rho * static_cast<double>(state.current.sample_size) +
                                (1.0 - rho) * static_cast<double>(incoming.sample_size));
  return next;
}

namespace {

const char* source_name(FisherSource source) {
  switch (source) {
    case FisherSource::exact_expectation: return "exact_expectation";
    case FisherSource::sampled_labels: return "sampled_labels";
    case FisherSource::empirical: return "empirical";
  }
  return "unknown";
}

}  // namespace

void save_fisher(const FisherEstimate& estimate, const std::string& format,
                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_fisher: cannot open " + path);
  const Eigen::MatrixXd& m = estimate.matrix.entries();
  if (format == "text") {
    out << std::setprecision(17);
    for (std::int64_t i = 0; i < m.rows(); ++i) {
      for (std::int64_t j = 0; j < m.cols(); ++j) {
        if (j) out << ' ';
        out << m(i, j);
      }
      out << '\n';
    }
  } else if (format == "json") {
    nlohmann::json doc;
    doc["source"] = source_name(estimate.source);
    doc["sample_size"] = estimate.sample_size;
    doc["dim"] = m.rows();
    nlohmann::json rows = nlohmann::json::array();
    for (std::int64_t i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::int64_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(std::move(row));
    }
    doc["entries"] = std::move(rows);
    out << doc.dump(2) << '\n';
  } else {
    throw std::invalid_argument("save_fisher: format must be text or json");
  }
  if (!out) throw std::runtime_error("save_fisher: write to " + path + " failed");
}

}  // namespace sngd
