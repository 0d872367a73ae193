#include "sngd/models.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sngd {

namespace {

constexpr double kProbFloor = 1e-12;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// log(1 + e^t) without overflow.
double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

// -log p with p clamped to [1e-12, 1 - 1e-12], given the exact -log p.
double clamp_loss(double neg_log_p) {
  const double hi = -std::log(kProbFloor);
  const double lo = -std::log1p(-kProbFloor);
  return std::min(std::max(neg_log_p, lo), hi);
}

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& logits) {
  const Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
  Eigen::ArrayXd e = shifted.exp();
  return (e / e.sum()).matrix();
}

struct MlpLayout {
  int n, h, c;
  int w1_off = 0, b1_off, w2_off, b2_off;
  explicit MlpLayout(const ModelSpec& s) : n(s.input_dim), h(s.hidden_units), c(s.class_count) {
    b1_off = h * n;
    w2_off = b1_off + h;
    b2_off = w2_off + c * h;
  }
  int total() const { return b2_off + c; }
};

}  // namespace

Model::Model(ModelSpec spec) : spec_(spec) {
  if (spec_.input_dim < 1) throw std::invalid_argument("Model: input_dim must be >= 1");
  switch (spec_.kind) {
    case ModelKind::logistic:
      if (spec_.class_count != 2)
        throw std::invalid_argument("Model: logistic regression is binary");
      param_dim_ = spec_.input_dim;
      break;
    case ModelKind::softmax:
      if (spec_.class_count < 2)
        throw std::invalid_argument("Model: class_count must be >= 2");
      param_dim_ = spec_.class_count * spec_.input_dim;
      break;
    case ModelKind::mlp:
      if (spec_.hidden_units < 1)
        throw std::invalid_argument("Model: mlp requires hidden_units >= 1");
      if (spec_.class_count < 2)
        throw std::invalid_argument("Model: class_count must be >= 2");
      param_dim_ = MlpLayout(spec_).total();
      break;
  }
  if (spec_.l2 < 0.0) throw std::invalid_argument("Model: l2 must be >= 0");
}

int Model::class_to_label(int class_index) const {
  if (class_index < 0 || class_index >= spec_.class_count)
    throw std::invalid_argument("class index out of range");
  if (spec_.kind == ModelKind::logistic) return class_index == 0 ? -1 : 1;
  return class_index;
}

int Model::label_to_class(int label) const {
  if (spec_.kind == ModelKind::logistic) {
    if (label != -1 && label != 1)
      throw std::invalid_argument("logistic labels must be -1 or +1");
    return label == -1 ? 0 : 1;
  }
  if (label < 0 || label >= spec_.class_count)
    throw std::invalid_argument("label out of range");
  return label;
}

void Model::check_input(const Eigen::VectorXd& w, const Eigen::VectorXd& input) const {
  if (w.size() != param_dim_)
    throw std::invalid_argument("parameter vector has dim " + std::to_string(w.size()) +
                                ", expected " + std::to_string(param_dim_));
  if (input.size() != spec_.input_dim)
    throw std::invalid_argument("input has dim " + std::to_string(input.size()) +
                                ", expected " + std::to_string(spec_.input_dim));
}

Eigen::VectorXd Model::predict(const Eigen::VectorXd& w, const Eigen::VectorXd& input) const {
  check_input(w, input);
  switch (spec_.kind) {
    case ModelKind::logistic: {
      const double s = w.dot(input);
      Eigen::VectorXd p(2);
      p << sigmoid(s), sigmoid(-s);  // P(y=-1), P(y=+1)
      return p;
    }
    case ModelKind::softmax: {
      const Eigen::Map<const Eigen::MatrixXd> weights(w.data(), spec_.class_count,
                                                      spec_.input_dim);
      return stable_softmax(weights * input);
    }
    case ModelKind::mlp: {
      const MlpLayout lay(spec_);
      const Eigen::Map<const Eigen::MatrixXd> w1(w.data(), lay.h, lay.n);
      const Eigen::Map<const Eigen::VectorXd> b1(w.data() + lay.b1_off, lay.h);
      const Eigen::Map<const Eigen::MatrixXd> w2(w.data() + lay.w2_off, lay.c, lay.h);
      const Eigen::Map<const Eigen::VectorXd> b2(w.data() + lay.b2_off, lay.c);
      const Eigen::VectorXd hidden = ((w1 * input + b1).array().max(0.0)).matrix();
      return stable_softmax(w2 * hidden + b2);
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::MatrixXd Model::predict_batch(const Eigen::VectorXd& w,
                                     const Eigen::MatrixXd& inputs) const {
  if (w.size() != param_dim_) throw std::invalid_argument("parameter dim mismatch");
  if (inputs.cols() != spec_.input_dim) throw std::invalid_argument("input dim mismatch");
  const std::int64_t n = inputs.rows();
  Eigen::MatrixXd logits;
  switch (spec_.kind) {
    case ModelKind::logistic: {
      const Eigen::VectorXd s = inputs * w;
      Eigen::MatrixXd p(n, 2);
      p.col(0) = (1.0 + (-s.array()).exp()).inverse();  // P(y = -1)
      p.col(1) = (1.0 + s.array().exp()).inverse();     // P(y = +1)
      return p;
    }
    case ModelKind::softmax: {
      const Eigen::Map<const Eigen::MatrixXd> weights(w.data(), spec_.class_count,
                                                      spec_.input_dim);
      logits = inputs * weights.transpose();
      break;
    }
    case ModelKind::mlp: {
      const MlpLayout lay(spec_);
      const Eigen::Map<const Eigen::MatrixXd> w1(w.data(), lay.h, lay.n);
      const Eigen::Map<const Eigen::VectorXd> b1(w.data() + lay.b1_off, lay.h);
      const Eigen::Map<const Eigen::MatrixXd> w2(w.data() + lay.w2_off, lay.c, lay.h);
      const Eigen::Map<const Eigen::VectorXd> b2(w.data() + lay.b2_off, lay.c);
      Eigen::MatrixXd hidden = inputs * w1.transpose();
      hidden.rowwise() += b1.transpose();
      hidden = hidden.cwiseMax(0.0);
      logits = hidden * w2.transpose();
      logits.rowwise() += b2.transpose();
      break;
    }
  }
  const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
  Eigen::MatrixXd p = (logits.colwise() - row_max).array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

double Model::loss(const Eigen::VectorXd& w, const Eigen::VectorXd& input, int label) const {
  check_input(w, input);
  if (spec_.kind == ModelKind::logistic) {
    const double s = w.dot(input);
    return clamp_loss(softplus(static_cast<double>(label) * s));
  }
  // -log softmax_c = logsumexp(z) - z_c, computed without forming p.
  const int c = label_to_class(label);
  Eigen::VectorXd logits;
  if (spec_.kind == ModelKind::softmax) {
    const Eigen::Map<const Eigen::MatrixXd> weights(w.data(), spec_.class_count,
                                                    spec_.input_dim);
    logits = weights * input;
  } else {
    const MlpLayout lay(spec_);
    const Eigen::Map<const Eigen::MatrixXd> w1(w.data(), lay.h, lay.n);
    const Eigen::Map<const Eigen::VectorXd> b1(w.data() + lay.b1_off, lay.h);
    const Eigen::Map<const Eigen::MatrixXd> w2(w.data() + lay.w2_off, lay.c, lay.h);
    const Eigen::Map<const Eigen::VectorXd> b2(w.data() + lay.b2_off, lay.c);
    const Eigen::VectorXd hidden = ((w1 * input + b1).array().max(0.0)).matrix();
    logits = w2 * hidden + b2;
  }
  const double zmax = logits.maxCoeff();
  const double lse = zmax + std::log((logits.array() - zmax).exp().sum());
  return clamp_loss(lse - logits[c]);
}

Eigen::VectorXd Model::grad(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                            int label) const {
  return grad_for_class(w, input, label_to_class(label));
}

Eigen::VectorXd Model::grad_for_class(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                                      int class_index) const {
  Eigen::VectorXd out(param_dim_);
  grad_for_class_into(w, input, class_index, out);
  return out;
}

void Model::grad_for_class_into(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                                int class_index, Eigen::Ref<Eigen::VectorXd> out) const {
  check_input(w, input);
  if (class_index < 0 || class_index >= spec_.class_count)
    throw std::invalid_argument("class index out of range");
  if (out.size() != param_dim_) throw std::invalid_argument("gradient buffer size mismatch");
  switch (spec_.kind) {
    case ModelKind::logistic: {
      const double y = class_index == 0 ? -1.0 : 1.0;
      const double s = w.dot(input);
      out = (y * sigmoid(y * s)) * input;
      return;
    }
    case ModelKind::softmax: {
      const Eigen::Map<const Eigen::MatrixXd> weights(w.data(), spec_.class_count,
                                                      spec_.input_dim);
      Eigen::VectorXd delta = stable_softmax(weights * input);
      delta[class_index] -= 1.0;
      Eigen::Map<Eigen::MatrixXd>(out.data(), spec_.class_count, spec_.input_dim) =
          delta * input.transpose();
      return;
    }
    case ModelKind::mlp: {
      const MlpLayout lay(spec_);
      const Eigen::Map<const Eigen::MatrixXd> w1(w.data(), lay.h, lay.n);
      const Eigen::Map<const Eigen::VectorXd> b1(w.data() + lay.b1_off, lay.h);
      const Eigen::Map<const Eigen::MatrixXd> w2(w.data() + lay.w2_off, lay.c, lay.h);
      const Eigen::Map<const Eigen::VectorXd> b2(w.data() + lay.b2_off, lay.c);
      const Eigen::VectorXd pre = w1 * input + b1;
      const Eigen::VectorXd hidden = pre.array().max(0.0).matrix();
      Eigen::VectorXd delta2 = stable_softmax(w2 * hidden + b2);
      delta2[class_index] -= 1.0;
      // Subgradient at exactly 0 is 0: strict comparison.
      const Eigen::ArrayXd mask = (pre.array() > 0.0).cast<double>();
      const Eigen::VectorXd delta1 = ((w2.transpose() * delta2).array() * mask).matrix();
      Eigen::Map<Eigen::MatrixXd>(out.data(), lay.h, lay.n) = delta1 * input.transpose();
      out.segment(lay.b1_off, lay.h) = delta1;
      Eigen::Map<Eigen::MatrixXd>(out.data() + lay.w2_off, lay.c, lay.h) =
          delta2 * hidden.transpose();
      out.segment(lay.b2_off, lay.c) = delta2;
      return;
    }
  }
}

double Model::total_cost(const Eigen::VectorXd& w, const Dataset& data) const {
  double cost = 0.5 * spec_.l2 * w.squaredNorm();
  for (std::int64_t i = 0; i < data.size(); ++i) {
    cost += loss(w, data.inputs.row(i), data.labels[i]);
  }
  return cost;
}

Eigen::VectorXd Model::grad_total(const Eigen::VectorXd& w, const Dataset& data) const {
  Eigen::VectorXd total = spec_.l2 * w;
  Eigen::VectorXd buffer(param_dim_);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    grad_for_class_into(w, data.inputs.row(i), label_to_class(data.labels[i]), buffer);
    total += buffer;
  }
  return total;
}

int sample_class_index(const Eigen::VectorXd& probabilities, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (int c = 0; c < probabilities.size(); ++c) {
    cum += probabilities[c];
    if (u < cum) return c;
  }
  return static_cast<int>(probabilities.size()) - 1;
}

int Model::sample_class(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                        Rng& rng) const {
  return sample_class_index(predict(w, input), rng);
}

int Model::sample_label(const Eigen::VectorXd& w, const Eigen::VectorXd& input,
                        Rng& rng) const {
  return class_to_label(sample_class(w, input, rng));
}

MetricMatrix Model::hessian_total(const Eigen::VectorXd& w, const Dataset& data) const {
  if (spec_.kind != ModelKind::logistic) {
    throw UnsupportedModelError("hessian_total: analytic Hessian only for logistic");
  }
  if (w.size() != param_dim_) throw std::invalid_argument("parameter dim mismatch");
  const int n = spec_.input_dim;
  // sigma(1-sigma) is even in the logit, so labels drop out.
  const Eigen::VectorXd logits = data.inputs * w;
  Eigen::VectorXd weights(data.size());
  for (std::int64_t i = 0; i < data.size(); ++i) {
    const double s = sigmoid(logits[i]);
    weights[i] = s * (1.0 - s);
  }
  const Eigen::MatrixXd scaled = data.inputs.array().colwise() * weights.array();
  Eigen::MatrixXd h = spec_.l2 * Eigen::MatrixXd::Identity(n, n);
  h += data.inputs.transpose() * scaled;
  return MetricMatrix(h);
}

Dataset generate_synthetic_logistic(std::int64_t n_examples, int input_dim,
                                    const Eigen::VectorXd& w_true, Rng& rng) {
  if (w_true.size() != input_dim)
    throw std::invalid_argument("generate_synthetic_logistic: w_true dim mismatch");
  Model model(ModelSpec{ModelKind::logistic, input_dim, 2, 0, 0.0});
  return generate_synthetic_classification(model, w_true, n_examples, rng);
}

Dataset generate_synthetic_classification(const Model& teacher,
                                          const Eigen::VectorXd& w_teacher,
                                          std::int64_t n_examples, Rng& rng,
                                          double input_scale) {
  Dataset data;
  const int n = teacher.spec().input_dim;
  data.inputs.resize(n_examples, n);
  data.labels.resize(n_examples);
  Eigen::VectorXd x(n);
  for (std::int64_t i = 0; i < n_examples; ++i) {
    for (int j = 0; j < n; ++j) x[j] = input_scale * rng.normal();
    data.inputs.row(i) = x;
    data.labels[i] = teacher.sample_label(w_teacher, x, rng);
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.input_dim(); ++j) out << data.inputs(i, j) << ' ';
    out << data.labels[i] << '\n';
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (values.empty()) throw std::runtime_error("malformed row in " + path);
    labels.push_back(static_cast<int>(values.back()));
    values.pop_back();
    rows.push_back(std::move(values));
  }
  Dataset data;
  if (rows.empty()) return data;
  data.inputs.resize(static_cast<std::int64_t>(rows.size()),
                     static_cast<std::int64_t>(rows[0].size()));
  data.labels.resize(static_cast<std::int64_t>(labels.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw std::runtime_error("inconsistent column count in " + path);
    for (size_t j = 0; j < rows[i].size(); ++j)
      data.inputs(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];
    data.labels[static_cast<std::int64_t>(i)] = labels[i];
  }
  return data;
}

}  // namespace sngd
