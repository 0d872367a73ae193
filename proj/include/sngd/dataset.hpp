#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace sngd {

/// Supervised training set. Labels are categorical: class indices 0..C-1 for
/// softmax-family models, and +/-1 for binary logistic regression.
struct Dataset {
  Eigen::MatrixXd inputs;  // N x n, one example per row
  Eigen::VectorXi labels;  // length N

  std::int64_t size() const { return inputs.rows(); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
};

/// Indices of the examples selected for one update, drawn without
/// replacement.
struct Minibatch {
  std::vector<int> indices;

  int size() const { return static_cast<int>(indices.size()); }
};

/// Columnar text format: one example per row, whitespace-separated features,
/// label last.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace sngd
