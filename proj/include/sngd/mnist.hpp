#pragma once

#include <cstdint>
#include <string>

#include "sngd/dataset.hpp"
#include "sngd/rng.hpp"

namespace sngd {

/// Raw IDX contents: images flattened row-major to [0,1] doubles.
struct IdxImages {
  Eigen::MatrixXd pixels;  // count x (rows*cols)
  int rows = 0;
  int cols = 0;
};

/// Parses an IDX image file (big-endian, magic 0x00000803). Malformed files
/// raise std::runtime_error with the failing byte offset.
IdxImages load_idx_images(const std::string& path);

/// Parses an IDX label file (magic 0x00000801).
Eigen::VectorXi load_idx_labels(const std::string& path);

/// Loads an MNIST-style pair, scales pixels to [0,1], projects each image
/// through an n_pixels x projection_dim matrix with unit-Gaussian entries
/// drawn from rng (so the projection is fixed by the seed), and keeps the
/// first n_examples rows.
Dataset load_mnist_projected(const std::string& image_path, const std::string& label_path,
                             int projection_dim, std::int64_t n_examples, Rng& rng);

}  // namespace sngd
