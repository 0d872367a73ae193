#include "sngd/mnist.hpp"

#include <fstream>
#include <vector>

namespace sngd {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;  // 2051
constexpr std::uint32_t kLabelMagic = 0x00000801;  // 2049

[[noreturn]] void fail(const std::string& path, std::size_t offset, const std::string& what) {
  throw std::runtime_error(path + ": " + what + " at byte offset " + std::to_string(offset));
}

std::uint32_t read_be_u32(std::istream& in, const std::string& path, std::size_t& offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) fail(path, offset, "truncated header");
  offset += 4;
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::size_t offset = 0;
  const std::uint32_t magic = read_be_u32(in, path, offset);
  if (magic != kImageMagic) {
    fail(path, 0, "bad image magic 0x" + std::to_string(magic) + " (expected 2051)");
  }
  const std::uint32_t count = read_be_u32(in, path, offset);
  const std::uint32_t rows = read_be_u32(in, path, offset);
  const std::uint32_t cols = read_be_u32(in, path, offset);
  const std::size_t n_pixels = std::size_t(rows) * cols;
  IdxImages images;
  images.rows = static_cast<int>(rows);
  images.cols = static_cast<int>(cols);
  images.pixels.resize(count, static_cast<std::int64_t>(n_pixels));
  std::vector<unsigned char> buf(n_pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n_pixels));
    if (!in) fail(path, offset, "truncated image " + std::to_string(i));
    offset += n_pixels;
    for (std::size_t j = 0; j < n_pixels; ++j) {
      images.pixels(i, static_cast<std::int64_t>(j)) = buf[j] / 255.0;
    }
  }
  return images;
}

Eigen::VectorXi load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::size_t offset = 0;
  const std::uint32_t magic = read_be_u32(in, path, offset);
  if (magic != kLabelMagic) {
    fail(path, 0, "bad label magic 0x" + std::to_string(magic) + " (expected 2049)");
  }
  const std::uint32_t count = read_be_u32(in, path, offset);
  Eigen::VectorXi labels(count);
  std::vector<unsigned char> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
  if (!in) fail(path, offset, "truncated label data");
  for (std::uint32_t i = 0; i < count; ++i) labels[i] = buf[i];
  return labels;
}

Dataset load_mnist_projected(const std::string& image_path, const std::string& label_path,
                             int projection_dim, std::int64_t n_examples, Rng& rng) {
  const IdxImages images = load_idx_images(image_path);
  const Eigen::VectorXi labels = load_idx_labels(label_path);
  if (images.pixels.rows() != labels.size()) {
    throw std::runtime_error("image count " + std::to_string(images.pixels.rows()) +
                             " != label count " + std::to_string(labels.size()));
  }
  if (n_examples > images.pixels.rows()) {
    throw std::runtime_error("requested " + std::to_string(n_examples) + " examples, file has " +
                             std::to_string(images.pixels.rows()));
  }
  const std::int64_t n_pixels = images.pixels.cols();
  Eigen::MatrixXd projection(n_pixels, projection_dim);
  for (std::int64_t i = 0; i < n_pixels; ++i)
    for (int j = 0; j < projection_dim; ++j) projection(i, j) = rng.normal();
  Dataset data;
  data.inputs = images.pixels.topRows(n_examples) * projection;
  data.labels = labels.head(n_examples);
  return data;
}

}  // namespace sngd
