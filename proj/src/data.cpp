#include "vjpsketch/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vjpsketch {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size()) throw std::runtime_error("truncated IDX file: " + path);
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void write_be32(std::ofstream& out, std::uint32_t value) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(value >> 24),
                                  static_cast<unsigned char>(value >> 16),
                                  static_cast<unsigned char>(value >> 8),
                                  static_cast<unsigned char>(value)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::string hex_magic(std::uint32_t magic) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", magic);
  return buf;
}

}  // namespace

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  require(begin <= end && end <= size(), "Dataset::slice: range out of bounds");
  Dataset out;
  out.images = Matrix(end - begin, dim());
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  for (std::size_t j = 0; j < dim(); ++j)
    for (std::size_t i = begin; i < end; ++i) out.images(i - begin, j) = images(i, j);
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto image_bytes = read_file(images_path);
  const std::uint32_t image_magic = read_be32(image_bytes, 0, images_path);
  if (image_magic != 0x00000803u)
    throw std::runtime_error("bad IDX magic " + hex_magic(image_magic) + " in " +
                             images_path + " (expected 0x00000803 for images)");
  const std::uint32_t n = read_be32(image_bytes, 4, images_path);
  const std::uint32_t rows = read_be32(image_bytes, 8, images_path);
  const std::uint32_t cols = read_be32(image_bytes, 12, images_path);
  const std::size_t pixels = std::size_t(n) * rows * cols;
  if (image_bytes.size() != 16 + pixels)
    throw std::runtime_error("truncated IDX file: " + images_path + " (expected " +
                             std::to_string(16 + pixels) + " bytes, got " +
                             std::to_string(image_bytes.size()) + ")");

  const auto label_bytes = read_file(labels_path);
  const std::uint32_t label_magic = read_be32(label_bytes, 0, labels_path);
  if (label_magic != 0x00000801u)
    throw std::runtime_error("bad IDX magic " + hex_magic(label_magic) + " in " +
                             labels_path + " (expected 0x00000801 for labels)");
  const std::uint32_t n_labels = read_be32(label_bytes, 4, labels_path);
  if (n_labels != n)
    throw std::runtime_error("IDX count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(n_labels) + " labels");
  if (label_bytes.size() != 8 + n_labels)
    throw std::runtime_error("truncated IDX file: " + labels_path);

  Dataset out;
  const std::size_t dim = std::size_t(rows) * cols;
  out.images = Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      out.images(i, j) = static_cast<double>(image_bytes[16 + i * dim + j]) / 255.0;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = label_bytes[8 + i];
  return out;
}

void save_idx(const Dataset& dataset, const std::string& images_path,
              const std::string& labels_path) {
  const std::size_t n = dataset.size();
  const std::size_t dim = dataset.dim();
  // Emit square images when possible (MNIST: 784 -> 28x28), else n x dim x 1.
  std::uint32_t rows = static_cast<std::uint32_t>(std::lround(std::sqrt(double(dim))));
  std::uint32_t cols = rows;
  if (std::size_t(rows) * cols != dim) {
    rows = static_cast<std::uint32_t>(dim);
    cols = 1;
  }

  std::ofstream images(images_path, std::ios::binary);
  if (!images) throw std::runtime_error("cannot write file: " + images_path);
  write_be32(images, 0x00000803u);
  write_be32(images, static_cast<std::uint32_t>(n));
  write_be32(images, rows);
  write_be32(images, cols);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = dataset.images(i, j);
      const long byte = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
      images.put(static_cast<char>(static_cast<unsigned char>(byte)));
    }

  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw std::runtime_error("cannot write file: " + labels_path);
  write_be32(labels, 0x00000801u);
  write_be32(labels, static_cast<std::uint32_t>(n));
  for (int label : dataset.labels) labels.put(static_cast<char>(label));
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  require(spec.n_classes >= 2, "make_synthetic: need at least 2 classes");
  require(spec.dim >= 1, "make_synthetic: dim must be >= 1");

  Rng rng(spec.seed);
  Rng mean_stream = rng.derive(0x6d);
  Rng noise_stream = rng.derive(0x6e);

  std::vector<Vector> means(spec.n_classes, Vector(spec.dim, 0.0));
  for (int c = 0; c < spec.n_classes; ++c)
    for (std::size_t j = 0; j < spec.dim; ++j)
      means[c][j] = spec.separation * mean_stream.normal();

  Dataset out;
  out.images = Matrix(spec.n_samples, spec.dim);
  out.labels.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const int c = static_cast<int>(i % spec.n_classes);
    out.labels[i] = c;
    for (std::size_t j = 0; j < spec.dim; ++j)
      out.images(i, j) = means[c][j] + noise_stream.normal();
  }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace vjpsketch
