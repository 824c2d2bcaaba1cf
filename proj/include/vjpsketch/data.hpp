#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vjpsketch/matrix.hpp"

namespace vjpsketch {

struct Dataset {
  Matrix images;            // N x dim, values in [0,1]
  std::vector<int> labels;  // values in [0, 9]

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return images.cols(); }

  /// Rows `begin..end` as a new dataset (validation splits, subsets).
  Dataset slice(std::size_t begin, std::size_t end) const;
};

/// Parse big-endian IDX pairs: magic 0x00000803 with dims (N, rows, cols) for
/// images, 0x00000801 with dims (N,) for labels. Counts are cross-checked and
/// pixels scaled to [0,1] by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Inverse of load_idx; pixel bytes are round(v * 255).
void save_idx(const Dataset& dataset, const std::string& images_path,
              const std::string& labels_path);

struct SyntheticSpec {
  std::size_t n_samples = 1000;
  std::size_t dim = 16;
  int n_classes = 2;
  std::uint64_t seed = 0;
  double separation = 3.0;  // scale of the class-mean spread vs unit noise
};

/// Class-conditional gaussian blobs, deterministic in the seed.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace vjpsketch
