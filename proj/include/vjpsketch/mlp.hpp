#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vjpsketch/sketch.hpp"

namespace vjpsketch {

struct LinearLayer {
  Matrix w;  // d_out x d_in
  Vector b;  // d_out
  std::optional<SketchOperatorSpec> sketch;

  std::size_t in_dim() const { return w.cols(); }
  std::size_t out_dim() const { return w.rows(); }
};

/// ReLU between consecutive linear layers, softmax cross-entropy on top.
struct MlpModel {
  std::vector<LinearLayer> layers;

  static MlpModel init_kaiming(std::span<const std::size_t> widths, Rng& rng);

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
  void validate() const;
};

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each linear layer, B x d_in
  Matrix logits;               // B x C
};

/// Forward pass; fills the cache when given one.
Matrix forward(const MlpModel& model, const Matrix& x0, ForwardCache* cache = nullptr);

/// Mean softmax cross-entropy over the batch (log-sum-exp stabilized).
double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

/// d(mean loss)/d(logits) = (softmax - onehot) / B.
Matrix softmax_cross_entropy_grad(const Matrix& logits, const std::vector<int>& labels);

std::size_t count_correct(const Matrix& logits, const std::vector<int>& labels);

enum class BackwardMode { Exact, Sketched };

struct BackwardState {
  std::vector<LinearGrads> layers;  // per-layer dX, dW, db
  Matrix seed;                      // loss gradient entering the recursion
};

/// Reverse pass. The seed at the output is always exact; in sketched mode each
/// layer with a sketch spec routes through its randomized estimator on an
/// independent stream derived from (rng seed, layer index, step).
BackwardState backward(const MlpModel& model, const ForwardCache& cache,
                       const std::vector<int>& labels, BackwardMode mode,
                       const Rng& rng_root, std::uint64_t step);

/// SGD update with global-norm clipping. Throws if the gradient is not finite.
void sgd_step(MlpModel& model, const BackwardState& grads, double lr, double clip_norm);

}  // namespace vjpsketch
