#include "vjpsketch/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace vjpsketch {

MlpModel MlpModel::init_kaiming(std::span<const std::size_t> widths, Rng& rng) {
  require(widths.size() >= 2, "MlpModel: need at least input and output widths");
  MlpModel model;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t d_in = widths[l], d_out = widths[l + 1];
    Rng stream = rng.derive(0x57u, l);
    const double bound = std::sqrt(6.0 / static_cast<double>(d_in));
    LinearLayer layer;
    layer.w = Matrix::random_uniform(d_out, d_in, stream, -bound, bound);
    layer.b.assign(d_out, 0.0);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

void MlpModel::validate() const {
  require(!layers.empty(), "MlpModel: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(layers[l].w.all_finite(), "MlpModel: non-finite weights");
    require(layers[l].b.size() == layers[l].out_dim(), "MlpModel: bias length mismatch");
    if (l + 1 < layers.size())
      require(layers[l].out_dim() == layers[l + 1].in_dim(),
              "MlpModel: adjacent layer dimensions do not match");
    if (layers[l].sketch) layers[l].sketch->validate();
  }
}

Matrix forward(const MlpModel& model, const Matrix& x0, ForwardCache* cache) {
  require(x0.cols() == model.input_dim(), "forward: input width mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->inputs.reserve(model.layers.size());
  }

  Matrix x = x0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LinearLayer& layer = model.layers[l];
    if (cache) cache->inputs.push_back(x);
    Matrix y = matmul_a_bt(x, layer.w);
    for (std::size_t j = 0; j < y.cols(); ++j) {
      double* col = y.col(j);
      const double bj = layer.b[j];
      for (std::size_t i = 0; i < y.rows(); ++i) col[i] += bj;
    }
    if (l + 1 < model.layers.size()) {
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(y);
  }
  if (cache) cache->logits = x;
  return x;
}

double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  require(logits.rows() == labels.size(), "loss: batch size mismatch");
  const std::size_t batch = logits.rows(), classes = logits.cols();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double max_logit = logits(b, 0);
    for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits(b, c));
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum_exp += std::exp(logits(b, c) - max_logit);
    const int label = labels[b];
    require(label >= 0 && static_cast<std::size_t>(label) < classes, "loss: label out of range");
    total += std::log(sum_exp) - (logits(b, label) - max_logit);
  }
  return total / static_cast<double>(batch);
}

Matrix softmax_cross_entropy_grad(const Matrix& logits, const std::vector<int>& labels) {
  require(logits.rows() == labels.size(), "loss grad: batch size mismatch");
  const std::size_t batch = logits.rows(), classes = logits.cols();
  Matrix grad(batch, classes);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double max_logit = logits(b, 0);
    for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits(b, c));
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum_exp += std::exp(logits(b, c) - max_logit);
    for (std::size_t c = 0; c < classes; ++c)
      grad(b, c) = std::exp(logits(b, c) - max_logit) / sum_exp * inv_batch;
    grad(b, labels[b]) -= inv_batch;
  }
  return grad;
}

std::size_t count_correct(const Matrix& logits, const std::vector<int>& labels) {
  std::size_t correct = 0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(b, c) > logits(b, best)) best = c;
    if (static_cast<int>(best) == labels[b]) ++correct;
  }
  return correct;
}

BackwardState backward(const MlpModel& model, const ForwardCache& cache,
                       const std::vector<int>& labels, BackwardMode mode,
                       const Rng& rng_root, std::uint64_t step) {
  require(cache.inputs.size() == model.layers.size(), "backward: forward cache missing");

  BackwardState state;
  state.layers.resize(model.layers.size());
  state.seed = softmax_cross_entropy_grad(cache.logits, labels);

  Matrix g = state.seed;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const LinearLayer& layer = model.layers[l];
    const Matrix& x = cache.inputs[l];
    LinearGrads grads;
    if (mode == BackwardMode::Sketched && layer.sketch) {
      Rng stream = rng_root.derive(l, step);
      grads = sketched_linear_backward(*layer.sketch, x, layer.w, g, stream);
    } else {
      grads = exact_linear_backward(x, layer.w, g);
    }
    if (l > 0) {
      // ReLU mask from the cached activation (input of this layer).
      g = grads.dx;
      for (std::size_t k = 0; k < g.size(); ++k)
        if (x.data()[k] <= 0.0) g.data()[k] = 0.0;
    }
    state.layers[l] = std::move(grads);
  }
  return state;
}

void sgd_step(MlpModel& model, const BackwardState& grads, double lr, double clip_norm) {
  require(lr > 0.0, "sgd_step: learning rate must be positive");
  require(grads.layers.size() == model.layers.size(), "sgd_step: gradient count mismatch");

  double sq_norm = 0.0;
  for (const LinearGrads& g : grads.layers) {
    for (double v : g.dw.data()) sq_norm += v * v;
    for (double v : g.db) sq_norm += v * v;
  }
  const double norm = std::sqrt(sq_norm);
  if (!std::isfinite(norm))
    throw std::runtime_error("sgd_step: non-finite gradient norm, aborting training");

  double scale = 1.0;
  if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;

  const double step_size = lr * scale;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    LinearLayer& layer = model.layers[l];
    const LinearGrads& g = grads.layers[l];
    for (std::size_t k = 0; k < layer.w.size(); ++k)
      layer.w.data()[k] -= step_size * g.dw.data()[k];
    for (std::size_t k = 0; k < layer.b.size(); ++k) layer.b[k] -= step_size * g.db[k];
  }
}

}  // namespace vjpsketch
