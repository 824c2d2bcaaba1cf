#include <doctest.h>

#include <cmath>
#include <vector>

#include "vjpsketch/mlp.hpp"

using namespace vjpsketch;

namespace {

MlpModel random_model(std::initializer_list<std::size_t> widths, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::size_t> w(widths);
  return MlpModel::init_kaiming(w, rng);
}

double loss_at(const MlpModel& model, const Matrix& x, const std::vector<int>& labels) {
  return softmax_cross_entropy(forward(model, x), labels);
}

}  // namespace

TEST_CASE("identity network forwards its input") {
  MlpModel model;
  LinearLayer layer;
  layer.w = Matrix::identity(4);
  layer.b.assign(4, 0.0);
  model.layers.push_back(layer);

  Rng rng(1);
  const Matrix x = Matrix::random_gaussian(3, 4, rng);
  CHECK(forward(model, x) == x);
}

TEST_CASE("relu zeroes negative pre-activations") {
  MlpModel model;
  LinearLayer first;
  first.w = Matrix::identity(2);
  first.b = {-10.0, -10.0};  // drive everything negative
  LinearLayer second;
  second.w = Matrix::from_rows({{1.0, 1.0}, {2.0, -1.0}});
  second.b = {0.5, -0.25};
  model.layers = {first, second};

  Rng rng(2);
  const Matrix x = Matrix::random_gaussian(3, 2, rng);
  const Matrix logits = forward(model, x);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(logits(b, 0) == 0.5);
    CHECK(logits(b, 1) == -0.25);
  }
}

TEST_CASE("two-layer forward matches a straight-line recomputation") {
  const MlpModel model = random_model({3, 4, 2}, 7);
  Rng rng(3);
  const Matrix x = Matrix::random_gaussian(5, 3, rng);
  const Matrix logits = forward(model, x);

  for (std::size_t b = 0; b < 5; ++b) {
    double hidden[4];
    for (std::size_t i = 0; i < 4; ++i) {
      double z = model.layers[0].b[i];
      for (std::size_t j = 0; j < 3; ++j) z += model.layers[0].w(i, j) * x(b, j);
      hidden[i] = z > 0 ? z : 0;
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double z = model.layers[1].b[c];
      for (std::size_t i = 0; i < 4; ++i) z += model.layers[1].w(c, i) * hidden[i];
      CHECK(std::abs(logits(b, c) - z) < 1e-12);
    }
  }
}

TEST_CASE("exact backward matches central finite differences") {
  MlpModel model = random_model({6, 5, 4, 3}, 11);
  Rng rng(4);
  // Non-zero biases keep every pre-activation away from the ReLU kink, where
  // a central difference is not a valid oracle.
  for (LinearLayer& layer : model.layers)
    for (double& b : layer.b) b = rng.uniform(0.05, 0.4);
  const Matrix x = Matrix::random_gaussian(7, 6, rng);
  std::vector<int> labels(7);
  for (int& label : labels) label = static_cast<int>(rng.next_u64() % 3);

  ForwardCache cache;
  forward(model, x, &cache);
  for (std::size_t l = 1; l < model.layers.size(); ++l) {
    const Matrix pre = matmul_a_bt(cache.inputs[l - 1], model.layers[l - 1].w);
    for (std::size_t j = 0; j < pre.cols(); ++j)
      for (std::size_t b = 0; b < pre.rows(); ++b)
        REQUIRE(std::abs(pre(b, j) + model.layers[l - 1].b[j]) > 1e-3);
  }
  const BackwardState grads =
      backward(model, cache, labels, BackwardMode::Exact, Rng(0), 0);

  Rng pick(5);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (int probe = 0; probe < 20; ++probe) {
      const std::size_t k = pick.next_u64() % model.layers[l].w.size();
      MlpModel shifted = model;
      const double scale = std::max(1.0, std::abs(model.layers[l].w.data()[k]));
      const double h = 1e-5 * scale;
      shifted.layers[l].w.data()[k] = model.layers[l].w.data()[k] + h;
      const double up = loss_at(shifted, x, labels);
      shifted.layers[l].w.data()[k] = model.layers[l].w.data()[k] - h;
      const double down = loss_at(shifted, x, labels);
      const double fd = (up - down) / (2.0 * h);
      const double analytic = grads.layers[l].dw.data()[k];
      const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
      CHECK(rel <= 1e-4);
    }
    // Bias entries as well.
    for (std::size_t j = 0; j < model.layers[l].b.size(); ++j) {
      MlpModel shifted = model;
      const double h = 1e-5;
      shifted.layers[l].b[j] = model.layers[l].b[j] + h;
      const double up = loss_at(shifted, x, labels);
      shifted.layers[l].b[j] = model.layers[l].b[j] - h;
      const double down = loss_at(shifted, x, labels);
      const double fd = (up - down) / (2.0 * h);
      const double analytic = grads.layers[l].db[j];
      const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
      CHECK(rel <= 1e-4);
    }
  }
}

TEST_CASE("sketched mode at full budget is bit-identical to exact mode") {
  MlpModel model = random_model({5, 4, 3}, 13);
  for (LinearLayer& layer : model.layers) {
    SketchOperatorSpec spec = SketchOperatorSpec::parse("l1_squared");
    spec.budget_fraction = 1.0;
    layer.sketch = spec;
  }
  Rng rng(6);
  const Matrix x = Matrix::random_gaussian(4, 5, rng);
  const std::vector<int> labels = {0, 2, 1, 1};

  ForwardCache cache;
  forward(model, x, &cache);
  const BackwardState exact = backward(model, cache, labels, BackwardMode::Exact, Rng(9), 0);
  const BackwardState sketched =
      backward(model, cache, labels, BackwardMode::Sketched, Rng(9), 0);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK(exact.layers[l].dw == sketched.layers[l].dw);
    CHECK(exact.layers[l].db == sketched.layers[l].db);
    CHECK(exact.layers[l].dx == sketched.layers[l].dx);
  }
}

TEST_CASE("the loss seed entering the recursion is exact in both modes") {
  MlpModel model = random_model({4, 4, 3}, 17);
  for (LinearLayer& layer : model.layers) {
    SketchOperatorSpec spec = SketchOperatorSpec::parse("per_column");
    spec.budget_fraction = 0.25;
    layer.sketch = spec;
  }
  Rng rng(7);
  const Matrix x = Matrix::random_gaussian(6, 4, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};

  ForwardCache cache;
  forward(model, x, &cache);
  const BackwardState exact = backward(model, cache, labels, BackwardMode::Exact, Rng(1), 3);
  const BackwardState sketched =
      backward(model, cache, labels, BackwardMode::Sketched, Rng(1), 3);
  CHECK(exact.seed == sketched.seed);
}

TEST_CASE("backward draws are reproducible from (seed, layer, step)") {
  MlpModel model = random_model({5, 4, 3}, 19);
  for (LinearLayer& layer : model.layers) {
    SketchOperatorSpec spec = SketchOperatorSpec::parse("l1_squared");
    spec.budget_fraction = 0.5;
    layer.sketch = spec;
  }
  Rng rng(8);
  const Matrix x = Matrix::random_gaussian(4, 5, rng);
  const std::vector<int> labels = {0, 1, 2, 1};
  ForwardCache cache;
  forward(model, x, &cache);

  const BackwardState a = backward(model, cache, labels, BackwardMode::Sketched, Rng(21), 5);
  const BackwardState b = backward(model, cache, labels, BackwardMode::Sketched, Rng(21), 5);
  const BackwardState c = backward(model, cache, labels, BackwardMode::Sketched, Rng(21), 6);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK(a.layers[l].dw == b.layers[l].dw);
  }
  // A different step re-draws at least one layer.
  bool any_differs = false;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    if (!(a.layers[l].dw == c.layers[l].dw)) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("unbiasedness composes through stacked sketched layers") {
  MlpModel model = random_model({4, 4, 3}, 23);
  for (LinearLayer& layer : model.layers) {
    SketchOperatorSpec spec = SketchOperatorSpec::parse("l1_squared");
    spec.budget_rank = 2;
    layer.sketch = spec;
  }
  Rng rng(9);
  const Matrix x = Matrix::random_gaussian(3, 4, rng);
  const std::vector<int> labels = {0, 1, 2};
  ForwardCache cache;
  forward(model, x, &cache);
  const BackwardState exact = backward(model, cache, labels, BackwardMode::Exact, Rng(0), 0);

  const std::size_t entries = exact.layers[0].dw.size();
  std::vector<double> mean(entries, 0.0), m2(entries, 0.0);
  const int n_draws = 20000;
  for (int d = 1; d <= n_draws; ++d) {
    const BackwardState draw =
        backward(model, cache, labels, BackwardMode::Sketched, Rng(1000 + d), 0);
    for (std::size_t k = 0; k < entries; ++k) {
      const double value = draw.layers[0].dw.data()[k];
      const double delta = value - mean[k];
      mean[k] += delta / d;
      m2[k] += delta * (value - mean[k]);
    }
  }
  for (std::size_t k = 0; k < entries; ++k) {
    const double se = std::sqrt(m2[k] / (n_draws - 1) / n_draws);
    const double band = std::max(4.0 * se, 1e-12);
    CHECK(std::abs(mean[k] - exact.layers[0].dw.data()[k]) <= band);
  }
}

TEST_CASE("sgd step: no-op on zero gradients, clipping, quadratic") {
  MlpModel model = random_model({3, 2}, 29);
  const MlpModel before = model;

  BackwardState zero;
  zero.layers.resize(1);
  zero.layers[0].dw = Matrix(2, 3);
  zero.layers[0].db.assign(2, 0.0);
  sgd_step(model, zero, 0.1, 1.0);
  CHECK(model.layers[0].w == before.layers[0].w);

  // Gradient of global norm 10 against clip 1: effective scale 0.1.
  BackwardState big;
  big.layers.resize(1);
  big.layers[0].dw = Matrix(2, 3);
  big.layers[0].db.assign(2, 0.0);
  big.layers[0].dw(0, 0) = 10.0;
  sgd_step(model, big, 0.5, 1.0);
  CHECK(model.layers[0].w(0, 0) ==
        doctest::Approx(before.layers[0].w(0, 0) - 0.5 * 1.0).epsilon(1e-12));

  // One step on a single parameter with a known gradient (no clipping).
  MlpModel tiny;
  LinearLayer layer;
  layer.w = Matrix::from_rows({{2.0}});
  layer.b.assign(1, 0.0);
  tiny.layers.push_back(layer);
  BackwardState grad;
  grad.layers.resize(1);
  grad.layers[0].dw = Matrix::from_rows({{0.25}});
  grad.layers[0].db.assign(1, 0.0);
  sgd_step(tiny, grad, 0.1, 100.0);
  CHECK(tiny.layers[0].w(0, 0) == doctest::Approx(2.0 - 0.1 * 0.25).epsilon(1e-15));

  // Non-finite gradients abort with a diagnostic.
  BackwardState bad;
  bad.layers.resize(1);
  bad.layers[0].dw = Matrix(2, 3);
  bad.layers[0].db.assign(2, 0.0);
  bad.layers[0].dw(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(sgd_step(model, bad, 0.1, 1.0));
}

TEST_CASE("training a few sketched steps is deterministic in the seed") {
  auto run = [] {
    MlpModel model = random_model({6, 5, 3}, 31);
    for (LinearLayer& layer : model.layers) {
      SketchOperatorSpec spec = SketchOperatorSpec::parse("ds");
      spec.budget_fraction = 0.5;
      layer.sketch = spec;
    }
    Rng data_rng(10);
    const Matrix x = Matrix::random_gaussian(8, 6, data_rng);
    std::vector<int> labels(8);
    for (int& label : labels) label = static_cast<int>(data_rng.next_u64() % 3);
    for (std::uint64_t step = 0; step < 5; ++step) {
      ForwardCache cache;
      forward(model, x, &cache);
      const BackwardState grads =
          backward(model, cache, labels, BackwardMode::Sketched, Rng(77), step);
      sgd_step(model, grads, 0.05, 1.0);
    }
    return model;
  };
  const MlpModel a = run();
  const MlpModel b = run();
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].w == b.layers[l].w);
    CHECK(a.layers[l].b == b.layers[l].b);
  }
}
