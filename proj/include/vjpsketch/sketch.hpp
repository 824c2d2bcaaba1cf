#pragma once

#include <optional>
#include <string>

#include "vjpsketch/budget.hpp"
#include "vjpsketch/decomp.hpp"
#include "vjpsketch/matrix.hpp"

namespace vjpsketch {

/// Per-sample output gradients of a linear layer, columns = samples
/// (d_out x B), with the batch second moment Gamma = (1/B) G G^T on demand.
class GradBatch {
 public:
  explicit GradBatch(Matrix g) : g_(std::move(g)) {}

  const Matrix& g() const { return g_; }
  std::size_t dim() const { return g_.rows(); }
  std::size_t batch() const { return g_.cols(); }

  const Matrix& second_moment() const;

 private:
  Matrix g_;
  mutable std::optional<Matrix> gamma_;
};

enum class SketchKind {
  ExactIdentity,
  PerElement,
  PerColumn,
  PerSample,
  ProxyL1,
  ProxyL2,
  ProxyVar,
  ProxyGSV,
  DiagonalSketch,
  RankConstrainedSketch,
};

/// L1 / L2 / Var / G-SV families (the `squared` flag applies).
bool is_proxy_kind(SketchKind kind);
/// Sketches realized as a diagonal mask in the canonical output basis.
bool is_coordinate_kind(SketchKind kind);
/// Sketches realized as a diagonal mask in a data-dependent basis.
bool is_spectral_kind(SketchKind kind);

std::string to_string(SketchKind kind);

struct SketchOperatorSpec {
  SketchKind kind = SketchKind::ExactIdentity;
  double budget_fraction = 1.0;  // p in (0,1]
  std::size_t budget_rank = 0;   // integer r; takes precedence when nonzero
  bool squared = true;           // proxy families: weight = proxy^2
  bool correlated = true;        // exact-r sampling vs independent Bernoulli

  /// Integer budget for n coordinates: r itself, or max(1, round(p*n)).
  std::size_t rank_for(std::size_t n) const;
  bool is_full_budget(std::size_t n) const;
  void validate() const;

  /// Canonical name, e.g. "l1_squared", "per_column_indep", "rcs".
  std::string name() const;
  static SketchOperatorSpec parse(const std::string& name);
};

struct SpectralBasis {
  Matrix directions;              // columns ordered by descending weight
  std::optional<Matrix> gamma_sqrt;       // RCS change of basis
  std::optional<Matrix> gamma_pinv_sqrt;  // RCS change of basis (pseudo-inverse side)
};

struct SketchPlan {
  SketchKind kind = SketchKind::ExactIdentity;
  bool correlated = true;
  ProbabilityAllocation alloc;
  IndexSample sample;                  // realized draw
  std::optional<SpectralBasis> basis;  // present iff spectral kind

  bool empty_support() const { return alloc.support_size == 0; }
};

struct LinearGrads {
  Matrix dx;  // B x d_in
  Matrix dw;  // d_out x d_in
  Vector db;  // d_out
};

/// Importance weights for a data-dependent kind (exposed for tests/analysis):
///   l1/l2/var: per-output-coordinate norms or variances of G, optionally squared
///   ds:        Gamma_ii * ||W row i||^2
///   rcs:       eigenvalues of Gamma^{1/2} W W^T Gamma^{1/2}
///   gsv:       singular values of G, optionally squared
///   per_column: all ones
std::vector<double> sketch_weights(const SketchOperatorSpec& spec, const GradBatch& g,
                                   const Matrix& w);

/// Compute probabilities and draw a realization for a data-dependent kind or
/// per-column masking. An all-zero gradient batch yields an empty-support plan
/// (everything dropped; the implied sketched gradient is exactly zero).
SketchPlan plan_sketch(const SketchOperatorSpec& spec, const GradBatch& g,
                       const Matrix& w, Rng& rng);

/// Sketched output gradient (B x d_out) for the plan's realization.
Matrix apply_plan_to_gradient(const SketchPlan& plan, const Matrix& g_rows);

/// Explicit n x n operator R with G_hat = R g per sample, for a given
/// realization. Only defined for kinds whose sketch is a shared linear
/// operator on output coordinates (not per-element / per-sample masks).
Matrix operator_matrix(const SketchPlan& plan, const IndexSample& realization);

/// Exact backward of y = x W^T + b: dX = G W, dW = G^T X, db = colsum G.
LinearGrads exact_linear_backward(const Matrix& x, const Matrix& w, const Matrix& g);

/// Backward with the spec's randomized estimator. Conditionally unbiased:
/// E[dX | G] = G W and E[dW | G, X] = G^T X over the mask randomness. Full
/// budget short-circuits to the exact path, bit-identically.
LinearGrads sketched_linear_backward(const SketchOperatorSpec& spec, const Matrix& x,
                                     const Matrix& w, const Matrix& g, Rng& rng);

/// Optimal unbiased sketch of a fixed matrix under a rank budget: the top i0
/// singular components are kept deterministically, the rest sampled with
/// exactly r - i0 inclusions and 1/p rescaling.
struct LowRankSketchResult {
  Matrix s;
  std::size_t i0 = 0;
  std::vector<double> p;               // per singular component
  double expected_sq_frobenius = 0.0;  // E ||S||_F^2, analytic
};

LowRankSketchResult unbiased_lowrank_sketch(const Matrix& m, std::size_t r, Rng& rng);

}  // namespace vjpsketch
