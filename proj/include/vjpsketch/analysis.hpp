#pragma once

#include <optional>

#include "vjpsketch/sketch.hpp"

namespace vjpsketch {

/// Batch-averaged expected squared error of the sketched VJP against the exact
/// one, (1/B) sum_b E||W^T (g_hat_b - g_b)||^2, Monte-Carlo estimated, with the
/// closed form attached where one exists.
struct DistortionReport {
  SketchKind kind = SketchKind::ExactIdentity;
  std::string method;
  std::size_t rank = 0;
  std::size_t n_draws = 0;
  double mc_mean = 0.0;
  double std_error = 0.0;
  std::optional<double> analytic;
};

/// Closed-form distortion where available:
///   diagonal kinds (independent sampling only): sum_i a_i (1/p_i - 1)
///   rcs:  sum_i sigma_i^2 (1/p_i - 1) in the Gamma^{1/2} W W^T Gamma^{1/2} basis
///   gsv:  sum_i (U^T W W^T U)_ii Gamma_ii^{(U)} (1/p_i - 1) in the left basis of G
///   per_sample / per_element: (1/p - 1) times the exact second moment
std::optional<double> analytic_distortion(const SketchOperatorSpec& spec, const Matrix& w,
                                          const GradBatch& g);

DistortionReport estimate_distortion(const SketchOperatorSpec& spec, const Matrix& w,
                                     const GradBatch& g, std::size_t n_draws, Rng& rng);

/// One backward edge of a linear chain: gradient rows map through g * w.
struct ChainNode {
  Matrix w;                 // d_upstream x d_downstream
  SketchOperatorSpec spec;  // sketch applied to the gradient entering this edge
};

/// Monte-Carlo check of the variance-propagation identity at the bottom node
/// of a sketched linear chain: E||ghat - g||^2 splits into the locally injected
/// term plus the propagated upstream term. The three estimates use independent
/// streams; `gap` bands combine their standard errors.
struct DecompositionReport {
  double lhs = 0.0, lhs_se = 0.0;
  double local = 0.0, local_se = 0.0;
  double propagated = 0.0, propagated_se = 0.0;

  double gap() const { return lhs - (local + propagated); }
  double combined_se() const;
  bool holds(double n_sigma = 4.0) const;
};

/// chain[0] is the edge at the evaluated node; chain.back() is nearest the
/// output. g_seed is the exact gradient (B x d) entering the top of the chain.
DecompositionReport variance_decomposition_check(const std::vector<ChainNode>& chain,
                                                 const Matrix& g_seed, std::size_t n_draws,
                                                 Rng& rng);

/// Variance-efficiency trade-off calculators.
struct TradeoffParams {
  double sigma2 = 0.0;             // baseline gradient variance
  double injected_variance = 0.0;  // V
  double beta = 0.0;               // smoothness
  double gap = 0.0;                // F_0 - F*
  double eps = 1.0;                // target accuracy
  double rho0 = 1.0;               // per-iteration cost at V = 0
  double rho_v = 1.0;              // per-iteration cost at V

  void validate() const;
};

/// (sigma^2 + V) * beta * (F_0 - F*) / eps^2.
double iterations_for_accuracy(const TradeoffParams& params);

/// True when rho(V) (sigma^2 + V) <= rho(0) sigma^2.
bool net_gain(const TradeoffParams& params);

}  // namespace vjpsketch
