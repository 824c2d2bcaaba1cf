#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vjpsketch/rng.hpp"

namespace vjpsketch {

/// Water-filling solution of  min sum_i w_i / p_i  s.t.  sum_i p_i <= r,
/// p_i in (0,1] on the support of w. Zero-weight coordinates are excluded
/// (p = 0, never sampled); when the support has at most r elements every
/// included p_i is 1.
struct ProbabilityAllocation {
  std::vector<double> p;        // per-coordinate inclusion probability, 0 = excluded
  std::size_t budget = 0;       // requested r
  double lambda_sqrt = 0.0;     // KKT multiplier sqrt(lambda); 0 if all capped
  std::size_t support_size = 0; // number of coordinates with w > 0

  std::size_t effective_rank() const { return budget < support_size ? budget : support_size; }
};

/// A realized draw: strictly increasing selected indices and their 1/p scales.
struct IndexSample {
  std::vector<std::size_t> indices;
  std::vector<double> scales;
};

/// Optimal probabilities for importance weights w and integer budget r >= 1.
/// Capped entries (p = 1) are exactly the largest weights; uncapped entries
/// follow p_i = sqrt(w_i) / sqrt(lambda). Ties in sqrt(w) break by original
/// index. Throws if every weight is zero.
ProbabilityAllocation pstar_from_weights(std::span<const double> w, std::size_t r);

/// Systematic sampling over the cumulative probabilities: exactly
/// min(r, support) distinct indices, each included with marginal probability
/// p_i. Requires sum p_i = effective rank to 1e-6 (the final cumulative sum is
/// pinned for numerical safety) and every p_i <= 1 + 1e-9.
IndexSample correlated_exact_r_sample(const ProbabilityAllocation& alloc, Rng& rng);

/// Independent draw z_i ~ Bernoulli(p_i) from the same allocation; selected
/// indices carry the same 1/p_i scales (expected rank r instead of exact).
IndexSample independent_bernoulli_sample(const ProbabilityAllocation& alloc, Rng& rng);

/// Plain i.i.d. Bernoulli(p_i) mask.
std::vector<bool> independent_bernoulli(std::span<const double> p, Rng& rng);

}  // namespace vjpsketch
