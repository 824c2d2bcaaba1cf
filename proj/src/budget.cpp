#include "vjpsketch/budget.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vjpsketch/matrix.hpp"

namespace vjpsketch {

ProbabilityAllocation pstar_from_weights(std::span<const double> w, std::size_t r) {
  require(r >= 1, "pstar_from_weights: budget must be >= 1");
  const std::size_t n = w.size();

  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < n; ++i) {
    require(w[i] >= 0.0 && std::isfinite(w[i]),
            "pstar_from_weights: weights must be finite and non-negative");
    if (w[i] > 0.0) support.push_back(i);
  }
  if (support.empty())
    throw std::invalid_argument("pstar_from_weights: all weights are zero");

  ProbabilityAllocation alloc;
  alloc.p.assign(n, 0.0);
  alloc.budget = r;
  alloc.support_size = support.size();

  if (r >= support.size()) {
    // Budget saturates every cap; degenerate success.
    for (std::size_t i : support) alloc.p[i] = 1.0;
    return alloc;
  }

  // Sort sqrt(w) descending, stable in the original index.
  std::vector<double> t(support.size());
  for (std::size_t k = 0; k < support.size(); ++k) t[k] = std::sqrt(w[support[k]]);
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return t[a] > t[b]; });

  std::vector<double> suffix(support.size() + 1, 0.0);
  for (std::size_t k = support.size(); k-- > 0;)
    suffix[k] = suffix[k + 1] + t[order[k]];

  // Scan the number of capped entries k: the water level sqrt(lambda) must sit
  // between the k-th largest sqrt(w) and the (k+1)-th.
  double lambda_sqrt = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) {
    const double remainder = static_cast<double>(r) - static_cast<double>(k);
    if (remainder <= 0.0) break;
    const double level = suffix[k] / remainder;
    if ((k == 0 || t[order[k - 1]] >= level) && t[order[k]] <= level) {
      lambda_sqrt = level;
      break;
    }
  }
  require(lambda_sqrt > 0.0, "pstar_from_weights: no feasible water level");

  alloc.lambda_sqrt = lambda_sqrt;
  for (std::size_t k = 0; k < support.size(); ++k)
    alloc.p[support[k]] = std::min(1.0, t[k] / lambda_sqrt);
  return alloc;
}

IndexSample correlated_exact_r_sample(const ProbabilityAllocation& alloc, Rng& rng) {
  const std::size_t n = alloc.p.size();
  const std::size_t r = alloc.effective_rank();
  double sum = 0.0;
  std::size_t last_positive = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = alloc.p[i];
    require(p >= 0.0 && p <= 1.0 + 1e-9, "correlated_exact_r_sample: p out of [0,1]");
    if (p > 0.0) last_positive = i;
    sum += p;
  }
  require(std::abs(sum - static_cast<double>(r)) <= 1e-6,
          "correlated_exact_r_sample: probabilities must sum to the budget");

  IndexSample out;
  if (r == 0 || last_positive == n) return out;
  out.indices.reserve(r);
  out.scales.reserve(r);

  // Systematic scan: targets u, u+1, ..., u+r-1 against the cumulative sums;
  // the cumulative sum at the last positive stratum is pinned to r.
  const double u = rng.next_open_closed();
  double cumulative = 0.0;
  std::size_t j = 0;
  for (std::size_t l = 0; l < r; ++l) {
    const double target = u + static_cast<double>(l);
    while (j <= last_positive) {
      const double next =
          (j == last_positive) ? static_cast<double>(r) : cumulative + alloc.p[j];
      if (next >= target && alloc.p[j] > 0.0) break;
      cumulative = next;
      ++j;
    }
    require(j <= last_positive, "correlated_exact_r_sample: ran past the last stratum");
    out.indices.push_back(j);
    out.scales.push_back(1.0 / alloc.p[j]);
    cumulative = (j == last_positive) ? static_cast<double>(r) : cumulative + alloc.p[j];
    ++j;
  }
  return out;
}

IndexSample independent_bernoulli_sample(const ProbabilityAllocation& alloc, Rng& rng) {
  IndexSample out;
  for (std::size_t i = 0; i < alloc.p.size(); ++i) {
    const double p = alloc.p[i];
    if (p > 0.0 && rng.next_double() < p) {
      out.indices.push_back(i);
      out.scales.push_back(1.0 / p);
    }
  }
  return out;
}

std::vector<bool> independent_bernoulli(std::span<const double> p, Rng& rng) {
  std::vector<bool> mask(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0 && p[i] <= 1.0, "independent_bernoulli: p out of [0,1]");
    mask[i] = rng.next_double() < p[i];
  }
  return mask;
}

}  // namespace vjpsketch
