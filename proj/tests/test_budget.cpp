#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "vjpsketch/budget.hpp"
#include "vjpsketch/matrix.hpp"

using namespace vjpsketch;

namespace {

double objective(const std::vector<double>& w, const ProbabilityAllocation& alloc) {
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) total += w[i] / alloc.p[i];
  return total;
}

/// Exact minimum of sum w_i / p_i over the 0.01 lattice with sum p_i <= r.
/// The objective is separable with one coupling constraint, so a DP over
/// budget hundredths returns the same minimum as full enumeration.
double lattice_min_objective(const std::vector<double>& w, std::size_t r) {
  std::vector<double> support;
  for (double v : w)
    if (v > 0.0) support.push_back(v);
  const int m = static_cast<int>(support.size());
  const int max_units = std::min(100 * static_cast<int>(r), 100 * m);
  const double kInf = 1e300;

  std::vector<double> dp(max_units + 1, kInf);
  dp[0] = 0.0;
  for (int k = 0; k < m; ++k) {
    std::vector<double> next(max_units + 1, kInf);
    for (int used = 0; used <= max_units; ++used) {
      if (dp[used] >= kInf) continue;
      for (int units = 1; units <= 100 && used + units <= max_units; ++units) {
        const double candidate = dp[used] + support[k] / (0.01 * units);
        if (candidate < next[used + units]) next[used + units] = candidate;
      }
    }
    dp = std::move(next);
  }
  double best = kInf;
  for (double v : dp) best = std::min(best, v);
  return best;
}

}  // namespace

TEST_CASE("equal weights split the budget evenly") {
  const std::vector<double> w = {1.0, 1.0, 1.0, 1.0};
  const ProbabilityAllocation alloc = pstar_from_weights(w, 2);
  for (double p : alloc.p) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("budget r = n saturates every cap") {
  const std::vector<double> w = {3.0, 0.25, 7.0, 1.0};
  const ProbabilityAllocation alloc = pstar_from_weights(w, 4);
  for (double p : alloc.p) CHECK(p == 1.0);
}

TEST_CASE("one heavy weight caps and the rest share") {
  const std::vector<double> w = {4.0, 1.0, 1.0};
  const ProbabilityAllocation alloc = pstar_from_weights(w, 2);
  CHECK(alloc.p[0] == 1.0);
  CHECK(alloc.p[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(alloc.p[2] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(objective(w, alloc) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(objective(w, alloc) <= lattice_min_objective(w, 2) + 1e-6);
}

TEST_CASE("all-zero weights are an error, zero entries are excluded") {
  CHECK_THROWS(pstar_from_weights(std::vector<double>{0.0, 0.0}, 1));

  const std::vector<double> w = {0.0, 2.0, 0.0, 2.0};
  const ProbabilityAllocation alloc = pstar_from_weights(w, 1);
  CHECK(alloc.p[0] == 0.0);
  CHECK(alloc.p[2] == 0.0);
  CHECK(alloc.support_size == 2);
  CHECK(alloc.p[1] == doctest::Approx(0.5));
  CHECK(alloc.p[3] == doctest::Approx(0.5));
}

TEST_CASE("budget beyond the support is a degenerate success") {
  const std::vector<double> w = {1.0, 0.0, 5.0};
  const ProbabilityAllocation alloc = pstar_from_weights(w, 7);
  CHECK(alloc.p[0] == 1.0);
  CHECK(alloc.p[1] == 0.0);
  CHECK(alloc.p[2] == 1.0);
  CHECK(alloc.effective_rank() == 2);
}

TEST_CASE("water-filling beats the lattice on random instances") {
  Rng rng(31);
  for (int instance = 0; instance < 60; ++instance) {
    const std::size_t n = 2 + rng.next_u64() % 5;  // 2..6
    std::vector<double> w(n);
    for (double& v : w) {
      v = std::exp(rng.uniform(-3.0, 3.0));
      if (rng.next_double() < 0.15) v = 0.0;
    }
    if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) w[0] = 1.0;

    double previous = 1e300;
    for (std::size_t r = 1; r <= n; ++r) {
      const ProbabilityAllocation alloc = pstar_from_weights(w, r);

      // Sum of probabilities hits the effective budget.
      double sum = 0.0;
      for (double p : alloc.p) sum += p;
      CHECK(sum == doctest::Approx(double(alloc.effective_rank())).epsilon(1e-9));

      // Capped entries are exactly the largest weights.
      double min_capped = 1e300, max_uncapped = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        if (alloc.p[i] == 1.0) min_capped = std::min(min_capped, w[i]);
        else max_uncapped = std::max(max_uncapped, w[i]);
      }
      CHECK(min_capped >= max_uncapped - 1e-12);

      // Uncapped entries follow sqrt(w)/sqrt(lambda).
      if (alloc.lambda_sqrt > 0.0)
        for (std::size_t i = 0; i < n; ++i)
          if (w[i] > 0.0 && alloc.p[i] < 1.0)
            CHECK(alloc.p[i] ==
                  doctest::Approx(std::sqrt(w[i]) / alloc.lambda_sqrt).epsilon(1e-12));

      const double value = objective(w, alloc);
      CHECK(value <= lattice_min_objective(w, r) + 1e-6);
      CHECK(value <= previous + 1e-9);  // monotone in the budget
      previous = value;
    }
  }
}

TEST_CASE("forced inclusions always appear") {
  ProbabilityAllocation alloc;
  alloc.p = {1.0, 1.0, 0.0};
  alloc.budget = 2;
  alloc.support_size = 2;
  Rng rng(5);
  for (int draw = 0; draw < 200; ++draw) {
    const IndexSample sample = correlated_exact_r_sample(alloc, rng);
    REQUIRE(sample.indices.size() == 2);
    CHECK(sample.indices[0] == 0);
    CHECK(sample.indices[1] == 1);
    CHECK(sample.scales[0] == 1.0);
  }
}

TEST_CASE("two-way coin has even marginals") {
  ProbabilityAllocation alloc;
  alloc.p = {0.5, 0.5};
  alloc.budget = 1;
  alloc.support_size = 2;
  Rng rng(7);
  const int n_draws = 100000;
  int count_first = 0;
  for (int draw = 0; draw < n_draws; ++draw) {
    const IndexSample sample = correlated_exact_r_sample(alloc, rng);
    REQUIRE(sample.indices.size() == 1);
    if (sample.indices[0] == 0) ++count_first;
  }
  const double freq = double(count_first) / n_draws;
  const double sigma = std::sqrt(0.25 / n_draws);
  CHECK(std::abs(freq - 0.5) <= 4.0 * sigma);
}

TEST_CASE("exact cardinality and marginals on an uneven allocation") {
  ProbabilityAllocation alloc;
  alloc.p = {0.7, 0.5, 0.8};
  alloc.budget = 2;
  alloc.support_size = 3;
  Rng rng(11);
  const int n_draws = 100000;
  std::vector<int> hits(3, 0);
  for (int draw = 0; draw < n_draws; ++draw) {
    const IndexSample sample = correlated_exact_r_sample(alloc, rng);
    REQUIRE(sample.indices.size() == 2);
    for (std::size_t idx : sample.indices) ++hits[idx];
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = alloc.p[i];
    const double freq = double(hits[i]) / n_draws;
    const double sigma = std::sqrt(p * (1 - p) / n_draws);
    CHECK(std::abs(freq - p) <= 4.0 * sigma);
  }
}

TEST_CASE("sampler validates its inputs") {
  ProbabilityAllocation alloc;
  alloc.p = {1.5, 0.5};
  alloc.budget = 2;
  alloc.support_size = 2;
  Rng rng(1);
  CHECK_THROWS(correlated_exact_r_sample(alloc, rng));

  alloc.p = {0.4, 0.4};  // sums to 0.8, not the budget 1
  alloc.budget = 1;
  CHECK_THROWS(correlated_exact_r_sample(alloc, rng));
}

TEST_CASE("sampler is deterministic in the stream state") {
  ProbabilityAllocation alloc;
  alloc.p = {0.25, 0.5, 0.75, 0.5};
  alloc.budget = 2;
  alloc.support_size = 4;
  Rng a(42), b(42);
  for (int draw = 0; draw < 50; ++draw) {
    const IndexSample sa = correlated_exact_r_sample(alloc, a);
    const IndexSample sb = correlated_exact_r_sample(alloc, b);
    CHECK(sa.indices == sb.indices);
  }
}

TEST_CASE("independent bernoulli masks") {
  Rng rng(3);
  const std::vector<double> ones(16, 1.0), zeros(16, 0.0);
  for (bool v : independent_bernoulli(ones, rng)) CHECK(v);
  for (bool v : independent_bernoulli(zeros, rng)) CHECK(!v);

  const std::vector<double> p(10000, 0.3);
  int count = 0;
  for (bool v : independent_bernoulli(p, rng))
    if (v) ++count;
  const double sigma = std::sqrt(10000 * 0.3 * 0.7);
  CHECK(std::abs(count - 3000.0) <= 4.0 * sigma);
}
