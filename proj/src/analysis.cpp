#include "vjpsketch/analysis.hpp"

#include <cmath>
#include <stdexcept>

namespace vjpsketch {

namespace {

double per_mask_probability(const SketchOperatorSpec& spec, std::size_t d_out) {
  if (spec.budget_rank > 0)
    return std::min(1.0, static_cast<double>(spec.budget_rank) / static_cast<double>(d_out));
  return spec.budget_fraction;
}

/// (1/B) sum_b ||W^T g_b||^2 = Tr(W W^T Gamma).
double exact_second_moment(const Matrix& w, const GradBatch& g) {
  const Matrix wtg = matmul_at_b(w, g.g());
  const double norm = wtg.frobenius_norm();
  return norm * norm / static_cast<double>(g.batch());
}

struct OnlineMean {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t count = 0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  double std_error() const {
    if (count < 2) return 0.0;
    return std::sqrt(m2 / static_cast<double>(count - 1) / static_cast<double>(count));
  }
};

}  // namespace

std::optional<double> analytic_distortion(const SketchOperatorSpec& spec, const Matrix& w,
                                          const GradBatch& g) {
  const std::size_t n = g.dim();
  switch (spec.kind) {
    case SketchKind::ExactIdentity:
      return 0.0;
    case SketchKind::PerSample:
    case SketchKind::PerElement: {
      const double p = per_mask_probability(spec, n);
      if (spec.kind == SketchKind::PerSample)
        return (1.0 / p - 1.0) * exact_second_moment(w, g);
      // Independent element masks on W: cross terms vanish entrywise.
      const Matrix& gamma = g.second_moment();
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double row_sq = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) row_sq += w(i, j) * w(i, j);
        total += gamma(i, i) * row_sq;
      }
      return (1.0 / p - 1.0) * total;
    }
    case SketchKind::PerColumn:
    case SketchKind::ProxyL1:
    case SketchKind::ProxyL2:
    case SketchKind::ProxyVar:
    case SketchKind::DiagonalSketch: {
      // Closed form needs independent gates: correlated inclusions add joint
      // terms the allocation does not determine.
      if (spec.correlated) return std::nullopt;
      const std::vector<double> weights = sketch_weights(spec, g, w);
      ProbabilityAllocation alloc;
      bool all_zero = true;
      for (double v : weights) all_zero = all_zero && v == 0.0;
      if (all_zero) return 0.0;
      alloc = pstar_from_weights(weights, spec.rank_for(n));
      const Matrix& gamma = g.second_moment();
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (alloc.p[i] <= 0.0) continue;
        double row_sq = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) row_sq += w(i, j) * w(i, j);
        total += gamma(i, i) * row_sq * (1.0 / alloc.p[i] - 1.0);
      }
      return total;
    }
    case SketchKind::RankConstrainedSketch:
    case SketchKind::ProxyGSV: {
      // Diagonal in the sketch basis: only marginal inclusion probabilities
      // enter, so the form holds for correlated and independent sampling alike.
      Rng throwaway(0);
      const SketchPlan plan = plan_sketch(spec, g, w, throwaway);
      if (plan.empty_support()) return 0.0;
      const Matrix& u = plan.basis->directions;
      const Matrix wwt = matmul_a_bt(w, w);
      double total = 0.0;
      if (spec.kind == SketchKind::RankConstrainedSketch) {
        const std::vector<double> weights = sketch_weights(spec, g, w);
        for (std::size_t i = 0; i < weights.size(); ++i)
          if (plan.alloc.p[i] > 0.0)
            total += weights[i] * (1.0 / plan.alloc.p[i] - 1.0);
      } else {
        const Matrix au = matmul(wwt, u);
        const Matrix gu = matmul(g.second_moment(), u);
        for (std::size_t i = 0; i < plan.alloc.p.size(); ++i) {
          if (plan.alloc.p[i] <= 0.0) continue;
          const double a_ii = dot(std::span<const double>(u.col(i), u.rows()),
                                  std::span<const double>(au.col(i), u.rows()));
          const double gamma_ii = dot(std::span<const double>(u.col(i), u.rows()),
                                      std::span<const double>(gu.col(i), u.rows()));
          total += a_ii * gamma_ii * (1.0 / plan.alloc.p[i] - 1.0);
        }
      }
      return total;
    }
    default:
      return std::nullopt;
  }
}

DistortionReport estimate_distortion(const SketchOperatorSpec& spec, const Matrix& w,
                                     const GradBatch& g, std::size_t n_draws, Rng& rng) {
  require(n_draws >= 1000, "estimate_distortion: need at least 1000 draws");
  require(w.rows() == g.dim(), "estimate_distortion: W rows must match gradient dimension");

  DistortionReport report;
  report.kind = spec.kind;
  report.method = spec.name();
  report.rank = spec.rank_for(g.dim());
  report.n_draws = n_draws;
  report.analytic = analytic_distortion(spec, w, g);

  const Matrix g_rows = g.g().transposed();
  const std::size_t batch = g.batch();
  const double inv_batch = 1.0 / static_cast<double>(batch);

  OnlineMean acc;
  if (spec.kind == SketchKind::ExactIdentity || spec.is_full_budget(g.dim())) {
    for (std::size_t d = 0; d < n_draws; ++d) acc.add(0.0);
  } else if (spec.kind == SketchKind::PerElement) {
    const double p = per_mask_probability(spec, g.dim());
    for (std::size_t d = 0; d < n_draws; ++d) {
      Matrix delta = w;
      for (double& v : delta.data()) v *= (rng.bernoulli(p) ? 1.0 / p : 0.0) - 1.0;
      const Matrix err = matmul_at_b(delta, g.g());
      const double norm = err.frobenius_norm();
      acc.add(norm * norm * inv_batch);
    }
  } else if (spec.kind == SketchKind::PerSample) {
    const double p = per_mask_probability(spec, g.dim());
    Vector per_sample_sq(batch, 0.0);
    const Matrix wtg = matmul_at_b(w, g.g());
    for (std::size_t b = 0; b < batch; ++b)
      per_sample_sq[b] = dot(std::span<const double>(wtg.col(b), wtg.rows()),
                             std::span<const double>(wtg.col(b), wtg.rows()));
    for (std::size_t d = 0; d < n_draws; ++d) {
      double total = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double factor = (rng.bernoulli(p) ? 1.0 / p : 0.0) - 1.0;
        total += factor * factor * per_sample_sq[b];
      }
      acc.add(total * inv_batch);
    }
  } else {
    const SketchPlan base = plan_sketch(spec, g, w, rng);
    SketchPlan plan = base;
    for (std::size_t d = 0; d < n_draws; ++d) {
      if (plan.empty_support()) {
        acc.add(0.0);
        continue;
      }
      plan.sample = spec.correlated ? correlated_exact_r_sample(plan.alloc, rng)
                                    : independent_bernoulli_sample(plan.alloc, rng);
      const Matrix sketched = apply_plan_to_gradient(plan, g_rows);
      const Matrix err = matmul(sketched - g_rows, w);
      const double norm = err.frobenius_norm();
      acc.add(norm * norm * inv_batch);
    }
  }

  report.mc_mean = acc.mean;
  report.std_error = acc.std_error();
  return report;
}

double DecompositionReport::combined_se() const {
  return std::sqrt(lhs_se * lhs_se + local_se * local_se + propagated_se * propagated_se);
}

bool DecompositionReport::holds(double n_sigma) const {
  const double band = n_sigma * combined_se();
  return std::abs(gap()) <= std::max(band, 1e-12);
}

namespace {

/// Sketched gradient rows after traversing chain edges `from..0` (exclusive of
/// edge `stop`); each edge draws from its own derived stream.
Matrix chain_backward(const std::vector<ChainNode>& chain, const Matrix& g_seed,
                      std::size_t down_to, bool sketched, Rng& rng) {
  Matrix g = g_seed;
  for (std::size_t k = chain.size(); k-- > down_to;) {
    const ChainNode& node = chain[k];
    if (sketched && !node.spec.is_full_budget(g.cols())) {
      const GradBatch batch(g.transposed());
      const SketchPlan plan = plan_sketch(node.spec, batch, node.w, rng);
      g = apply_plan_to_gradient(plan, g);
    }
    g = matmul(g, node.w);
  }
  return g;
}

double batch_mean_sq_norm(const Matrix& rows) {
  const std::size_t batch = rows.rows();
  Vector mean(rows.cols(), 0.0);
  for (std::size_t j = 0; j < rows.cols(); ++j) {
    const double* col = rows.col(j);
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b) s += col[b];
    mean[j] = s / static_cast<double>(batch);
  }
  return dot(mean, mean);
}

}  // namespace

DecompositionReport variance_decomposition_check(const std::vector<ChainNode>& chain,
                                                 const Matrix& g_seed, std::size_t n_draws,
                                                 Rng& rng) {
  require(!chain.empty(), "variance_decomposition_check: empty chain");
  for (const ChainNode& node : chain) node.spec.validate();

  // Exact gradients at the top of edge 0 and at the bottom.
  Rng null_stream(0);
  const Matrix g1_exact = chain_backward(chain, g_seed, 1, false, null_stream);
  const Matrix g0_exact = matmul(g1_exact, chain[0].w);

  Rng lhs_stream = rng.derive(0x111);
  Rng local_stream = rng.derive(0x222);
  Rng prop_stream = rng.derive(0x333);

  OnlineMean lhs_acc, local_acc, prop_acc;
  const std::size_t d_edge0 = chain[0].w.rows();

  auto sketch_edge0 = [&](const Matrix& g_in, Rng& stream) {
    if (chain[0].spec.is_full_budget(d_edge0)) return g_in;
    const GradBatch batch(g_in.transposed());
    const SketchPlan plan = plan_sketch(chain[0].spec, batch, chain[0].w, stream);
    return apply_plan_to_gradient(plan, g_in);
  };

  for (std::size_t d = 0; d < n_draws; ++d) {
    {  // LHS: fully sketched bottom gradient vs exact.
      const Matrix g1 = chain_backward(chain, g_seed, 1, true, lhs_stream);
      const Matrix g0 = matmul(sketch_edge0(g1, lhs_stream), chain[0].w);
      lhs_acc.add(batch_mean_sq_norm(g0 - g0_exact));
    }
    {  // Local term: (R - I) applied to the sketched upstream gradient.
      const Matrix g1 = chain_backward(chain, g_seed, 1, true, local_stream);
      const Matrix g0 = matmul(sketch_edge0(g1, local_stream) - g1, chain[0].w);
      local_acc.add(batch_mean_sq_norm(g0));
    }
    {  // Propagated term: exact edge 0 applied to the upstream error.
      const Matrix g1 = chain_backward(chain, g_seed, 1, true, prop_stream);
      prop_acc.add(batch_mean_sq_norm(matmul(g1 - g1_exact, chain[0].w)));
    }
  }

  DecompositionReport report;
  report.lhs = lhs_acc.mean;
  report.lhs_se = lhs_acc.std_error();
  report.local = local_acc.mean;
  report.local_se = local_acc.std_error();
  report.propagated = prop_acc.mean;
  report.propagated_se = prop_acc.std_error();
  return report;
}

void TradeoffParams::validate() const {
  require(sigma2 >= 0 && injected_variance >= 0 && beta >= 0 && gap >= 0 && rho0 >= 0 &&
              rho_v >= 0,
          "TradeoffParams: values must be non-negative");
  require(eps > 0, "TradeoffParams: eps must be positive");
}

double iterations_for_accuracy(const TradeoffParams& params) {
  params.validate();
  return (params.sigma2 + params.injected_variance) * params.beta * params.gap /
         (params.eps * params.eps);
}

bool net_gain(const TradeoffParams& params) {
  params.validate();
  return params.rho_v * (params.sigma2 + params.injected_variance) <=
         params.rho0 * params.sigma2;
}

}  // namespace vjpsketch
