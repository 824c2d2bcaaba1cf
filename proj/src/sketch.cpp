#include "vjpsketch/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vjpsketch {

const Matrix& GradBatch::second_moment() const {
  if (!gamma_) {
    Matrix gamma = matmul_a_bt(g_, g_);
    gamma *= 1.0 / static_cast<double>(batch());
    gamma_ = std::move(gamma);
  }
  return *gamma_;
}

bool is_proxy_kind(SketchKind kind) {
  return kind == SketchKind::ProxyL1 || kind == SketchKind::ProxyL2 ||
         kind == SketchKind::ProxyVar || kind == SketchKind::ProxyGSV;
}

bool is_coordinate_kind(SketchKind kind) {
  return kind == SketchKind::PerColumn || kind == SketchKind::ProxyL1 ||
         kind == SketchKind::ProxyL2 || kind == SketchKind::ProxyVar ||
         kind == SketchKind::DiagonalSketch;
}

bool is_spectral_kind(SketchKind kind) {
  return kind == SketchKind::ProxyGSV || kind == SketchKind::RankConstrainedSketch;
}

std::string to_string(SketchKind kind) {
  switch (kind) {
    case SketchKind::ExactIdentity: return "exact";
    case SketchKind::PerElement: return "per_element";
    case SketchKind::PerColumn: return "per_column";
    case SketchKind::PerSample: return "per_sample";
    case SketchKind::ProxyL1: return "l1";
    case SketchKind::ProxyL2: return "l2";
    case SketchKind::ProxyVar: return "var";
    case SketchKind::ProxyGSV: return "gsv";
    case SketchKind::DiagonalSketch: return "ds";
    case SketchKind::RankConstrainedSketch: return "rcs";
  }
  return "?";
}

std::size_t SketchOperatorSpec::rank_for(std::size_t n) const {
  if (budget_rank > 0) return budget_rank;
  const double r = std::round(budget_fraction * static_cast<double>(n));
  return std::max<std::size_t>(1, static_cast<std::size_t>(r));
}

bool SketchOperatorSpec::is_full_budget(std::size_t n) const {
  if (kind == SketchKind::ExactIdentity) return true;
  if (budget_rank > 0) return budget_rank >= n;
  return budget_fraction >= 1.0;
}

void SketchOperatorSpec::validate() const {
  if (budget_rank == 0)
    require(budget_fraction > 0.0 && budget_fraction <= 1.0,
            "sketch budget fraction must lie in (0,1]");
}

std::string SketchOperatorSpec::name() const {
  std::string s = to_string(kind);
  if (is_proxy_kind(kind) && squared) s += "_squared";
  const bool samples_from_plan = is_coordinate_kind(kind) || is_spectral_kind(kind);
  if (samples_from_plan && !correlated) s += "_indep";
  return s;
}

SketchOperatorSpec SketchOperatorSpec::parse(const std::string& name) {
  SketchOperatorSpec spec;
  std::string base = name;
  spec.squared = false;
  auto strip = [&base](const std::string& suffix) {
    if (base.size() > suffix.size() &&
        base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
      base.resize(base.size() - suffix.size());
      return true;
    }
    return false;
  };
  if (strip("_indep")) spec.correlated = false;
  if (strip("_squared")) spec.squared = true;

  if (base == "exact") spec.kind = SketchKind::ExactIdentity;
  else if (base == "per_element") spec.kind = SketchKind::PerElement;
  else if (base == "per_column") spec.kind = SketchKind::PerColumn;
  else if (base == "per_sample") spec.kind = SketchKind::PerSample;
  else if (base == "l1") spec.kind = SketchKind::ProxyL1;
  else if (base == "l2") spec.kind = SketchKind::ProxyL2;
  else if (base == "var") spec.kind = SketchKind::ProxyVar;
  else if (base == "gsv") spec.kind = SketchKind::ProxyGSV;
  else if (base == "ds") spec.kind = SketchKind::DiagonalSketch;
  else if (base == "rcs") spec.kind = SketchKind::RankConstrainedSketch;
  else throw std::invalid_argument("unknown sketch method: " + name);
  return spec;
}

namespace {

std::vector<double> proxy_weights(SketchKind kind, bool squared, const Matrix& g) {
  const std::size_t n = g.rows(), batch = g.cols();
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0, mean = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double v = g(i, b);
      switch (kind) {
        case SketchKind::ProxyL1: acc += std::abs(v); break;
        case SketchKind::ProxyL2: acc += v * v; break;
        case SketchKind::ProxyVar:
          acc += v * v;
          mean += v;
          break;
        default: break;
      }
    }
    double value = 0.0;
    if (kind == SketchKind::ProxyL1) value = acc;
    if (kind == SketchKind::ProxyL2) value = std::sqrt(acc);
    if (kind == SketchKind::ProxyVar) {
      mean /= static_cast<double>(batch);
      value = std::max(0.0, acc / static_cast<double>(batch) - mean * mean);
    }
    w[i] = squared ? value * value : value;
  }
  return w;
}

}  // namespace

std::vector<double> sketch_weights(const SketchOperatorSpec& spec, const GradBatch& g,
                                   const Matrix& w) {
  const std::size_t n = g.dim();
  switch (spec.kind) {
    case SketchKind::PerColumn: return std::vector<double>(n, 1.0);
    case SketchKind::ProxyL1:
    case SketchKind::ProxyL2:
    case SketchKind::ProxyVar:
      return proxy_weights(spec.kind, spec.squared, g.g());
    case SketchKind::ProxyGSV: {
      const Svd decomposition = svd(g.g());
      std::vector<double> weights = decomposition.singular_values;
      if (spec.squared)
        for (double& v : weights) v *= v;
      return weights;
    }
    case SketchKind::DiagonalSketch: {
      require(w.rows() == n, "sketch_weights: W rows must match gradient dimension");
      const Matrix& gamma = g.second_moment();
      std::vector<double> weights(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double row_sq = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) row_sq += w(i, j) * w(i, j);
        weights[i] = gamma(i, i) * row_sq;
      }
      return weights;
    }
    case SketchKind::RankConstrainedSketch: {
      require(w.rows() == n, "sketch_weights: W rows must match gradient dimension");
      const PsdSqrt gamma_roots = psd_sqrt_and_pinv_sqrt(g.second_moment());
      const Matrix wwt = matmul_a_bt(w, w);
      const Matrix a = matmul(gamma_roots.sqrt, matmul(wwt, gamma_roots.sqrt));
      // Symmetrize away round-off before the eigensolve.
      Matrix sym = a;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) sym(i, j) = 0.5 * (a(i, j) + a(j, i));
      const SymEig eig = sym_eig(sym);
      std::vector<double> weights(n, 0.0);
      const double scale = eig.eigenvalues.empty() ? 0.0 : std::max(eig.eigenvalues[0], 0.0);
      for (std::size_t i = 0; i < n; ++i)
        weights[i] = eig.eigenvalues[i] > 1e-12 * scale ? eig.eigenvalues[i] : 0.0;
      return weights;
    }
    default:
      throw std::invalid_argument("sketch_weights: kind has no importance weights");
  }
}

SketchPlan plan_sketch(const SketchOperatorSpec& spec, const GradBatch& g,
                       const Matrix& w, Rng& rng) {
  spec.validate();
  require(is_coordinate_kind(spec.kind) || is_spectral_kind(spec.kind),
          "plan_sketch: kind is not a planned sketch family");
  if (!w.empty())
    require(w.rows() == g.dim(), "plan_sketch: W rows must match gradient dimension");

  SketchPlan plan;
  plan.kind = spec.kind;
  plan.correlated = spec.correlated;

  if (g.g().max_abs() == 0.0) {
    // A zero batch sketches to zero: drop every coordinate.
    plan.alloc.p.assign(g.dim(), 0.0);
    plan.alloc.budget = spec.rank_for(g.dim());
    if (is_spectral_kind(spec.kind))
      plan.basis = SpectralBasis{Matrix::identity(g.dim()), Matrix(g.dim(), g.dim()),
                                 Matrix(g.dim(), g.dim())};
    return plan;
  }

  if (spec.kind == SketchKind::RankConstrainedSketch) {
    const PsdSqrt gamma_roots = psd_sqrt_and_pinv_sqrt(g.second_moment());
    const Matrix wwt = matmul_a_bt(w, w);
    const Matrix a = matmul(gamma_roots.sqrt, matmul(wwt, gamma_roots.sqrt));
    Matrix sym = a;
    for (std::size_t j = 0; j < g.dim(); ++j)
      for (std::size_t i = 0; i < g.dim(); ++i) sym(i, j) = 0.5 * (a(i, j) + a(j, i));
    SymEig eig = sym_eig(sym);
    const double scale = eig.eigenvalues.empty() ? 0.0 : std::max(eig.eigenvalues[0], 0.0);
    std::vector<double> weights(g.dim(), 0.0);
    for (std::size_t i = 0; i < g.dim(); ++i)
      weights[i] = eig.eigenvalues[i] > 1e-12 * scale ? eig.eigenvalues[i] : 0.0;
    plan.basis = SpectralBasis{std::move(eig.eigenvectors), gamma_roots.sqrt,
                               gamma_roots.pinv_sqrt};
    plan.alloc = [&] {
      if (std::all_of(weights.begin(), weights.end(), [](double v) { return v == 0.0; })) {
        ProbabilityAllocation empty;
        empty.p.assign(weights.size(), 0.0);
        empty.budget = spec.rank_for(g.dim());
        return empty;
      }
      return pstar_from_weights(weights, spec.rank_for(g.dim()));
    }();
  } else if (spec.kind == SketchKind::ProxyGSV) {
    Svd decomposition = svd(g.g());
    std::vector<double> weights = decomposition.singular_values;
    const double scale = weights.empty() ? 0.0 : weights[0];
    for (double& v : weights) {
      if (v <= 1e-14 * scale) v = 0.0;
      if (spec.squared) v *= v;
    }
    plan.basis = SpectralBasis{std::move(decomposition.u), std::nullopt, std::nullopt};
    if (std::all_of(weights.begin(), weights.end(), [](double v) { return v == 0.0; })) {
      plan.alloc.p.assign(weights.size(), 0.0);
      plan.alloc.budget = spec.rank_for(g.dim());
    } else {
      plan.alloc = pstar_from_weights(weights, spec.rank_for(g.dim()));
    }
  } else {
    const std::vector<double> weights = sketch_weights(spec, g, w);
    if (std::all_of(weights.begin(), weights.end(), [](double v) { return v == 0.0; })) {
      plan.alloc.p.assign(weights.size(), 0.0);
      plan.alloc.budget = spec.rank_for(g.dim());
    } else {
      plan.alloc = pstar_from_weights(weights, spec.rank_for(g.dim()));
    }
  }

  if (!plan.empty_support()) {
    plan.sample = spec.correlated ? correlated_exact_r_sample(plan.alloc, rng)
                                  : independent_bernoulli_sample(plan.alloc, rng);
  }
  return plan;
}

Matrix apply_plan_to_gradient(const SketchPlan& plan, const Matrix& g_rows) {
  const std::size_t batch = g_rows.rows(), n = g_rows.cols();
  if (plan.empty_support()) return Matrix(batch, n);

  if (is_coordinate_kind(plan.kind)) {
    Matrix sketched(batch, n);
    for (std::size_t k = 0; k < plan.sample.indices.size(); ++k) {
      const std::size_t j = plan.sample.indices[k];
      const double scale = plan.sample.scales[k];
      const double* src = g_rows.col(j);
      double* dst = sketched.col(j);
      for (std::size_t b = 0; b < batch; ++b) dst[b] = src[b] * scale;
    }
    return sketched;
  }

  require(plan.basis.has_value(), "apply_plan_to_gradient: spectral plan lacks basis");
  const Matrix t = operator_matrix(plan, plan.sample);
  return matmul_a_bt(g_rows, t);
}

Matrix operator_matrix(const SketchPlan& plan, const IndexSample& realization) {
  const std::size_t n = plan.alloc.p.size();
  if (is_coordinate_kind(plan.kind) || plan.kind == SketchKind::ExactIdentity) {
    Matrix r(n, n);
    for (std::size_t k = 0; k < realization.indices.size(); ++k)
      r(realization.indices[k], realization.indices[k]) = realization.scales[k];
    return r;
  }
  require(is_spectral_kind(plan.kind) && plan.basis.has_value(),
          "operator_matrix: plan does not describe a shared linear operator");

  const Matrix& u = plan.basis->directions;
  // U D U^T with D the realized diagonal of z_i / p_i.
  Matrix ud(u.rows(), u.cols());
  for (std::size_t k = 0; k < realization.indices.size(); ++k) {
    const std::size_t j = realization.indices[k];
    const double scale = realization.scales[k];
    const double* src = u.col(j);
    double* dst = ud.col(j);
    for (std::size_t i = 0; i < u.rows(); ++i) dst[i] = src[i] * scale;
  }
  Matrix udu = matmul_a_bt(ud, u);

  if (plan.kind == SketchKind::ProxyGSV) return udu;
  return matmul(*plan.basis->gamma_sqrt, matmul(udu, *plan.basis->gamma_pinv_sqrt));
}

LinearGrads exact_linear_backward(const Matrix& x, const Matrix& w, const Matrix& g) {
  require(x.rows() == g.rows(), "linear backward: batch sizes differ");
  require(w.rows() == g.cols(), "linear backward: gradient width != d_out");
  require(w.cols() == x.cols(), "linear backward: input width != d_in");
  LinearGrads out;
  out.dx = matmul(g, w);
  out.dw = matmul_at_b(g, x);
  out.db.assign(g.cols(), 0.0);
  for (std::size_t j = 0; j < g.cols(); ++j) {
    const double* col = g.col(j);
    double s = 0.0;
    for (std::size_t b = 0; b < g.rows(); ++b) s += col[b];
    out.db[j] = s;
  }
  return out;
}

namespace {

LinearGrads per_element_backward(double p, const Matrix& x, const Matrix& w,
                                 const Matrix& g, Rng& rng) {
  // Two independent element masks: one on W for dX, one on X for dW.
  Matrix w_masked = w;
  for (double& v : w_masked.data())
    if (!rng.bernoulli(p)) v = 0.0;
  Matrix x_masked = x;
  for (double& v : x_masked.data())
    if (!rng.bernoulli(p)) v = 0.0;

  LinearGrads out;
  out.dx = matmul(g, w_masked);
  out.dx *= 1.0 / p;
  out.dw = matmul_at_b(g, x_masked);
  out.dw *= 1.0 / p;
  // The bias gradient uses the unmasked G.
  out.db.assign(g.cols(), 0.0);
  for (std::size_t j = 0; j < g.cols(); ++j) {
    const double* col = g.col(j);
    double s = 0.0;
    for (std::size_t b = 0; b < g.rows(); ++b) s += col[b];
    out.db[j] = s;
  }
  return out;
}

Matrix per_sample_mask(double p, const Matrix& g, Rng& rng) {
  Matrix masked(g.rows(), g.cols());
  std::vector<bool> keep(g.rows());
  for (std::size_t b = 0; b < g.rows(); ++b) keep[b] = rng.bernoulli(p);
  const double scale = 1.0 / p;
  for (std::size_t j = 0; j < g.cols(); ++j) {
    const double* src = g.col(j);
    double* dst = masked.col(j);
    for (std::size_t b = 0; b < g.rows(); ++b)
      if (keep[b]) dst[b] = src[b] * scale;
  }
  return masked;
}

Matrix per_column_iid_mask(double p, const Matrix& g, Rng& rng) {
  Matrix masked(g.rows(), g.cols());
  const double scale = 1.0 / p;
  for (std::size_t j = 0; j < g.cols(); ++j) {
    if (!rng.bernoulli(p)) continue;
    const double* src = g.col(j);
    double* dst = masked.col(j);
    for (std::size_t b = 0; b < g.rows(); ++b) dst[b] = src[b] * scale;
  }
  return masked;
}

}  // namespace

LinearGrads sketched_linear_backward(const SketchOperatorSpec& spec, const Matrix& x,
                                     const Matrix& w, const Matrix& g, Rng& rng) {
  spec.validate();
  require(x.rows() == g.rows() && w.rows() == g.cols() && w.cols() == x.cols(),
          "sketched_linear_backward: shape mismatch");
  const std::size_t d_out = g.cols();

  if (spec.is_full_budget(d_out)) return exact_linear_backward(x, w, g);

  switch (spec.kind) {
    case SketchKind::PerElement: {
      const double p = spec.budget_rank > 0
                           ? std::min(1.0, static_cast<double>(spec.budget_rank) /
                                               static_cast<double>(d_out))
                           : spec.budget_fraction;
      return per_element_backward(p, x, w, g, rng);
    }
    case SketchKind::PerSample: {
      const double p = spec.budget_rank > 0
                           ? std::min(1.0, static_cast<double>(spec.budget_rank) /
                                               static_cast<double>(d_out))
                           : spec.budget_fraction;
      return exact_linear_backward(x, w, per_sample_mask(p, g, rng));
    }
    case SketchKind::PerColumn:
      if (!spec.correlated) {
        const double p = spec.budget_rank > 0
                             ? std::min(1.0, static_cast<double>(spec.budget_rank) /
                                                 static_cast<double>(d_out))
                             : spec.budget_fraction;
        return exact_linear_backward(x, w, per_column_iid_mask(p, g, rng));
      }
      [[fallthrough]];
    default: {
      const GradBatch batch(g.transposed());
      const SketchPlan plan = plan_sketch(spec, batch, w, rng);
      return exact_linear_backward(x, w, apply_plan_to_gradient(plan, g));
    }
  }
}

LowRankSketchResult unbiased_lowrank_sketch(const Matrix& m, std::size_t r, Rng& rng) {
  require(r >= 1, "unbiased_lowrank_sketch: rank budget must be >= 1");
  require(m.max_abs() > 0.0, "unbiased_lowrank_sketch: matrix must be nonzero");

  const Svd decomposition = svd(m);
  const auto& sigma = decomposition.singular_values;
  const std::size_t q = sigma.size();

  LowRankSketchResult out;
  if (r >= q) {
    out.s = m;
    out.i0 = q;
    out.p.assign(q, 1.0);
    const double norm = m.frobenius_norm();
    out.expected_sq_frobenius = norm * norm;
    return out;
  }

  // Smallest i0 with sigma_{i0} > tail/(r-i0) >= sigma_{i0+1}; i0 = 0 when
  // sigma_1 <= (1/r) sum sigma.
  std::vector<double> tail(q + 1, 0.0);
  for (std::size_t i = q; i-- > 0;) tail[i] = tail[i + 1] + sigma[i];
  std::size_t i0 = r;  // sentinel
  for (std::size_t candidate = 0; candidate < r; ++candidate) {
    const double alpha = tail[candidate] / static_cast<double>(r - candidate);
    const bool left_ok = candidate == 0 || sigma[candidate - 1] > alpha;
    if (left_ok && alpha >= sigma[candidate]) {
      i0 = candidate;
      break;
    }
  }
  // i0 == r only when rank(M) <= r: the top r components are kept
  // deterministically and nothing is sampled.
  require(i0 < r || tail[r] == 0.0, "unbiased_lowrank_sketch: threshold scan failed");

  out.i0 = i0;
  out.p.assign(q, 0.0);
  for (std::size_t i = 0; i < i0; ++i) out.p[i] = 1.0;

  const double tail_sum = tail[i0];
  double expected = 0.0;
  for (std::size_t i = 0; i < i0; ++i) expected += sigma[i] * sigma[i];
  if (tail_sum > 0.0) {
    for (std::size_t i = i0; i < q; ++i)
      out.p[i] = std::min(1.0, static_cast<double>(r - i0) * sigma[i] / tail_sum);
    expected += tail_sum * tail_sum / static_cast<double>(r - i0);
  }
  out.expected_sq_frobenius = expected;

  ProbabilityAllocation alloc;
  alloc.p = out.p;
  alloc.budget = r;
  alloc.support_size = 0;
  for (double p : out.p)
    if (p > 0.0) ++alloc.support_size;

  const IndexSample draw = correlated_exact_r_sample(alloc, rng);

  out.s = Matrix(m.rows(), m.cols());
  for (std::size_t k = 0; k < draw.indices.size(); ++k) {
    const std::size_t i = draw.indices[k];
    const double coef = sigma[i] * draw.scales[k];
    const double* u = decomposition.u.col(i);
    const double* v = decomposition.v.col(i);
    for (std::size_t jj = 0; jj < m.cols(); ++jj) {
      double* dst = out.s.col(jj);
      const double vj = coef * v[jj];
      for (std::size_t ii = 0; ii < m.rows(); ++ii) dst[ii] += u[ii] * vj;
    }
  }
  return out;
}

}  // namespace vjpsketch
