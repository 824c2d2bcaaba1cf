#include "vjpsketch/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "vjpsketch/analysis.hpp"
#include "vjpsketch/matrix.hpp"
#include "vjpsketch/sketch.hpp"

namespace vjpsketch {

bool DiagnosticsReport::all_pass() const {
  for (const DiagnosticCheck& check : checks)
    if (!check.pass) return false;
  return true;
}

namespace {

DiagnosticCheck sampler_marginals_check(std::size_t n_draws, Rng& rng) {
  const std::vector<double> weights = {0.7 * 0.7, 0.5 * 0.5, 0.8 * 0.8};
  ProbabilityAllocation alloc;
  alloc.p = {0.7, 0.5, 0.8};
  alloc.budget = 2;
  alloc.support_size = 3;

  std::vector<std::size_t> hits(3, 0);
  bool cardinality_ok = true;
  for (std::size_t d = 0; d < n_draws; ++d) {
    const IndexSample sample = correlated_exact_r_sample(alloc, rng);
    cardinality_ok = cardinality_ok && sample.indices.size() == 2;
    for (std::size_t i : sample.indices) ++hits[i];
  }

  DiagnosticCheck check;
  check.name = "sampler_marginals";
  double worst = 0.0, worst_band = 1.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = alloc.p[i];
    const double freq = static_cast<double>(hits[i]) / static_cast<double>(n_draws);
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n_draws));
    if (std::abs(freq - p) / (4.0 * sigma) > worst) {
      worst = std::abs(freq - p) / (4.0 * sigma);
      check.measured = freq;
      check.expected = p;
      worst_band = 4.0 * sigma;
    }
  }
  check.band = worst_band;
  check.pass = cardinality_ok && worst <= 1.0;
  check.detail = cardinality_ok ? "cardinality exact, worst marginal shown"
                                : "cardinality violation";
  return check;
}

DiagnosticCheck unbiasedness_check(const std::string& method, std::size_t n_draws,
                                   bool inject_bug, Rng& rng) {
  // Small fixed instance: d_in 5, d_out 4, batch 3.
  Rng setup(101);
  const Matrix x = Matrix::random_gaussian(3, 5, setup);
  const Matrix w = Matrix::random_gaussian(4, 5, setup);
  const Matrix g = Matrix::random_gaussian(3, 4, setup);

  SketchOperatorSpec spec = SketchOperatorSpec::parse(method);
  spec.budget_fraction = 0.5;
  const LinearGrads exact = exact_linear_backward(x, w, g);

  const std::size_t entries = exact.dw.size();
  std::vector<double> mean(entries, 0.0), m2(entries, 0.0);
  for (std::size_t d = 0; d < n_draws; ++d) {
    LinearGrads draw;
    if (inject_bug) {
      // Deliberate fault: mask without the 1/p rescale.
      const GradBatch batch(g.transposed());
      SketchPlan plan = plan_sketch(spec, batch, w, rng);
      for (double& s : plan.sample.scales) s = 1.0;
      draw = exact_linear_backward(x, w, apply_plan_to_gradient(plan, g));
    } else {
      draw = sketched_linear_backward(spec, x, w, g, rng);
    }
    for (std::size_t k = 0; k < entries; ++k) {
      const double value = draw.dw.data()[k];
      const double delta = value - mean[k];
      mean[k] += delta / static_cast<double>(d + 1);
      m2[k] += delta * (value - mean[k]);
    }
  }

  DiagnosticCheck check;
  check.name = "unbiasedness_" + method + (inject_bug ? "_injected_bug" : "");
  check.pass = true;
  double worst_ratio = 0.0;
  for (std::size_t k = 0; k < entries; ++k) {
    const double se = std::sqrt(m2[k] / static_cast<double>(n_draws - 1) /
                                static_cast<double>(n_draws));
    const double band = std::max(4.0 * se, 1e-12);
    const double ratio = std::abs(mean[k] - exact.dw.data()[k]) / band;
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      check.measured = mean[k];
      check.expected = exact.dw.data()[k];
      check.band = band;
    }
  }
  check.pass = worst_ratio <= 1.0;
  check.detail = "worst dW entry vs exact backward";
  return check;
}

DiagnosticCheck distortion_check(std::size_t n_draws, Rng& rng) {
  Rng setup(202);
  const Matrix w = Matrix::random_gaussian(6, 4, setup);
  const GradBatch g(Matrix::random_gaussian(6, 5, setup));

  SketchOperatorSpec spec;
  spec.kind = SketchKind::DiagonalSketch;
  spec.budget_rank = 3;
  spec.correlated = false;  // closed form requires independent gates

  const DistortionReport report = estimate_distortion(spec, w, g, n_draws, rng);
  DiagnosticCheck check;
  check.name = "ds_distortion_analytic_vs_mc";
  check.measured = report.mc_mean;
  check.expected = report.analytic.value();
  check.band = 4.0 * report.std_error;
  check.pass = std::abs(check.measured - check.expected) <= check.band;
  check.detail = "diagonal sketch, r=3, n=6";
  return check;
}

DiagnosticCheck decomposition_check(std::size_t n_draws, Rng& rng) {
  Rng setup(303);
  SketchOperatorSpec half;
  half.kind = SketchKind::PerColumn;
  half.budget_fraction = 0.5;
  std::vector<ChainNode> chain = {{Matrix::random_gaussian(3, 3, setup), half},
                                  {Matrix::random_gaussian(3, 3, setup), half}};
  const Matrix seed = Matrix::random_gaussian(4, 3, setup);

  const DecompositionReport report = variance_decomposition_check(chain, seed, n_draws, rng);
  DiagnosticCheck check;
  check.name = "variance_decomposition_2chain";
  check.measured = report.lhs;
  check.expected = report.local + report.propagated;
  check.band = 4.0 * report.combined_se();
  check.pass = report.holds();
  check.detail = "per-column p=0.5 on both edges";
  return check;
}

}  // namespace

DiagnosticsReport run_diagnostics(const DiagnosticsConfig& config) {
  require(config.n_draws >= 1000, "diagnostics: n_draws must be >= 1000");
  Rng rng(config.seed);

  DiagnosticsReport report;
  report.checks.push_back(sampler_marginals_check(config.n_draws * 5, rng));

  const char* methods[] = {"per_element", "per_sample", "per_column", "l1_squared",
                           "l2_squared",  "var_squared", "gsv_squared", "ds", "rcs"};
  for (const char* method : methods)
    report.checks.push_back(unbiasedness_check(method, config.n_draws, false, rng));
  if (config.inject_bug)
    report.checks.push_back(unbiasedness_check("l1_squared", config.n_draws, true, rng));

  report.checks.push_back(distortion_check(config.n_draws, rng));
  report.checks.push_back(decomposition_check(config.n_draws, rng));
  return report;
}

int report_diagnostics(const DiagnosticsReport& report, const DiagnosticsConfig& config) {
  for (const DiagnosticCheck& check : report.checks)
    std::printf("[%s] %-40s measured=%.6g expected=%.6g band=%.3g %s\n",
                check.pass ? "PASS" : "FAIL", check.name.c_str(), check.measured,
                check.expected, check.band, check.detail.c_str());

  if (!config.json_out.empty()) {
    nlohmann::json doc;
    doc["n_draws"] = config.n_draws;
    doc["seed"] = config.seed;
    doc["checks"] = nlohmann::json::array();
    for (const DiagnosticCheck& check : report.checks)
      doc["checks"].push_back({{"name", check.name},
                               {"pass", check.pass},
                               {"measured", check.measured},
                               {"expected", check.expected},
                               {"band", check.band},
                               {"detail", check.detail}});
    doc["all_pass"] = report.all_pass();
    std::ofstream out(config.json_out);
    out << doc.dump(2) << "\n";
  }

  std::printf("%s\n", report.all_pass() ? "all diagnostics passed" : "DIAGNOSTICS FAILED");
  return report.all_pass() ? 0 : 1;
}

}  // namespace vjpsketch
