#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vjpsketch {

struct DiagnosticsConfig {
  std::size_t n_draws = 20000;  // must be >= 1000
  std::uint64_t seed = 7;
  bool inject_bug = false;  // test-only: drop the 1/p rescale in one check
  std::string json_out;     // optional report path
};

struct DiagnosticCheck {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double expected = 0.0;
  double band = 0.0;  // acceptance band (4 sigma where applicable)
  std::string detail;
};

struct DiagnosticsReport {
  std::vector<DiagnosticCheck> checks;
  bool all_pass() const;
};

/// Runs the sampler-marginal, unbiasedness, distortion, and decomposition
/// suites at the configured sizes. Every randomized acceptance band is 4
/// standard errors.
DiagnosticsReport run_diagnostics(const DiagnosticsConfig& config);

/// Pretty-print one line per check; returns 0 when everything passed.
int report_diagnostics(const DiagnosticsReport& report, const DiagnosticsConfig& config);

}  // namespace vjpsketch
