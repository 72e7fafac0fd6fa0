#pragma once

// Built-in verification suite: gradient checks, KL closed form against Monte
// Carlo, metric brute-force oracles and format round-trips.

#include <string>
#include <vector>

namespace cteg {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Negates the closed-form KL inside the KL checks; the suite must then fail.
  bool sabotage_kl = false;
  /// Scratch directory for format round-trips; a temporary one when empty.
  std::string work_dir;
};

/// Finite-difference checks of the full model loss, one per parameter group,
/// at d_model 16, T = 3, L = 2, over several architecture variants.
std::vector<CheckResult> gradient_checks(double tolerance = 1e-4);

/// Closed-form KL against a 1e5-sample Monte Carlo estimate on 20 random
/// Gaussian pairs, plus the identity and hand cases.
std::vector<CheckResult> kl_checks(bool sabotage = false);

/// Every metric, the shuffle baseline and bootstrap SE against naive
/// reference loops on 10 random sequences (T <= 8, d = 53).
std::vector<CheckResult> metric_oracle_checks(double tolerance = 1e-9);

/// Bitwise round-trips of sequence, embedding, manifest and checkpoint files.
std::vector<CheckResult> format_checks(const std::string& work_dir = {});

std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

/// Fixed-width pass/fail table.
std::string format_results(const std::vector<CheckResult>& results);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace cteg
