#pragma once

// Self-contained verification suites shared by the CLI (`verify`,
// `selftest`) and the acceptance test binary.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace yopinn::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Closed-form rogue waves: parameters, bright-bright equivalence, PDE
/// residuals of the three families, peak values.
std::vector<CheckResult> exact_solution_suite(std::uint64_t seed = 7);

/// Objective gradient against central differences on random small
/// networks, and second derivatives of polynomial fixtures.
std::vector<CheckResult> autodiff_suite(std::uint64_t seed = 11);

/// Weight-decay gradient-step identity and the regularized quadratic oracle.
std::vector<CheckResult> regularization_suite(std::uint64_t seed = 13);

/// Slope-recovery value at initialization and the penalty gradient.
std::vector<CheckResult> loss_suite(std::uint64_t seed = 17);

/// Latin hypercube stratification and noise amplitude.
std::vector<CheckResult> sampling_suite(std::uint64_t seed = 19);

/// Everything except the exact-solution suite.
std::vector<CheckResult> property_suite();

/// One "PASS name (detail)" / "FAIL name (detail)" line per result.
void print(std::ostream& os, const std::vector<CheckResult>& results);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace yopinn::checks
