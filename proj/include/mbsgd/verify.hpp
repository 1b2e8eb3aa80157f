#pragma once

#include "mbsgd/rates.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace mbsgd {

enum class VerifyLevel { Quick, Full };

VerifyLevel parse_verify_level(const std::string& name);
const char* to_string(VerifyLevel level) noexcept;

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst observed value of the checked quantity and the limit it is held to.
  double observed = 0.0;
  double limit = 0.0;
  std::string detail;
};

/// Replaces optimal_step inside the step-optimality check (used to confirm the check can fail).
using StepOverride = std::function<double(double m, const QuadraticRateParams& p)>;

struct VerifyOptions {
  VerifyLevel level = VerifyLevel::Quick;
  std::uint64_t seed = 1;
  StepOverride optimal_step_override;
};

/// Runs the oracle suite. Quick uses 10 seeded instances per property, full uses 100.
std::vector<CheckResult> run_verification(const VerifyOptions& options);

bool all_passed(const std::vector<CheckResult>& results);
void write_verification_table(std::ostream& out, const std::vector<CheckResult>& results);
std::string verification_json(const std::vector<CheckResult>& results, const VerifyOptions& options);

}  // namespace mbsgd
