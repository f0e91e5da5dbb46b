#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nwbrl {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick property checks over the numerical core (conjugacy, marginal
/// likelihood chain rule, gradients, metrics). Seconds, not minutes.
std::vector<CheckResult> run_self_checks(std::uint64_t seed);

}  // namespace nwbrl
