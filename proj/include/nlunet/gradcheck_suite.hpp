#pragma once

#include <string>
#include <vector>

#include "nlunet/network.hpp"

namespace nlunet {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass() const { return max_rel_err < tolerance; }
};

// Finite-difference checks in 64-bit mode for every differentiable op and
// block, each over `seeds_per_op` random instances. All checks run against
// the same central-difference probe in finite_difference_check; tolerances
// are 1e-4 per op and 1e-3 for the composed network.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int seeds_per_op = 20);

}  // namespace nlunet
