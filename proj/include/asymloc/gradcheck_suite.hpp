#pragma once

// End-to-end finite-difference verification of the training objectives on
// micro networks, in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include "asymloc/gradcheck.hpp"

namespace asymloc {

struct GradcheckCase {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

struct GradcheckSuiteOptions {
  std::uint64_t seed = 0;
  double h = 1e-3;
  double tolerance = 1e-3;
  /// Instances whose ReLU pattern flips under a +-h probe are not
  /// differentiable there; the suite moves on to the next instance seed.
  int max_instances = 200;
};

struct GradcheckSuiteResult {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
  bool teacher_gradients_zero = false;
  std::uint64_t instance_seed = 0;  ///< seed of the instance that was checked
  int rejected_instances = 0;
  bool passed = false;
};

GradcheckSuiteResult run_gradcheck_suite(const GradcheckSuiteOptions& opts);

}  // namespace asymloc
