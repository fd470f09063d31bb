#pragma once

// Named verification harnesses shared by the CLI and the acceptance suite:
// finite-difference gradient checks for every composite block and the
// metric-identity sweeps. All checks run in double precision.

#include <cstdint>
#include <string>
#include <vector>

namespace volumix {

struct ModuleCheck {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// The gradient-checkable module names, in run order.
const std::vector<std::string>& gradcheck_modules();

// module: "all" or one of gradcheck_modules(). DataError on unknown names.
std::vector<ModuleCheck> run_gradchecks(const std::string& module, uint64_t seed);

struct MetricsCheck {
  double max_identity_err = 0.0;    // |DSC - 2*IoU/(1+IoU)| over random mask pairs
  int monotonicity_violations = 0;  // NSD must not decrease as tau grows
  int cases = 0;
};

MetricsCheck run_metrics_checks(uint64_t seed, int cases);

}  // namespace volumix
