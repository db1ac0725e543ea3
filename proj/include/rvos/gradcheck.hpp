#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rvos {

/// One named finite-difference check: returns the max relative error of a
/// seeded random instance. Tolerance is pinned per check.
struct GradCheck {
  std::string module;
  std::string name;
  double tolerance;
  std::function<double(std::uint64_t seed)> run;
};

/// The full battery across modules.
std::vector<GradCheck> gradcheck_battery();

struct GradCheckResult {
  std::string module;
  std::string name;
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Runs every check whose module matches the filter (empty = all) over
/// seeds 1..seeds_per_check.
std::vector<GradCheckResult> run_gradchecks(const std::string& module_filter,
                                            std::size_t seeds_per_check);

/// Whether a mask-only DICE loss reaches every box-head parameter with a
/// finite, not-identically-zero gradient at a random initialization.
bool dice_grad_reaches_box_head(std::uint64_t seed);

}  // namespace rvos
