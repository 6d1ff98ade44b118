#pragma once

#include "sparsebody/body_model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sparsebody {

struct GradientCheckSummary {
  std::string name;
  int points = 0;  // checked points (kink hits are redrawn, not counted)
  int failed = 0;
  int redrawn = 0;
  double worst_relative_error = 0.0;
  std::string first_failure;
};

struct GradientSuiteResult {
  std::vector<GradientCheckSummary> checks;
  double seconds = 0.0;
  bool passed() const;
};

/// Central-difference checks of every loss and of the differentiable forward
/// model, each at `points` random points on the given model. The model must
/// have as many joints as `limits` (the toy limits when empty).
GradientSuiteResult run_gradient_suite(const BodyModel& model, int points = 20, std::uint64_t seed = 1,
                                       double tolerance = 1e-4,
                                       const std::function<void(const GradientCheckSummary&)>& progress = {});

}  // namespace sparsebody
