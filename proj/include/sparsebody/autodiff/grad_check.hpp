#pragma once

#include "sparsebody/autodiff/tensor.hpp"

#include <functional>
#include <string>

namespace sparsebody::ad {

enum class GradCheckStatus { kPass, kFail, kSkipped };

struct GradCheckReport {
  GradCheckStatus status = GradCheckStatus::kPass;
  /// max_i |analytic_i - numeric_i| / max(||analytic||_inf, ||numeric||_inf)
  double max_relative_error = 0.0;
  Index worst_index = -1;
  std::string message;

  bool passed() const { return status == GradCheckStatus::kPass; }
};

/// A scalar function of one tensor. When called with a recorded tensor it must
/// build its graph on that tensor's tape.
using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Compares backward() against central differences with the given step.
/// Points where a primitive sits exactly on a kink are reported as skipped.
/// Throws NumericError when f(x) is not finite.
GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, double step = 1e-5, double tol = 1e-4);

}  // namespace sparsebody::ad
