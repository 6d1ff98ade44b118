#include "sparsebody/autodiff/grad_check.hpp"

#include "sparsebody/errors.hpp"

#include <cmath>
#include <sstream>

namespace sparsebody::ad {

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, double step, double tol) {
  GradCheckReport report;

  Tape tape;
  const Tensor xv = tape.variable(x);
  const Tensor y = f(xv);
  if (y.size() != 1) throw ContractViolation("grad_check: f must be scalar, got " + shape_string(y.shape()));
  if (!std::isfinite(y.item())) throw NumericError("grad_check: f(x) is not finite");

  if (tape.nondifferentiable_count() > 0) {
    report.status = GradCheckStatus::kSkipped;
    report.message = "non-differentiable point, skipped";
    return report;
  }

  Array analytic = Array::Zero(x.size());
  if (y.on_tape()) analytic = tape.backward(y)[xv].data();

  Array numeric(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Array plus = x.data();
    Array minus = x.data();
    plus[i] += step;
    minus[i] -= step;
    const double fp = f(Tensor(x.shape(), plus)).item();
    const double fm = f(Tensor(x.shape(), minus)).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: f is not finite near x");
    numeric[i] = (fp - fm) / (2.0 * step);
  }

  const double scale = std::max(analytic.abs().maxCoeff(), numeric.abs().maxCoeff());
  if (scale > 0.0) {
    const Array rel = (analytic - numeric).abs() / scale;
    report.max_relative_error = rel.maxCoeff(&report.worst_index);
  }
  report.status = report.max_relative_error <= tol ? GradCheckStatus::kPass : GradCheckStatus::kFail;
  std::ostringstream os;
  os << "max relative error " << report.max_relative_error;
  if (report.worst_index >= 0) {
    os << " at index " << report.worst_index << " (analytic " << analytic[report.worst_index] << ", numeric "
       << numeric[report.worst_index] << ")";
  }
  report.message = os.str();
  return report;
}

}  // namespace sparsebody::ad
