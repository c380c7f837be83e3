#include "afrn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "afrn/kernels.hpp"
#include "afrn/rng.hpp"

namespace afrn {

double relative_error(double a, double b) {
  const double diff = std::abs(a - b);
  const double denom = std::max({std::abs(a), std::abs(b), 1e-4});
  return diff / denom;
}

GradCheckReport finite_diff_check(const DifferentiableOp& op, const Matrix& input,
                                  double tolerance, std::uint64_t seed,
                                  double step_scale) {
  if (!all_finite(input.values))
    throw NumericError("finite_diff_check(" + op.name + "): non-finite input");

  Rng rng(seed);
  const Matrix out0 = op.forward(input);
  if (!all_finite(out0.values))
    throw NumericError("finite_diff_check(" + op.name +
                       "): non-finite forward output");

  // Random projection weights define the scalar objective sum(w .* f(x)).
  Matrix w(out0.rows, out0.cols);
  for (double& v : w.values) v = rng.uniform(-1.0, 1.0);

  const Matrix analytic = op.backward(input, w);
  if (!all_finite(analytic.values))
    throw NumericError("finite_diff_check(" + op.name +
                       "): non-finite analytic gradient");

  GradCheckReport report;
  report.op_name = op.name;
  report.step = step_scale;

  Matrix probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (op.near_kink && op.near_kink(input, i)) {
      ++report.skipped;
      continue;
    }
    const double x0 = input.values[i];
    const double h = step_scale * std::max(1.0, std::abs(x0));
    probe.values[i] = x0 + h;
    const double up = dot_all(w, op.forward(probe));
    probe.values[i] = x0 - h;
    const double down = dot_all(w, op.forward(probe));
    probe.values[i] = x0;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_check(" + op.name +
                         "): non-finite perturbed output");
    const double numeric = (up - down) / (2.0 * h);
    report.max_rel_error =
        std::max(report.max_rel_error, relative_error(analytic.values[i], numeric));
    ++report.checked;
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

GradCheckReport finite_diff_check_scalar(
    const std::string& name,
    const std::function<double(const std::vector<double>&)>& objective,
    const std::vector<double>& point, const std::vector<double>& analytic_grad,
    double tolerance, double step_scale) {
  if (point.size() != analytic_grad.size())
    throw ShapeError("finite_diff_check_scalar(" + name +
                     "): gradient length mismatch");

  GradCheckReport report;
  report.op_name = name;
  report.step = step_scale;

  std::vector<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    const double h = step_scale * std::max(1.0, std::abs(x0));
    probe[i] = x0 + h;
    const double up = objective(probe);
    probe[i] = x0 - h;
    const double down = objective(probe);
    probe[i] = x0;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_check_scalar(" + name +
                         "): non-finite objective");
    const double numeric = (up - down) / (2.0 * h);
    report.max_rel_error = std::max(report.max_rel_error,
                                    relative_error(analytic_grad[i], numeric));
    ++report.checked;
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace afrn
