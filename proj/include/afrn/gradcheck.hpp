#ifndef AFRN_GRADCHECK_HPP_
#define AFRN_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <string>

#include "afrn/matrix.hpp"

namespace afrn {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  bool pass = false;
  double step = 0.0;
  std::size_t checked = 0;  // coordinates compared
  std::size_t skipped = 0;  // coordinates skipped as non-smooth points
};

// A differentiable matrix -> matrix operation paired with its analytic
// backward. `near_kink` (optional) marks input coordinates where the op is
// not differentiable; those are skipped rather than failed.
struct DifferentiableOp {
  std::string name;
  std::function<Matrix(const Matrix&)> forward;
  // grad w.r.t. input, given (input, grad of scalar objective w.r.t. output)
  std::function<Matrix(const Matrix&, const Matrix&)> backward;
  std::function<bool(const Matrix&, std::size_t)> near_kink;
};

// Compares the analytic gradient of a seeded random scalar projection of
// op.forward against central finite differences. Step per coordinate is
// step_scale * max(1, |x_i|). Relative error uses an absolute floor of 1e-4
// so finite-difference roundoff on near-zero gradients does not dominate.
GradCheckReport finite_diff_check(const DifferentiableOp& op, const Matrix& input,
                                  double tolerance, std::uint64_t seed = 12345,
                                  double step_scale = 1e-5);

// Same comparison for an arbitrary scalar objective of a flat parameter
// vector; used for layer- and model-level checks.
GradCheckReport finite_diff_check_scalar(
    const std::string& name,
    const std::function<double(const std::vector<double>&)>& objective,
    const std::vector<double>& point, const std::vector<double>& analytic_grad,
    double tolerance, double step_scale = 1e-5);

double relative_error(double a, double b);

}  // namespace afrn

#endif  // AFRN_GRADCHECK_HPP_
