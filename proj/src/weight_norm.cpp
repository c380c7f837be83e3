#include "afrn/weight_norm.hpp"

#include <cmath>
#include <string>

namespace afrn {

namespace {
double column_norm(const Matrix& m, std::size_t j) {
  double sum = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double v = m.at(i, j);
    sum += v * v;
  }
  return std::sqrt(sum);
}
}  // namespace

Matrix weight_norm_materialize(const Matrix& direction, const Vector& gains) {
  if (gains.size() != direction.cols)
    throw ShapeError("weight_norm: gains length " + std::to_string(gains.size()) +
                     " != column count " + std::to_string(direction.cols));
  Matrix out(direction.rows, direction.cols);
  for (std::size_t j = 0; j < direction.cols; ++j) {
    const double norm = column_norm(direction, j);
    if (norm == 0.0)
      throw NumericError("weight_norm: zero-norm direction column " +
                         std::to_string(j));
    const double s = gains[j] / norm;
    for (std::size_t i = 0; i < direction.rows; ++i)
      out.at(i, j) = direction.at(i, j) * s;
  }
  return out;
}

void weight_norm_backward(const Matrix& direction, const Vector& gains,
                          const Matrix& grad_materialized,
                          Matrix& grad_direction, Vector& grad_gains) {
  require_same_shape("weight_norm_backward", direction, grad_materialized);
  grad_direction = Matrix(direction.rows, direction.cols);
  grad_gains.assign(gains.size(), 0.0);
  for (std::size_t j = 0; j < direction.cols; ++j) {
    const double norm = column_norm(direction, j);
    if (norm == 0.0)
      throw NumericError("weight_norm_backward: zero-norm direction column " +
                         std::to_string(j));
    double unit_dot_grad = 0.0;
    for (std::size_t i = 0; i < direction.rows; ++i)
      unit_dot_grad += (direction.at(i, j) / norm) * grad_materialized.at(i, j);
    grad_gains[j] = unit_dot_grad;
    const double s = gains[j] / norm;
    for (std::size_t i = 0; i < direction.rows; ++i) {
      const double unit = direction.at(i, j) / norm;
      grad_direction.at(i, j) =
          s * (grad_materialized.at(i, j) - unit * unit_dot_grad);
    }
  }
}

}  // namespace afrn
