#include "afrn/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace afrn {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: inner dimension mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.values[k * b.cols];
      double* orow = &out.values[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

std::pair<Matrix, Matrix> matmul_backward(const Matrix& a, const Matrix& b,
                                          const Matrix& grad_out) {
  if (grad_out.rows != a.rows || grad_out.cols != b.cols)
    throw ShapeError("matmul_backward: grad shape " + shape_str(grad_out) +
                     " does not match output " + std::to_string(a.rows) + "x" +
                     std::to_string(b.cols));
  return {matmul(grad_out, transpose(b)), matmul(transpose(a), grad_out)};
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape("hadamard", a, b);
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i)
    out.values[i] = a.values[i] * b.values[i];
  return out;
}

std::pair<Matrix, Matrix> hadamard_backward(const Matrix& a, const Matrix& b,
                                            const Matrix& grad_out) {
  require_same_shape("hadamard_backward", a, grad_out);
  return {hadamard(grad_out, b), hadamard(grad_out, a)};
}

Matrix relu(const Matrix& a) {
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i)
    out.values[i] = a.values[i] > 0.0 ? a.values[i] : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& input, const Matrix& grad_out) {
  require_same_shape("relu_backward", input, grad_out);
  Matrix out(input.rows, input.cols);
  for (std::size_t i = 0; i < input.size(); ++i)
    out.values[i] = input.values[i] > 0.0 ? grad_out.values[i] : 0.0;
  return out;
}

Matrix softmax_flat(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  if (logits.size() == 0) return out;
  const double max_logit =
      *std::max_element(logits.values.begin(), logits.values.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.values[i] = std::exp(logits.values[i] - max_logit);
    sum += out.values[i];
  }
  for (double& v : out.values) v /= sum;
  return out;
}

Matrix softmax_flat_backward(const Matrix& softmax_out, const Matrix& grad_out) {
  require_same_shape("softmax_flat_backward", softmax_out, grad_out);
  const double weighted = dot_all(grad_out, softmax_out);
  Matrix out(softmax_out.rows, softmax_out.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values[i] = softmax_out.values[i] * (grad_out.values[i] - weighted);
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i)
    out.values[i] = a.values[i] + b.values[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] * s;
  return out;
}

void accumulate(Matrix& into, const Matrix& from) {
  require_same_shape("accumulate", into, from);
  for (std::size_t i = 0; i < into.size(); ++i)
    into.values[i] += from.values[i];
}

double dot_all(const Matrix& a, const Matrix& b) {
  require_same_shape("dot_all", a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    sum += a.values[i] * b.values[i];
  return sum;
}

}  // namespace afrn
