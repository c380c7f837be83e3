#ifndef AFRN_MATRIX_HPP_
#define AFRN_MATRIX_HPP_

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace afrn {

// Shape violations and other caller errors on otherwise healthy data.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, degenerate parameters, failed numeric checks.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format and filesystem failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit reals.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> data) {
    Matrix m;
    m.rows = data.size();
    m.cols = m.rows ? data.begin()->size() : 0;
    m.values.reserve(m.rows * m.cols);
    for (const auto& row : data) {
      if (row.size() != m.cols)
        throw ShapeError("from_rows: ragged rows");
      m.values.insert(m.values.end(), row.begin(), row.end());
    }
    return m;
  }

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const Matrix& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

// H x W x D activation block; values indexed as (h*W + w)*D + d.
struct Tensor3 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;
  std::vector<double> values;

  Tensor3() = default;
  Tensor3(std::size_t h, std::size_t w, std::size_t d, double fill = 0.0)
      : height(h), width(w), depth(d), values(h * w * d, fill) {}

  double& at(std::size_t h, std::size_t w, std::size_t d) {
    return values[(h * width + w) * depth + d];
  }
  double at(std::size_t h, std::size_t w, std::size_t d) const {
    return values[(h * width + w) * depth + d];
  }
  std::size_t size() const { return values.size(); }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace afrn

#endif  // AFRN_MATRIX_HPP_
