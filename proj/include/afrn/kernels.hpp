#ifndef AFRN_KERNELS_HPP_
#define AFRN_KERNELS_HPP_

#include <utility>

#include "afrn/matrix.hpp"

namespace afrn {

// Dense kernels used by every stage of the model. Each differentiable op has
// a forward function and a backward function mapping the output gradient to
// input gradients. Accumulation order is fixed (row-major) so results are
// bit-reproducible for identical inputs.

Matrix matmul(const Matrix& a, const Matrix& b);
// Returns (grad_a, grad_b) = (grad_out * b^T, a^T * grad_out).
std::pair<Matrix, Matrix> matmul_backward(const Matrix& a, const Matrix& b,
                                          const Matrix& grad_out);

Matrix hadamard(const Matrix& a, const Matrix& b);
std::pair<Matrix, Matrix> hadamard_backward(const Matrix& a, const Matrix& b,
                                            const Matrix& grad_out);

// max(0, x); the subgradient at exactly 0 is 0.
Matrix relu(const Matrix& a);
Matrix relu_backward(const Matrix& input, const Matrix& grad_out);

// Exp-normalizes over all rows*cols entries jointly (max-subtracted).
// Output entries are in (0, 1] and sum to 1.
Matrix softmax_flat(const Matrix& logits);
Matrix softmax_flat_backward(const Matrix& softmax_out, const Matrix& grad_out);

Matrix transpose(const Matrix& a);

// Elementwise helpers.
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void accumulate(Matrix& into, const Matrix& from);
double dot_all(const Matrix& a, const Matrix& b);

}  // namespace afrn

#endif  // AFRN_KERNELS_HPP_
