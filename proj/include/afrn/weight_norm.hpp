#ifndef AFRN_WEIGHT_NORM_HPP_
#define AFRN_WEIGHT_NORM_HPP_

#include "afrn/matrix.hpp"

namespace afrn {

// Weight-normalized linear map: column j of the materialized matrix is
// gains[j] * direction_j / ||direction_j||_2.
struct WeightNormParam {
  Matrix direction;
  Vector gains;
};

// Throws NumericError on a zero-norm direction column.
Matrix weight_norm_materialize(const Matrix& direction, const Vector& gains);

// Gradients of the materialized matrix pushed back to direction and gains.
// With u_j = v_j/||v_j||:  dg_j = u_j . dw_j,
// dv_j = (g_j/||v_j||) (dw_j - u_j (u_j . dw_j)).
void weight_norm_backward(const Matrix& direction, const Vector& gains,
                          const Matrix& grad_materialized,
                          Matrix& grad_direction, Vector& grad_gains);

}  // namespace afrn

#endif  // AFRN_WEIGHT_NORM_HPP_
