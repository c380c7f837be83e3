#ifndef AFRN_OPTIMIZER_HPP_
#define AFRN_OPTIMIZER_HPP_

#include <cstdint>
#include <vector>

#include "afrn/model.hpp"

namespace afrn {

// Adamax: first moment m plus an infinity-norm accumulator u per parameter.
struct AdamaxState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> u;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void init(const std::vector<TensorView>& params);
  bool initialized() const { return !m.empty(); }
};

// Scales every gradient by max_norm/norm when the L2 norm of the global
// concatenation exceeds max_norm. Returns the pre-clip norm. Throws
// NumericError naming the offending tensor on non-finite gradients.
double clip_global_norm(const std::vector<TensorView>& gradients,
                        double max_norm);

// t += 1; m = b1*m + (1-b1)*g; u = max(b2*u, |g|);
// theta -= lr/(1 - b1^t) * m / (u + eps).
void adamax_step(const std::vector<TensorView>& params,
                 const std::vector<ConstTensorView>& gradients,
                 AdamaxState& state, double lr);

// Epochs 1-10: min(i*1e-3, 4e-3); 11-12: 1e-3; >= 13: 2.5e-4.
double lr_schedule(std::size_t epoch);

// Maps a run's epoch index onto the schedule, compressing proportionally:
// ceil(epoch * epoch_scale), at least 1.
std::size_t schedule_epoch(std::size_t epoch, double epoch_scale);

}  // namespace afrn

#endif  // AFRN_OPTIMIZER_HPP_
