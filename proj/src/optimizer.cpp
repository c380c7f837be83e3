#include "afrn/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace afrn {

void AdamaxState::init(const std::vector<TensorView>& params) {
  m.clear();
  u.clear();
  for (const TensorView& p : params) {
    m.emplace_back(p.size, 0.0);
    u.emplace_back(p.size, 0.0);
  }
  t = 0;
}

double clip_global_norm(const std::vector<TensorView>& gradients,
                        double max_norm) {
  if (max_norm <= 0.0)
    throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  double sum_sq = 0.0;
  for (const TensorView& g : gradients) {
    for (std::size_t i = 0; i < g.size; ++i) {
      const double v = g.data[i];
      if (!std::isfinite(v))
        throw NumericError("clip_global_norm: non-finite gradient in \"" +
                           g.name + "\"");
      sum_sq += v * v;
    }
  }
  const double norm = std::sqrt(sum_sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const TensorView& g : gradients)
      for (std::size_t i = 0; i < g.size; ++i) g.data[i] *= scale;
  }
  return norm;
}

void adamax_step(const std::vector<TensorView>& params,
                 const std::vector<ConstTensorView>& gradients,
                 AdamaxState& state, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("adamax_step: lr must be > 0");
  if (!state.initialized())
    throw std::invalid_argument("adamax_step: state not initialized");
  if (params.size() != gradients.size() || params.size() != state.m.size())
    throw ShapeError("adamax_step: tensor count mismatch");

  ++state.t;
  const double bias_fix =
      1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].size != gradients[p].size ||
        params[p].size != state.m[p].size())
      throw ShapeError("adamax_step: size mismatch for \"" + params[p].name +
                       "\"");
    double* theta = params[p].data;
    const double* g = gradients[p].data;
    std::vector<double>& m = state.m[p];
    std::vector<double>& u = state.u[p];
    for (std::size_t i = 0; i < params[p].size; ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      u[i] = std::max(state.beta2 * u[i], std::abs(g[i]));
      theta[i] -= (lr / bias_fix) * m[i] / (u[i] + state.epsilon);
    }
  }
}

double lr_schedule(std::size_t epoch) {
  if (epoch == 0)
    throw std::invalid_argument("lr_schedule: epoch index starts at 1");
  if (epoch <= 10)
    return std::min(static_cast<double>(epoch) * 1e-3, 4e-3);
  if (epoch <= 12) return 1e-3;
  return 2.5e-4;
}

std::size_t schedule_epoch(std::size_t epoch, double epoch_scale) {
  if (epoch == 0)
    throw std::invalid_argument("schedule_epoch: epoch index starts at 1");
  if (epoch_scale <= 0.0)
    throw std::invalid_argument("schedule_epoch: scale must be > 0");
  const double mapped = std::ceil(static_cast<double>(epoch) * epoch_scale);
  return mapped < 1.0 ? 1 : static_cast<std::size_t>(mapped);
}

}  // namespace afrn
