#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "afrn/optimizer.hpp"
#include "afrn/rng.hpp"

using namespace afrn;

namespace {

std::vector<TensorView> views_of(std::vector<std::vector<double>>& tensors) {
  std::vector<TensorView> views;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    views.push_back({"t" + std::to_string(i), tensors[i].data(),
                     tensors[i].size()});
  return views;
}

std::vector<ConstTensorView> const_views_of(
    const std::vector<std::vector<double>>& tensors) {
  std::vector<ConstTensorView> views;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    views.push_back({"t" + std::to_string(i), tensors[i].data(),
                     tensors[i].size()});
  return views;
}

double global_norm(const std::vector<std::vector<double>>& tensors) {
  double sum = 0.0;
  for (const auto& t : tensors)
    for (double v : t) sum += v * v;
  return std::sqrt(sum);
}

}  // namespace

TEST_CASE("clip_global_norm scales down and leaves small gradients alone") {
  // two tensors with joint norm 0.5: sqrt(0.3^2 + 0.4^2)
  std::vector<std::vector<double>> grads = {{0.3}, {0.4}};
  const double pre = clip_global_norm(views_of(grads), 0.25);
  CHECK(pre == doctest::Approx(0.5));
  CHECK(std::abs(global_norm(grads) - 0.25) <= 1e-12);
  CHECK(grads[0][0] == doctest::Approx(0.15));
  CHECK(grads[1][0] == doctest::Approx(0.2));

  std::vector<std::vector<double>> small = {{0.06}, {0.08}};
  clip_global_norm(views_of(small), 0.25);
  CHECK(small[0][0] == 0.06);
  CHECK(small[1][0] == 0.08);
}

TEST_CASE("clip_global_norm matches a concatenate-then-clip oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> tensors;
    std::vector<double> flat;
    for (int t = 0; t < 4; ++t) {
      std::vector<double> v(1 + rng.uniform_below(6));
      for (double& x : v) x = rng.uniform(-1.0, 1.0);
      flat.insert(flat.end(), v.begin(), v.end());
      tensors.push_back(std::move(v));
    }
    // oracle on the concatenation
    double norm = 0.0;
    for (double v : flat) norm += v * v;
    norm = std::sqrt(norm);
    const double max_norm = 0.25;
    if (norm > max_norm)
      for (double& v : flat) v *= max_norm / norm;

    clip_global_norm(views_of(tensors), max_norm);
    std::size_t at = 0;
    for (const auto& t : tensors)
      for (double v : t) CHECK(std::abs(v - flat[at++]) <= 1e-12);
  }
}

TEST_CASE("clip_global_norm names the parameter holding a non-finite value") {
  std::vector<std::vector<double>> grads = {{0.1}, {std::nan("")}};
  CHECK_THROWS_WITH_AS(clip_global_norm(views_of(grads), 0.25),
                       doctest::Contains("t1"), NumericError);
}

TEST_CASE("post-clip norm is bounded for random gradient sets") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> tensors;
    for (int t = 0; t < 3; ++t) {
      std::vector<double> v(1 + rng.uniform_below(8));
      for (double& x : v) x = rng.uniform(-2.0, 2.0);
      tensors.push_back(std::move(v));
    }
    clip_global_norm(views_of(tensors), 0.25);
    CHECK(global_norm(tensors) <= 0.25 + 1e-12);
  }
}

TEST_CASE("adamax leaves parameters unchanged for zero gradients") {
  std::vector<std::vector<double>> params = {{1.5, -2.0}};
  std::vector<std::vector<double>> grads = {{0.0, 0.0}};
  AdamaxState state;
  auto views = views_of(params);
  state.init(views);
  adamax_step(views, const_views_of(grads), state, 1e-2);
  CHECK(params[0][0] == 1.5);
  CHECK(params[0][1] == -2.0);
  CHECK(state.t == 1);
}

TEST_CASE("first adamax step moves by roughly -lr * sign(g)") {
  std::vector<std::vector<double>> params = {{0.0}};
  std::vector<std::vector<double>> grads = {{0.7}};
  AdamaxState state;
  auto views = views_of(params);
  state.init(views);
  adamax_step(views, const_views_of(grads), state, 1e-2);
  // theta -= lr * g / (|g| + eps)
  CHECK(params[0][0] == doctest::Approx(-1e-2 * 0.7 / (0.7 + 1e-8)));
}

TEST_CASE("three adamax steps reproduce a scalar hand trace") {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
  const double g[3] = {0.4, -0.3, 0.1};

  double theta_ref = 2.0, m = 0.0, u = 0.0;
  for (int t = 1; t <= 3; ++t) {
    m = b1 * m + (1.0 - b1) * g[t - 1];
    u = std::max(b2 * u, std::abs(g[t - 1]));
    theta_ref -= lr / (1.0 - std::pow(b1, t)) * m / (u + eps);
  }

  std::vector<std::vector<double>> params = {{2.0}};
  AdamaxState state;
  auto views = views_of(params);
  state.init(views);
  for (int t = 0; t < 3; ++t) {
    std::vector<std::vector<double>> grads = {{g[t]}};
    adamax_step(views, const_views_of(grads), state, lr);
  }
  CHECK(std::abs(params[0][0] - theta_ref) <= 1e-12);
}

TEST_CASE("adamax infinity-norm accumulator dominates the latest gradient") {
  Rng rng(7);
  std::vector<std::vector<double>> params = {{0.0, 0.0, 0.0}};
  AdamaxState state;
  auto views = views_of(params);
  state.init(views);
  for (int t = 0; t < 25; ++t) {
    std::vector<std::vector<double>> grads = {
        {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}};
    adamax_step(views, const_views_of(grads), state, 1e-3);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(state.u[0][i] >= std::abs(grads[0][i]));
  }
}

TEST_CASE("learning-rate schedule tabulated values") {
  CHECK(lr_schedule(1) == 1e-3);
  CHECK(lr_schedule(4) == 4e-3);
  CHECK(lr_schedule(10) == 4e-3);
  CHECK(lr_schedule(11) == 1e-3);
  CHECK(lr_schedule(12) == 1e-3);
  CHECK(lr_schedule(13) == 2.5e-4);
  CHECK_THROWS_AS(lr_schedule(0), std::invalid_argument);

  for (std::size_t i = 1; i <= 20; ++i) {
    double expect;
    if (i <= 10)
      expect = std::min(static_cast<double>(i) * 1e-3, 4e-3);
    else if (i <= 12)
      expect = 1e-3;
    else
      expect = 2.5e-4;
    CHECK(lr_schedule(i) == expect);
  }
}

TEST_CASE("schedule_epoch compresses proportionally") {
  CHECK(schedule_epoch(1, 1.0) == 1);
  CHECK(schedule_epoch(7, 1.0) == 7);
  CHECK(schedule_epoch(1, 0.26) == 1);
  CHECK(schedule_epoch(50, 0.26) == 13);
  CHECK(schedule_epoch(25, 0.26) == 7);
  CHECK_THROWS_AS(schedule_epoch(0, 1.0), std::invalid_argument);
}

TEST_CASE("adamax drives a convex quadratic toward zero") {
  std::vector<std::vector<double>> params = {{1.0}};
  AdamaxState state;
  auto views = views_of(params);
  state.init(views);
  for (int step = 0; step < 2000 && std::abs(params[0][0]) >= 1e-3; ++step) {
    std::vector<std::vector<double>> grads = {{params[0][0]}};
    adamax_step(views, const_views_of(grads), state, 1e-2);
  }
  CHECK(std::abs(params[0][0]) < 1e-3);
}
