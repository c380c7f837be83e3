#ifndef AFRN_GRADCHECK_SUITE_HPP_
#define AFRN_GRADCHECK_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "afrn/gradcheck.hpp"
#include "afrn/model.hpp"

namespace afrn {

struct GradcheckOptions {
  double tolerance = 1e-5;
  std::uint64_t seed = 1;
  // Test hook: negate the analytic gradient of the named check so the suite
  // must detect and report it.
  std::string sign_flip;
};

// Central-difference checks over every kernel, every layer, and the full
// model in both selection modes (pair selection frozen for the enabled
// mode). Inputs are resampled until they sit clear of ReLU/hinge kinks.
// Requires block_count() <= 8.
std::vector<GradCheckReport> run_gradcheck_suite(const HyperParams& hp,
                                                 std::size_t batch,
                                                 const GradcheckOptions& opts);

// The shapes the suite uses when the caller does not supply a config.
HyperParams default_gradcheck_hyper();
// Single-block variant covering the degenerate N=1 path.
HyperParams degenerate_gradcheck_hyper();

}  // namespace afrn

#endif  // AFRN_GRADCHECK_SUITE_HPP_
