#ifndef AFRN_CHECKPOINT_HPP_
#define AFRN_CHECKPOINT_HPP_

#include <optional>
#include <string>

#include "afrn/model.hpp"
#include "afrn/optimizer.hpp"

namespace afrn {

// Versioned little-endian binary container: magic "AFRNCKPT", u32 version,
// the hyperparameter block, every parameter tensor with a shape header
// (trainables plus batch-norm running statistics), and optionally the
// optimizer state for exact training resumption. save -> load -> save is
// byte-identical.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamaxState* opt_state = nullptr);

struct Checkpoint {
  ModelParams params;
  std::optional<AdamaxState> opt_state;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace afrn

#endif  // AFRN_CHECKPOINT_HPP_
