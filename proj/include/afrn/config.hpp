#ifndef AFRN_CONFIG_HPP_
#define AFRN_CONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>

#include "afrn/losses.hpp"
#include "afrn/model.hpp"
#include "afrn/synth_data.hpp"

namespace afrn {

// Raised on malformed, unknown, or missing configuration entries.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  // model
  std::size_t height = 0, width = 0, depth = 0;
  std::size_t attention_rank = 0, relation_rank = 0, relation_dim = 0;
  std::size_t embedding_dim = 0, selection_k = 0;
  bool selection_enabled = true;
  bool renormalize_selection = false;
  // data
  std::size_t identities = 0, samples_per_identity = 0;
  double prototype_scale = 1.0, noise_sigma = 0.1, holdout_fraction = 0.25;
  std::string grid_file;  // when set, loads grids instead of generating
  // training
  std::size_t batch_size = 0, epochs = 0;
  double epoch_scale = 1.0;
  // optimizer
  double beta1 = 0.9, beta2 = 0.999, adamax_epsilon = 1e-8, clip_norm = 0.25;
  // loss
  double margin = 1.0;
  LossWeights loss_weights;
  // run
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::size_t threads = 1;

  HyperParams hyper_params() const;
  SyntheticDatasetSpec dataset_spec() const;
};

using ConfigMap = std::map<std::string, std::string>;

// Plain-text key-value format: one "key = value" per line, dotted keys for
// nesting, '#' comments. Unknown keys are errors.
ConfigMap parse_config_file(const std::string& path);
ConfigMap parse_config_text(const std::string& text, const std::string& origin);

// Named presets ("toy", "paper") as config maps.
ConfigMap preset_config(const std::string& name);

// Builds a validated RunConfig from merged maps (later maps win). Missing
// required fields and out-of-range values raise ConfigError naming the key.
RunConfig build_config(const std::vector<ConfigMap>& layers);

// The effective configuration, one sorted "key = value" per line.
std::string echo_config(const RunConfig& config);

}  // namespace afrn

#endif  // AFRN_CONFIG_HPP_
