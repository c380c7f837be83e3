#ifndef AFRN_SYNTH_DATA_HPP_
#define AFRN_SYNTH_DATA_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "afrn/matrix.hpp"

namespace afrn {

// Stand-in for an encoder pipeline: per identity a Gaussian prototype grid,
// samples are prototype plus Gaussian noise.
struct SyntheticDatasetSpec {
  std::size_t identities = 0;
  std::size_t samples_per_identity = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;
  double prototype_scale = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct Sample {
  Tensor3 grid;
  int label = 0;
};

std::vector<Sample> generate_dataset(const SyntheticDatasetSpec& spec);

struct SplitResult {
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<std::string> warnings;
};

// Per-identity stratified split; identities with a single sample go to train
// with a warning.
SplitResult split_dataset(const std::vector<Sample>& samples,
                          double holdout_fraction, std::uint64_t seed);

// Grid container: magic "AFRNGRID", u32 version=1, u32 count, u32 H, u32 W,
// u32 D, then per sample a u32 label followed by H*W*D little-endian f64.
void save_grids(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_grids(const std::string& path);

}  // namespace afrn

#endif  // AFRN_SYNTH_DATA_HPP_
