#include "afrn/synth_data.hpp"

#include <algorithm>
#include <cmath>

#include "afrn/rng.hpp"
#include "binio.hpp"

namespace afrn {

std::vector<Sample> generate_dataset(const SyntheticDatasetSpec& spec) {
  if (spec.identities == 0 || spec.samples_per_identity == 0 ||
      spec.height == 0 || spec.width == 0 || spec.depth == 0)
    throw std::invalid_argument("generate_dataset: all counts must be >= 1");
  if (spec.noise_sigma < 0.0)
    throw std::invalid_argument("generate_dataset: noise must be >= 0");

  Rng rng(derive_seed(spec.seed, 0xda7a));
  std::vector<Sample> samples;
  samples.reserve(spec.identities * spec.samples_per_identity);
  const std::size_t volume = spec.height * spec.width * spec.depth;
  for (std::size_t id = 0; id < spec.identities; ++id) {
    std::vector<double> prototype(volume);
    for (double& v : prototype) v = rng.normal(0.0, spec.prototype_scale);
    for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
      Sample sample;
      sample.label = static_cast<int>(id);
      sample.grid = Tensor3(spec.height, spec.width, spec.depth);
      for (std::size_t i = 0; i < volume; ++i)
        sample.grid.values[i] = prototype[i] + rng.normal(0.0, spec.noise_sigma);
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

SplitResult split_dataset(const std::vector<Sample>& samples,
                          double holdout_fraction, std::uint64_t seed) {
  if (holdout_fraction <= 0.0 || holdout_fraction >= 1.0)
    throw std::invalid_argument("split_dataset: fraction must be in (0, 1)");

  int max_label = -1;
  for (const Sample& s : samples) max_label = std::max(max_label, s.label);
  std::vector<std::vector<std::size_t>> by_identity(max_label + 1);
  for (std::size_t i = 0; i < samples.size(); ++i)
    by_identity[samples[i].label].push_back(i);

  Rng rng(derive_seed(seed, 0x5317));
  SplitResult result;
  for (int id = 0; id <= max_label; ++id) {
    std::vector<std::size_t>& indices = by_identity[id];
    if (indices.empty()) continue;
    if (indices.size() == 1) {
      result.warnings.push_back("identity " + std::to_string(id) +
                                " has a single sample; kept in train");
      result.train.push_back(samples[indices[0]]);
      continue;
    }
    rng.shuffle(indices);
    const auto count = static_cast<double>(indices.size());
    std::size_t holdout = static_cast<std::size_t>(
        std::llround(count * holdout_fraction));
    holdout = std::clamp<std::size_t>(holdout, 1, indices.size() - 1);
    for (std::size_t k = 0; k < indices.size(); ++k)
      (k < holdout ? result.validation : result.train)
          .push_back(samples[indices[k]]);
  }
  return result;
}

namespace {
constexpr char kMagic[8] = {'A', 'F', 'R', 'N', 'G', 'R', 'I', 'D'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_grids(const std::string& path, const std::vector<Sample>& samples) {
  std::size_t h = 0, w = 0, d = 0;
  if (!samples.empty()) {
    h = samples[0].grid.height;
    w = samples[0].grid.width;
    d = samples[0].grid.depth;
    for (const Sample& s : samples)
      if (s.grid.height != h || s.grid.width != w || s.grid.depth != d)
        throw ShapeError("save_grids: samples have mixed grid shapes");
  }
  binio::Writer out(path);
  out.bytes(kMagic, sizeof(kMagic));
  out.u32(kVersion);
  out.u32(static_cast<std::uint32_t>(samples.size()));
  out.u32(static_cast<std::uint32_t>(h));
  out.u32(static_cast<std::uint32_t>(w));
  out.u32(static_cast<std::uint32_t>(d));
  for (const Sample& s : samples) {
    out.u32(static_cast<std::uint32_t>(s.label));
    for (double v : s.grid.values) out.f64(v);
  }
  out.close();
}

std::vector<Sample> load_grids(const std::string& path) {
  binio::Reader in(path);
  char magic[8];
  in.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("\"" + path + "\": bad magic at byte offset 0");
  const std::uint32_t version = in.u32();
  if (version != kVersion)
    throw IoError("\"" + path + "\": unknown version " +
                  std::to_string(version) + " at byte offset 8");
  const std::uint32_t count = in.u32();
  const std::uint32_t h = in.u32();
  const std::uint32_t w = in.u32();
  const std::uint32_t d = in.u32();
  if (count > 0 && (h == 0 || w == 0 || d == 0))
    throw IoError("\"" + path + "\": zero grid dimension at byte offset 16");

  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    Sample s;
    s.label = static_cast<int>(in.u32());
    s.grid = Tensor3(h, w, d);
    for (double& v : s.grid.values) v = in.f64();
    samples.push_back(std::move(s));
  }
  if (!in.at_eof())
    throw IoError("\"" + path + "\": trailing bytes at byte offset " +
                  std::to_string(in.offset()));
  return samples;
}

}  // namespace afrn
