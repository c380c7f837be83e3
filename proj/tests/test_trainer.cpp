#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "afrn/checkpoint.hpp"
#include "afrn/trainer.hpp"

using namespace afrn;

namespace {

// A short run: big enough to move the parameters, small enough for CI.
RunConfig quick_config(std::uint64_t seed) {
  ConfigMap overrides = {
      {"train.epochs", "6"},
      {"data.samples_per_identity", "8"},
      {"run.seed", std::to_string(seed)},
  };
  return build_config({preset_config("toy"), overrides});
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("two trainings with one seed produce byte-identical checkpoints") {
  const RunConfig config = quick_config(5);
  const std::vector<Sample> samples = load_or_generate(config);
  const SplitResult split =
      split_dataset(samples, config.holdout_fraction, config.seed);

  const std::string a = temp_path("afrn_train_a.ckpt");
  const std::string b = temp_path("afrn_train_b.ckpt");

  TrainResult first = train_model(config, split.train);
  save_checkpoint(a, first.params, &first.opt_state);
  TrainResult second = train_model(config, split.train);
  save_checkpoint(b, second.params, &second.opt_state);

  CHECK(slurp(a) == slurp(b));
  CHECK(first.steps == second.steps);
  CHECK(first.steps > 0);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("training reduces the joint loss on the toy problem") {
  const RunConfig config = quick_config(7);
  const std::vector<Sample> samples = load_or_generate(config);
  const SplitResult split =
      split_dataset(samples, config.holdout_fraction, config.seed);
  const TrainResult result = train_model(config, split.train);
  REQUIRE(result.history.size() == config.epochs);
  CHECK(result.history.back().mean_total <
        result.history.front().mean_total);
}

TEST_CASE("epoch callback sees every epoch and the lr schedule") {
  const RunConfig config = quick_config(9);
  const std::vector<Sample> samples = load_or_generate(config);
  const SplitResult split =
      split_dataset(samples, config.holdout_fraction, config.seed);
  std::vector<double> lrs;
  train_model(config, split.train,
              [&](const ModelParams&, const AdamaxState&, const EpochStats& e) {
                lrs.push_back(e.lr);
              });
  REQUIRE(lrs.size() == config.epochs);
  for (std::size_t e = 0; e < lrs.size(); ++e)
    CHECK(lrs[e] == lr_schedule(schedule_epoch(e + 1, config.epoch_scale)));
}

TEST_CASE("relation cost counters accumulate over training") {
  const RunConfig config = quick_config(11);
  const std::vector<Sample> samples = load_or_generate(config);
  const SplitResult split =
      split_dataset(samples, config.holdout_fraction, config.seed);
  const TrainResult result = train_model(config, split.train);
  // selected path: every sample in every processed batch contributes K*L
  std::uint64_t expected = 0;
  std::size_t consumed = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::size_t n = split.train.size();
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t size = std::min(config.batch_size, n - start);
      if (size < 2) break;
      expected += size * config.selection_k * config.relation_rank;
      ++consumed;
    }
  }
  CHECK(result.steps == consumed);
  CHECK(result.relation_macs == expected);
}

TEST_CASE("embeddings are identical for any thread count") {
  const RunConfig config = quick_config(13);
  const std::vector<Sample> samples = load_or_generate(config);
  ModelParams params = init_model(config.hyper_params(), 3);
  const Matrix one = compute_embeddings(params, samples, 1);
  const Matrix two = compute_embeddings(params, samples, 2);
  const Matrix four = compute_embeddings(params, samples, 4);
  CHECK(one.values == two.values);
  CHECK(one.values == four.values);
}

TEST_CASE("ksweep clamps, dedupes, and pins the exhaustive reference") {
  RunConfig config = quick_config(15);
  config.epochs = 2;
  std::vector<std::string> warnings;
  const std::vector<KSweepRow> rows =
      run_ksweep(config, {9, 9, 200}, &warnings);
  REQUIRE(rows.size() == 3);  // 9, clamped 81, reference
  CHECK(rows[0].k == 9);
  CHECK(rows[0].selection);
  CHECK(rows[1].k == 81);
  CHECK(rows[1].selection);
  CHECK_FALSE(rows[2].selection);
  CHECK(rows[2].k == 81);
  REQUIRE(warnings.size() == 2);
  CHECK(warnings[0].find("dropped") != std::string::npos);
  CHECK(warnings[1].find("clamped") != std::string::npos);
  // exhaustive selection row trains through the identical full path
  CHECK(rows[1].accuracy == rows[2].accuracy);
}

TEST_CASE("load_or_generate rejects grids that do not match the model") {
  const RunConfig config = quick_config(17);
  const std::vector<Sample> samples = load_or_generate(config);
  const std::string path = temp_path("afrn_mismatch.grids");
  save_grids(path, samples);
  RunConfig narrow = config;
  narrow.grid_file = path;
  narrow.depth = 8;
  CHECK_THROWS_AS(load_or_generate(narrow), ShapeError);
  std::filesystem::remove(path);
}
