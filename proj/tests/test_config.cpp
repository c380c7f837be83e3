#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "afrn/config.hpp"

using namespace afrn;

TEST_CASE("config text parses dotted keys and comments") {
  const ConfigMap map = parse_config_text(
      "# a comment\n"
      "model.height = 3   # trailing comment\n"
      "\n"
      "model.width=3\n"
      "data.noise_sigma = 0.5\n",
      "inline");
  CHECK(map.at("model.height") == "3");
  CHECK(map.at("model.width") == "3");
  CHECK(map.at("data.noise_sigma") == "0.5");
}

TEST_CASE("unknown keys are rejected with location") {
  CHECK_THROWS_WITH_AS(parse_config_text("model.hieght = 3\n", "inline"),
                       doctest::Contains("model.hieght"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("model.height\n", "inline"),
                       doctest::Contains("inline:1"), ConfigError);
}

TEST_CASE("missing required fields are named") {
  ConfigMap partial = preset_config("toy");
  partial.erase("model.depth");
  CHECK_THROWS_WITH_AS(build_config({partial}),
                       doctest::Contains("model.depth"), ConfigError);
}

TEST_CASE("toy preset builds and matches its documented shape") {
  const RunConfig c = build_config({preset_config("toy")});
  CHECK(c.height == 3);
  CHECK(c.width == 3);
  CHECK(c.depth == 16);
  CHECK(c.attention_rank == 32);
  CHECK(c.relation_rank == 32);
  CHECK(c.relation_dim == 16);
  CHECK(c.embedding_dim == 32);
  CHECK(c.selection_k == 27);
  CHECK(c.selection_enabled);
  CHECK_FALSE(c.renormalize_selection);  // raw kept scores by default
  CHECK(c.identities == 8);
  CHECK(c.samples_per_identity == 20);
  CHECK(c.batch_size == 32);
  CHECK(c.clip_norm == 0.25);
  CHECK(c.loss_weights.triplet == 1.0);
  CHECK(c.loss_weights.pairwise == 0.5);
  CHECK(c.loss_weights.identity == 1.0);
}

TEST_CASE("paper preset carries the full-scale operating point") {
  const RunConfig c = build_config({preset_config("paper")});
  CHECK(c.height == 9);
  CHECK(c.width == 9);
  CHECK(c.depth == 2048);
  CHECK(c.attention_rank == 1024);
  CHECK(c.relation_rank == 1024);
  CHECK(c.relation_dim == 1024);
  CHECK(c.embedding_dim == 1024);
  CHECK(c.selection_k == 442);
  CHECK(c.batch_size == 120);
  CHECK_THROWS_AS(preset_config("huge"), ConfigError);
}

TEST_CASE("later layers override earlier ones") {
  ConfigMap override_map = {{"model.depth", "24"},
                            {"run.seed", "9"},
                            {"model.renormalize_selection", "on"}};
  const RunConfig c = build_config({preset_config("toy"), override_map});
  CHECK(c.depth == 24);
  CHECK(c.seed == 9);
  CHECK(c.height == 3);
  CHECK(c.renormalize_selection);
  CHECK(c.hyper_params().renormalize_selection);
}

TEST_CASE("value validation catches bad types and ranges") {
  ConfigMap bad = preset_config("toy");
  bad["model.depth"] = "sixteen";
  CHECK_THROWS_WITH_AS(build_config({bad}), doctest::Contains("model.depth"),
                       ConfigError);
  bad = preset_config("toy");
  bad["train.batch_size"] = "1";
  CHECK_THROWS_AS(build_config({bad}), ConfigError);
  bad = preset_config("toy");
  bad["data.holdout_fraction"] = "1.5";
  CHECK_THROWS_AS(build_config({bad}), ConfigError);
  bad = preset_config("toy");
  bad["model.selection"] = "maybe";
  CHECK_THROWS_AS(build_config({bad}), ConfigError);
}

TEST_CASE("echo_config reproduces the effective configuration") {
  const RunConfig c = build_config({preset_config("toy")});
  const std::string echoed = echo_config(c);
  const ConfigMap reparsed = parse_config_text(echoed, "echo");
  const RunConfig c2 = build_config({reparsed});
  CHECK(echo_config(c2) == echoed);
  CHECK(c2.depth == c.depth);
  CHECK(c2.noise_sigma == c.noise_sigma);
  CHECK(c2.seed == c.seed);
  CHECK(c2.epoch_scale == c.epoch_scale);
}

TEST_CASE("hyper and dataset conversions carry the right fields") {
  const RunConfig c = build_config({preset_config("toy")});
  const HyperParams hp = c.hyper_params();
  CHECK(hp.block_count() == 9);
  CHECK(hp.pair_count() == 81);
  CHECK(hp.identity_count == 8);
  const SyntheticDatasetSpec spec = c.dataset_spec();
  CHECK(spec.identities == 8);
  CHECK(spec.height == 3);
  CHECK(spec.seed == c.seed);
}
