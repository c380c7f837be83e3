#include "afrn/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace afrn {

HyperParams RunConfig::hyper_params() const {
  HyperParams hp;
  hp.height = height;
  hp.width = width;
  hp.depth = depth;
  hp.attention_rank = attention_rank;
  hp.relation_rank = relation_rank;
  hp.relation_dim = relation_dim;
  hp.embedding_dim = embedding_dim;
  hp.selection_k = selection_k;
  hp.selection_enabled = selection_enabled;
  hp.renormalize_selection = renormalize_selection;
  hp.identity_count = identities;
  return hp;
}

SyntheticDatasetSpec RunConfig::dataset_spec() const {
  SyntheticDatasetSpec spec;
  spec.identities = identities;
  spec.samples_per_identity = samples_per_identity;
  spec.height = height;
  spec.width = width;
  spec.depth = depth;
  spec.prototype_scale = prototype_scale;
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;
  return spec;
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model.height",        "model.width",
      "model.depth",         "model.attention_rank",
      "model.relation_rank", "model.relation_dim",
      "model.embedding_dim", "model.selection_k",
      "model.selection",     "model.renormalize_selection",
      "data.identities",
      "data.samples_per_identity", "data.prototype_scale",
      "data.noise_sigma",    "data.holdout_fraction",
      "data.grid_file",      "train.batch_size",
      "train.epochs",        "train.epoch_scale",
      "optim.beta1",         "optim.beta2",
      "optim.epsilon",       "optim.clip_norm",
      "loss.margin",         "loss.weight_triplet",
      "loss.weight_pairwise", "loss.weight_identity",
      "run.seed",            "run.output_dir",
      "run.threads",
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

class Fields {
 public:
  explicit Fields(ConfigMap merged) : values_(std::move(merged)) {}

  std::string require(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("missing required field \"" + key + "\"");
    used_.insert(key);
    return it->second;
  }

  std::string get(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    used_.insert(key);
    return it == values_.end() ? fallback : it->second;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

 private:
  ConfigMap values_;
  std::set<std::string> used_;
};

std::size_t to_count(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("field \"" + key + "\": expected a non-negative integer, got \"" +
                      value + "\"");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("field \"" + key + "\": expected an integer, got \"" +
                      value + "\"");
  }
}

double to_real(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("field \"" + key + "\": expected a number, got \"" +
                      value + "\"");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("field \"" + key + "\": expected on/off, got \"" + value +
                    "\"");
}

}  // namespace

ConfigMap parse_config_text(const std::string& text,
                            const std::string& origin) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected \"key = value\"");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!known_keys().count(key))
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": unknown key \"" + key + "\"");
    if (value.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": empty value for \"" + key + "\"");
    map[key] = value;
  }
  return map;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config \"" + path + "\"");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), path);
}

ConfigMap preset_config(const std::string& name) {
  if (name == "toy") {
    // Sized so the whole acceptance suite trains in minutes.
    return {
        {"model.height", "3"},          {"model.width", "3"},
        {"model.depth", "16"},          {"model.attention_rank", "32"},
        {"model.relation_rank", "32"},  {"model.relation_dim", "16"},
        {"model.embedding_dim", "32"},  {"model.selection_k", "27"},
        {"model.selection", "on"},      {"data.identities", "8"},
        {"data.samples_per_identity", "20"},
        {"data.prototype_scale", "1.0"},
        {"data.noise_sigma", "0.5"},    {"data.holdout_fraction", "0.25"},
        {"train.batch_size", "32"},     {"train.epochs", "50"},
        {"train.epoch_scale", "0.26"},  {"run.seed", "1"},
    };
  }
  if (name == "paper") {
    // Full-scale operating point; far beyond desk-scale test budgets.
    return {
        {"model.height", "9"},           {"model.width", "9"},
        {"model.depth", "2048"},         {"model.attention_rank", "1024"},
        {"model.relation_rank", "1024"}, {"model.relation_dim", "1024"},
        {"model.embedding_dim", "1024"}, {"model.selection_k", "442"},
        {"model.selection", "on"},       {"data.identities", "32"},
        {"data.samples_per_identity", "8"},
        {"data.prototype_scale", "1.0"},
        {"data.noise_sigma", "0.25"},    {"data.holdout_fraction", "0.1"},
        {"train.batch_size", "120"},     {"train.epochs", "13"},
        {"train.epoch_scale", "1.0"},    {"run.seed", "1"},
    };
  }
  throw ConfigError("unknown preset \"" + name + "\" (expected toy or paper)");
}

RunConfig build_config(const std::vector<ConfigMap>& layers) {
  ConfigMap merged;
  for (const ConfigMap& layer : layers)
    for (const auto& [k, v] : layer) merged[k] = v;
  Fields f(std::move(merged));

  RunConfig c;
  c.height = to_count("model.height", f.require("model.height"));
  c.width = to_count("model.width", f.require("model.width"));
  c.depth = to_count("model.depth", f.require("model.depth"));
  c.attention_rank =
      to_count("model.attention_rank", f.require("model.attention_rank"));
  c.relation_rank =
      to_count("model.relation_rank", f.require("model.relation_rank"));
  c.relation_dim =
      to_count("model.relation_dim", f.require("model.relation_dim"));
  c.embedding_dim =
      to_count("model.embedding_dim", f.require("model.embedding_dim"));
  c.selection_k = to_count("model.selection_k", f.require("model.selection_k"));
  c.selection_enabled = to_bool("model.selection", f.get("model.selection", "on"));
  c.renormalize_selection = to_bool("model.renormalize_selection",
                                    f.get("model.renormalize_selection", "off"));
  c.identities = to_count("data.identities", f.require("data.identities"));
  c.samples_per_identity = to_count("data.samples_per_identity",
                                    f.require("data.samples_per_identity"));
  c.prototype_scale =
      to_real("data.prototype_scale", f.get("data.prototype_scale", "1.0"));
  c.noise_sigma = to_real("data.noise_sigma", f.get("data.noise_sigma", "0.1"));
  c.holdout_fraction =
      to_real("data.holdout_fraction", f.get("data.holdout_fraction", "0.25"));
  c.grid_file = f.get("data.grid_file", "");
  c.batch_size = to_count("train.batch_size", f.require("train.batch_size"));
  c.epochs = to_count("train.epochs", f.require("train.epochs"));
  c.epoch_scale = to_real("train.epoch_scale", f.get("train.epoch_scale", "1.0"));
  c.beta1 = to_real("optim.beta1", f.get("optim.beta1", "0.9"));
  c.beta2 = to_real("optim.beta2", f.get("optim.beta2", "0.999"));
  c.adamax_epsilon = to_real("optim.epsilon", f.get("optim.epsilon", "1e-8"));
  c.clip_norm = to_real("optim.clip_norm", f.get("optim.clip_norm", "0.25"));
  c.margin = to_real("loss.margin", f.get("loss.margin", "1.0"));
  c.loss_weights.triplet =
      to_real("loss.weight_triplet", f.get("loss.weight_triplet", "1"));
  c.loss_weights.pairwise =
      to_real("loss.weight_pairwise", f.get("loss.weight_pairwise", "0.5"));
  c.loss_weights.identity =
      to_real("loss.weight_identity", f.get("loss.weight_identity", "1"));
  c.seed = to_u64("run.seed", f.get("run.seed", "1"));
  c.output_dir = f.get("run.output_dir", "out");
  c.threads = to_count("run.threads", f.get("run.threads", "1"));

  auto positive = [](const char* key, std::size_t v) {
    if (v == 0)
      throw ConfigError(std::string("field \"") + key + "\" must be >= 1");
  };
  positive("model.height", c.height);
  positive("model.width", c.width);
  positive("model.depth", c.depth);
  positive("model.attention_rank", c.attention_rank);
  positive("model.relation_rank", c.relation_rank);
  positive("model.relation_dim", c.relation_dim);
  positive("model.embedding_dim", c.embedding_dim);
  positive("model.selection_k", c.selection_k);
  positive("data.identities", c.identities);
  positive("data.samples_per_identity", c.samples_per_identity);
  positive("train.epochs", c.epochs);
  positive("run.threads", c.threads);
  if (c.batch_size < 2)
    throw ConfigError(
        "field \"train.batch_size\" must be >= 2 (batch normalization)");
  if (c.holdout_fraction <= 0.0 || c.holdout_fraction >= 1.0)
    throw ConfigError("field \"data.holdout_fraction\" must be in (0, 1)");
  if (c.noise_sigma < 0.0)
    throw ConfigError("field \"data.noise_sigma\" must be >= 0");
  if (c.epoch_scale <= 0.0)
    throw ConfigError("field \"train.epoch_scale\" must be > 0");
  if (c.clip_norm <= 0.0)
    throw ConfigError("field \"optim.clip_norm\" must be > 0");
  if (c.margin <= 0.0)
    throw ConfigError("field \"loss.margin\" must be > 0");
  return c;
}

std::string echo_config(const RunConfig& c) {
  char buf[64];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  ConfigMap map = {
      {"model.height", std::to_string(c.height)},
      {"model.width", std::to_string(c.width)},
      {"model.depth", std::to_string(c.depth)},
      {"model.attention_rank", std::to_string(c.attention_rank)},
      {"model.relation_rank", std::to_string(c.relation_rank)},
      {"model.relation_dim", std::to_string(c.relation_dim)},
      {"model.embedding_dim", std::to_string(c.embedding_dim)},
      {"model.selection_k", std::to_string(c.selection_k)},
      {"model.selection", c.selection_enabled ? "on" : "off"},
      {"model.renormalize_selection", c.renormalize_selection ? "on" : "off"},
      {"data.identities", std::to_string(c.identities)},
      {"data.samples_per_identity", std::to_string(c.samples_per_identity)},
      {"data.prototype_scale", real(c.prototype_scale)},
      {"data.noise_sigma", real(c.noise_sigma)},
      {"data.holdout_fraction", real(c.holdout_fraction)},
      {"train.batch_size", std::to_string(c.batch_size)},
      {"train.epochs", std::to_string(c.epochs)},
      {"train.epoch_scale", real(c.epoch_scale)},
      {"optim.beta1", real(c.beta1)},
      {"optim.beta2", real(c.beta2)},
      {"optim.epsilon", real(c.adamax_epsilon)},
      {"optim.clip_norm", real(c.clip_norm)},
      {"loss.margin", real(c.margin)},
      {"loss.weight_triplet", real(c.loss_weights.triplet)},
      {"loss.weight_pairwise", real(c.loss_weights.pairwise)},
      {"loss.weight_identity", real(c.loss_weights.identity)},
      {"run.seed", std::to_string(c.seed)},
      {"run.output_dir", c.output_dir},
      {"run.threads", std::to_string(c.threads)},
  };
  if (!c.grid_file.empty()) map["data.grid_file"] = c.grid_file;
  std::string out;
  for (const auto& [k, v] : map) out += k + " = " + v + "\n";
  return out;
}

}  // namespace afrn
