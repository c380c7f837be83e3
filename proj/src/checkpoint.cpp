#include "afrn/checkpoint.hpp"

#include <filesystem>
#include <map>

#include "binio.hpp"

namespace afrn {

namespace {

constexpr char kMagic[8] = {'A', 'F', 'R', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  const double* data;
  std::size_t rows, cols;
};

// Trainables first (fixed optimizer order), then batch-norm state.
std::vector<NamedTensor> all_tensors(const ModelParams& params) {
  std::vector<NamedTensor> tensors;
  auto add_mat = [&](const std::string& name, const Matrix& m) {
    tensors.push_back({name, m.values.data(), m.rows, m.cols});
  };
  auto add_vec = [&](const std::string& name, const Vector& v) {
    tensors.push_back({name, v.data(), 1, v.size()});
  };
  add_mat("attention.u.direction", params.attention.u_map.direction);
  add_vec("attention.u.gains", params.attention.u_map.gains);
  add_mat("attention.v.direction", params.attention.v_map.direction);
  add_vec("attention.v.gains", params.attention.v_map.gains);
  add_vec("attention.pool", params.attention.pool);
  add_mat("relation.u.direction", params.relation.u_map.direction);
  add_vec("relation.u.gains", params.relation.u_map.gains);
  add_mat("relation.v.direction", params.relation.v_map.direction);
  add_vec("relation.v.gains", params.relation.v_map.gains);
  add_mat("relation.pool.direction", params.relation.pool_map.direction);
  add_vec("relation.pool.gains", params.relation.pool_map.gains);
  add_mat("mlp.fc1.weight", params.mlp.fc1.weight);
  add_vec("mlp.fc1.bias", params.mlp.fc1.bias);
  add_vec("mlp.bn1.gamma", params.mlp.bn1.gamma);
  add_vec("mlp.bn1.beta", params.mlp.bn1.beta);
  add_mat("mlp.fc2.weight", params.mlp.fc2.weight);
  add_vec("mlp.fc2.bias", params.mlp.fc2.bias);
  add_vec("mlp.bn2.gamma", params.mlp.bn2.gamma);
  add_vec("mlp.bn2.beta", params.mlp.bn2.beta);
  add_mat("classifier.weight", params.classifier.weight);
  add_vec("classifier.bias", params.classifier.bias);
  add_vec("mlp.bn1.running_mean", params.mlp.bn1.running_mean);
  add_vec("mlp.bn1.running_var", params.mlp.bn1.running_var);
  add_vec("mlp.bn2.running_mean", params.mlp.bn2.running_mean);
  add_vec("mlp.bn2.running_var", params.mlp.bn2.running_var);
  return tensors;
}

void write_hyper(binio::Writer& w, const HyperParams& hp) {
  w.u32(static_cast<std::uint32_t>(hp.height));
  w.u32(static_cast<std::uint32_t>(hp.width));
  w.u32(static_cast<std::uint32_t>(hp.depth));
  w.u32(static_cast<std::uint32_t>(hp.attention_rank));
  w.u32(static_cast<std::uint32_t>(hp.relation_rank));
  w.u32(static_cast<std::uint32_t>(hp.relation_dim));
  w.u32(static_cast<std::uint32_t>(hp.embedding_dim));
  w.u32(static_cast<std::uint32_t>(hp.selection_k));
  w.u8(hp.selection_enabled ? 1 : 0);
  w.u8(hp.renormalize_selection ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(hp.identity_count));
}

HyperParams read_hyper(binio::Reader& r) {
  HyperParams hp;
  hp.height = r.u32();
  hp.width = r.u32();
  hp.depth = r.u32();
  hp.attention_rank = r.u32();
  hp.relation_rank = r.u32();
  hp.relation_dim = r.u32();
  hp.embedding_dim = r.u32();
  hp.selection_k = r.u32();
  hp.selection_enabled = r.u8() != 0;
  hp.renormalize_selection = r.u8() != 0;
  hp.identity_count = r.u32();
  return hp;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamaxState* opt_state) {
  // Write to a sibling temp file, then rename into place so readers never
  // observe a partial checkpoint.
  const std::string tmp = path + ".tmp";
  {
    binio::Writer w(tmp);
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(kVersion);
    write_hyper(w, params.hp);
    w.f64(params.mlp.bn1.epsilon);
    w.f64(params.mlp.bn1.momentum);
    w.f64(params.mlp.bn2.epsilon);
    w.f64(params.mlp.bn2.momentum);

    const std::vector<NamedTensor> tensors = all_tensors(params);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
      w.str(t.name);
      w.u32(static_cast<std::uint32_t>(t.rows));
      w.u32(static_cast<std::uint32_t>(t.cols));
      for (std::size_t i = 0; i < t.rows * t.cols; ++i) w.f64(t.data[i]);
    }

    w.u8(opt_state ? 1 : 0);
    if (opt_state) {
      w.u64(opt_state->t);
      w.f64(opt_state->beta1);
      w.f64(opt_state->beta2);
      w.f64(opt_state->epsilon);
      w.u32(static_cast<std::uint32_t>(opt_state->m.size()));
      for (std::size_t p = 0; p < opt_state->m.size(); ++p) {
        w.u32(static_cast<std::uint32_t>(opt_state->m[p].size()));
        for (double v : opt_state->m[p]) w.f64(v);
        for (double v : opt_state->u[p]) w.f64(v);
      }
    }
    w.close();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot rename \"" + tmp + "\" to \"" + path +
                  "\": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  binio::Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("\"" + path + "\": bad magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError("\"" + path + "\": unknown version " +
                  std::to_string(version) + " at byte offset 8");

  Checkpoint ckpt;
  HyperParams hp = read_hyper(r);
  // Shapes come from the hyperparameter block; init then overwrite values.
  ckpt.params = init_model(hp, 0);
  ckpt.params.mlp.bn1.epsilon = r.f64();
  ckpt.params.mlp.bn1.momentum = r.f64();
  ckpt.params.mlp.bn2.epsilon = r.f64();
  ckpt.params.mlp.bn2.momentum = r.f64();

  std::map<std::string, std::pair<double*, std::size_t>> slots;
  for (const TensorView& v : trainable_views(ckpt.params))
    slots[v.name] = {v.data, v.size};
  slots["mlp.bn1.running_mean"] = {ckpt.params.mlp.bn1.running_mean.data(),
                                   ckpt.params.mlp.bn1.running_mean.size()};
  slots["mlp.bn1.running_var"] = {ckpt.params.mlp.bn1.running_var.data(),
                                  ckpt.params.mlp.bn1.running_var.size()};
  slots["mlp.bn2.running_mean"] = {ckpt.params.mlp.bn2.running_mean.data(),
                                   ckpt.params.mlp.bn2.running_mean.size()};
  slots["mlp.bn2.running_var"] = {ckpt.params.mlp.bn2.running_var.data(),
                                  ckpt.params.mlp.bn2.running_var.size()};

  const std::uint32_t tensor_count = r.u32();
  std::size_t filled = 0;
  for (std::uint32_t k = 0; k < tensor_count; ++k) {
    const std::size_t at = r.offset();
    const std::string name = r.str();
    const std::uint64_t rows = r.u32();
    const std::uint64_t cols = r.u32();
    auto it = slots.find(name);
    if (it == slots.end())
      throw IoError("\"" + path + "\": unknown tensor \"" + name +
                    "\" at byte offset " + std::to_string(at));
    if (rows * cols != it->second.second)
      throw IoError("\"" + path + "\": tensor \"" + name + "\" has " +
                    std::to_string(rows * cols) + " values, expected " +
                    std::to_string(it->second.second) + " (byte offset " +
                    std::to_string(at) + ")");
    for (std::size_t i = 0; i < rows * cols; ++i) it->second.first[i] = r.f64();
    ++filled;
  }
  if (filled != slots.size())
    throw IoError("\"" + path + "\": missing tensors (" +
                  std::to_string(filled) + " of " +
                  std::to_string(slots.size()) + " present)");

  if (r.u8() != 0) {
    AdamaxState state;
    state.t = r.u64();
    state.beta1 = r.f64();
    state.beta2 = r.f64();
    state.epsilon = r.f64();
    const std::uint32_t n = r.u32();
    state.m.resize(n);
    state.u.resize(n);
    for (std::uint32_t p = 0; p < n; ++p) {
      const std::uint32_t size = r.u32();
      state.m[p].resize(size);
      state.u[p].resize(size);
      for (std::uint32_t i = 0; i < size; ++i) state.m[p][i] = r.f64();
      for (std::uint32_t i = 0; i < size; ++i) state.u[p][i] = r.f64();
    }
    ckpt.opt_state = std::move(state);
  }
  return ckpt;
}

}  // namespace afrn
