#include "afrn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "afrn/kernels.hpp"
#include "afrn/rng.hpp"

namespace afrn {

namespace {

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                       double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values) v = rng.normal(0.0, stddev);
  return m;
}

WeightNormParam init_weight_norm(Rng& rng, std::size_t rows, std::size_t cols) {
  WeightNormParam p;
  p.direction = gaussian_matrix(rng, rows, cols, std::sqrt(2.0 / rows));
  p.gains.assign(cols, 1.0);
  return p;
}

BatchNormLayer init_batch_norm(std::size_t width) {
  BatchNormLayer bn;
  bn.gamma.assign(width, 1.0);
  bn.beta.assign(width, 0.0);
  bn.running_mean.assign(width, 0.0);
  bn.running_var.assign(width, 1.0);
  return bn;
}

AffineLayer init_affine(Rng& rng, std::size_t in, std::size_t out) {
  AffineLayer layer;
  layer.weight = gaussian_matrix(rng, in, out, std::sqrt(2.0 / in));
  layer.bias.assign(out, 0.0);
  return layer;
}

// Rethrows stage failures with the stage name attached.
template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("forward[") + name + "]: " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string("forward[") + name + "]: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("forward[") + name +
                                "]: " + e.what());
  }
}

Matrix affine_forward(const Matrix& x, const AffineLayer& layer) {
  if (x.cols != layer.weight.rows)
    throw ShapeError("affine: input width " + std::to_string(x.cols) +
                     " != weight rows " + std::to_string(layer.weight.rows));
  Matrix out = matmul(x, layer.weight);
  for (std::size_t b = 0; b < out.rows; ++b)
    for (std::size_t j = 0; j < out.cols; ++j) out.at(b, j) += layer.bias[j];
  return out;
}

void affine_backward(const Matrix& x, const AffineLayer& layer,
                     const Matrix& grad_out, Matrix& dweight, Vector& dbias,
                     Matrix& dx) {
  dweight = matmul(transpose(x), grad_out);
  dbias.assign(layer.bias.size(), 0.0);
  for (std::size_t b = 0; b < grad_out.rows; ++b)
    for (std::size_t j = 0; j < grad_out.cols; ++j)
      dbias[j] += grad_out.at(b, j);
  dx = matmul(grad_out, transpose(layer.weight));
}

// Scales column l of m by pool[l].
Matrix scale_columns(const Matrix& m, const Vector& pool) {
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t l = 0; l < m.cols; ++l)
      out.at(i, l) = m.at(i, l) * pool[l];
  return out;
}

}  // namespace

ModelParams init_model(const HyperParams& hp, std::uint64_t seed) {
  ModelParams params;
  params.hp = hp;
  Rng rng(derive_seed(seed, 0x1717));
  params.attention.u_map = init_weight_norm(rng, hp.depth, hp.attention_rank);
  params.attention.v_map = init_weight_norm(rng, hp.depth, hp.attention_rank);
  params.attention.pool.resize(hp.attention_rank);
  for (double& v : params.attention.pool)
    v = rng.normal(0.0, std::sqrt(2.0 / hp.attention_rank));
  params.relation.u_map = init_weight_norm(rng, hp.depth, hp.relation_rank);
  params.relation.v_map = init_weight_norm(rng, hp.depth, hp.relation_rank);
  params.relation.pool_map =
      init_weight_norm(rng, hp.relation_rank, hp.relation_dim);
  params.mlp.fc1 = init_affine(rng, hp.relation_dim, hp.embedding_dim);
  params.mlp.fc2 = init_affine(rng, hp.embedding_dim, hp.embedding_dim);
  params.mlp.bn1 = init_batch_norm(hp.embedding_dim);
  params.mlp.bn2 = init_batch_norm(hp.embedding_dim);
  params.classifier = init_affine(rng, hp.embedding_dim, hp.identity_count);
  return params;
}

Matrix rearrange(const Tensor3& grid) {
  if (grid.height == 0 || grid.width == 0 || grid.depth == 0)
    throw ShapeError("rearrange: empty grid");
  const std::size_t n = grid.height * grid.width;
  Matrix f(grid.depth, n);
  for (std::size_t h = 0; h < grid.height; ++h)
    for (std::size_t w = 0; w < grid.width; ++w) {
      const std::size_t col = h * grid.width + w;
      for (std::size_t d = 0; d < grid.depth; ++d)
        f.at(d, col) = grid.at(h, w, d);
    }
  return f;
}

Tensor3 rearrange_inverse(const Matrix& features, std::size_t height,
                          std::size_t width) {
  if (features.cols != height * width)
    throw ShapeError("rearrange_inverse: " + std::to_string(features.cols) +
                     " columns != " + std::to_string(height * width) +
                     " blocks");
  Tensor3 grid(height, width, features.rows);
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w) {
      const std::size_t col = h * width + w;
      for (std::size_t d = 0; d < features.rows; ++d)
        grid.at(h, w, d) = features.at(d, col);
    }
  return grid;
}

Matrix attention_logits(const Matrix& features, const Matrix& u_mat,
                        const Matrix& v_mat, const Vector& pool) {
  if (features.rows != u_mat.rows || features.rows != v_mat.rows)
    throw ShapeError("attention_logits: feature depth " +
                     std::to_string(features.rows) + " != map depth " +
                     std::to_string(u_mat.rows) + "/" +
                     std::to_string(v_mat.rows));
  if (pool.size() != u_mat.cols || u_mat.cols != v_mat.cols)
    throw ShapeError("attention_logits: rank mismatch");
  const Matrix att_u = relu(matmul(transpose(features), u_mat));   // N x L'
  const Matrix att_v = relu(matmul(transpose(v_mat), features));   // L' x N
  const Matrix gated = scale_columns(att_u, pool);
  return matmul(gated, att_v);
}

BilinearAttentionMap attention_map(const Matrix& logits) {
  if (logits.rows != logits.cols)
    throw ShapeError("attention_map: logits must be square, got " +
                     shape_str(logits));
  BilinearAttentionMap map;
  map.logits = logits;
  map.scores = softmax_flat(logits);
  return map;
}

PairSelection select_pairs_from(const Matrix& score_like, std::size_t k) {
  if (score_like.rows != score_like.cols)
    throw ShapeError("select_pairs: map must be square, got " +
                     shape_str(score_like));
  if (k == 0)
    throw std::invalid_argument("select_pairs: k must be >= 1");
  const std::size_t n = score_like.rows;
  const std::size_t total = n * n;

  PairSelection sel;
  sel.requested_k = k;
  if (k > total) {
    sel.clamped = true;
    k = total;
  }

  std::vector<std::uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) {
              const double sa = score_like.values[a];
              const double sb = score_like.values[b];
              if (sa != sb) return sa > sb;
              return a < b;  // flat index order == lexicographic (i, j)
            });

  sel.pairs.reserve(k);
  sel.scores.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    const std::uint32_t flat = order[r];
    sel.pairs.emplace_back(flat / n, flat % n);
    sel.scores.push_back(score_like.values[flat]);
  }
  return sel;
}

PairSelection select_pairs(const BilinearAttentionMap& map, std::size_t k) {
  return select_pairs_from(map.scores, k);
}

namespace {

void check_relation_shapes(const char* op, const Matrix& features,
                           const Matrix& scores, const Matrix& u_mat,
                           const Matrix& v_mat) {
  const std::size_t n = features.cols;
  if (scores.rows != n || scores.cols != n)
    throw ShapeError(std::string(op) + ": scores " + shape_str(scores) +
                     " do not match " + std::to_string(n) + " blocks");
  if (u_mat.rows != features.rows || v_mat.rows != features.rows)
    throw ShapeError(std::string(op) + ": map depth mismatch");
  if (u_mat.cols != v_mat.cols)
    throw ShapeError(std::string(op) + ": rank mismatch");
}

}  // namespace

Vector joint_relation_full(const Matrix& features, const Matrix& scores,
                           const Matrix& u_mat, const Matrix& v_mat,
                           std::uint64_t* mac_counter) {
  check_relation_shapes("joint_relation_full", features, scores, u_mat, v_mat);
  const std::size_t n = features.cols;
  const std::size_t rank = u_mat.cols;
  const Matrix x = relu(matmul(transpose(features), u_mat));  // N x L
  const Matrix y = relu(matmul(transpose(features), v_mat));  // N x L
  const Matrix sy = matmul(scores, y);                        // N x L
  if (mac_counter) *mac_counter += static_cast<std::uint64_t>(n) * n * rank;
  Vector r(rank, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < rank; ++l) r[l] += x.at(i, l) * sy.at(i, l);
  return r;
}

Vector joint_relation_naive(const Matrix& features, const Matrix& scores,
                            const Matrix& u_mat, const Matrix& v_mat,
                            std::uint64_t* mac_counter) {
  check_relation_shapes("joint_relation_naive", features, scores, u_mat, v_mat);
  const std::size_t n = features.cols;
  const std::size_t rank = u_mat.cols;
  const Matrix x = relu(matmul(transpose(features), u_mat));
  const Matrix y = relu(matmul(transpose(features), v_mat));
  Vector r(rank, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double w = scores.at(i, j);
      for (std::size_t l = 0; l < rank; ++l) {
        r[l] += w * x.at(i, l) * y.at(j, l);
        if (mac_counter) ++*mac_counter;
      }
    }
  return r;
}

Vector joint_relation_selected(const Matrix& features, const Matrix& scores,
                               const PairSelection& sel, const Matrix& u_mat,
                               const Matrix& v_mat,
                               std::uint64_t* mac_counter) {
  check_relation_shapes("joint_relation_selected", features, scores, u_mat,
                        v_mat);
  const std::size_t n = features.cols;
  const std::size_t rank = u_mat.cols;
  const Matrix x = relu(matmul(transpose(features), u_mat));
  const Matrix y = relu(matmul(transpose(features), v_mat));

  // Accumulate kept pairs in (i, j) order so exhaustive selection reproduces
  // the double sum bit for bit.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ordered = sel.pairs;
  std::sort(ordered.begin(), ordered.end());

  Vector r(rank, 0.0);
  for (const auto& [i, j] : ordered) {
    if (i >= n || j >= n)
      throw std::out_of_range("joint_relation_selected: pair (" +
                              std::to_string(i) + "," + std::to_string(j) +
                              ") outside " + std::to_string(n) + " blocks");
    const double w = scores.at(i, j);
    for (std::size_t l = 0; l < rank; ++l) {
      r[l] += w * x.at(i, l) * y.at(j, l);
      if (mac_counter) ++*mac_counter;
    }
  }
  return r;
}

Vector pool_relation(const Vector& r_prime, const Matrix& pool_mat) {
  if (pool_mat.rows != r_prime.size())
    throw ShapeError("pool_relation: pooling matrix rows " +
                     std::to_string(pool_mat.rows) + " != relation length " +
                     std::to_string(r_prime.size()));
  Vector out(pool_mat.cols, 0.0);
  for (std::size_t l = 0; l < pool_mat.rows; ++l)
    for (std::size_t c = 0; c < pool_mat.cols; ++c)
      out[c] += pool_mat.at(l, c) * r_prime[l];
  return out;
}

Matrix batch_norm(const Matrix& x, BatchNormLayer& layer, bool training,
                  BatchNormCache* cache) {
  if (x.cols != layer.gamma.size())
    throw ShapeError("batch_norm: width " + std::to_string(x.cols) +
                     " != layer width " + std::to_string(layer.gamma.size()));
  if (training && x.rows < 2)
    throw std::invalid_argument(
        "batch_norm: training mode requires batch size >= 2, got " +
        std::to_string(x.rows));

  const std::size_t batch = x.rows;
  const std::size_t width = x.cols;
  Vector mean(width, 0.0), var(width, 0.0);
  if (training) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < width; ++j) mean[j] += x.at(b, j);
    for (double& m : mean) m /= static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < width; ++j) {
        const double d = x.at(b, j) - mean[j];
        var[j] += d * d;
      }
    for (double& v : var) v /= static_cast<double>(batch);
    for (std::size_t j = 0; j < width; ++j) {
      layer.running_mean[j] =
          (1.0 - layer.momentum) * layer.running_mean[j] + layer.momentum * mean[j];
      layer.running_var[j] =
          (1.0 - layer.momentum) * layer.running_var[j] + layer.momentum * var[j];
    }
  } else {
    mean = layer.running_mean;
    var = layer.running_var;
  }

  Matrix x_hat(batch, width);
  Matrix out(batch, width);
  for (std::size_t j = 0; j < width; ++j) {
    const double inv_std = 1.0 / std::sqrt(var[j] + layer.epsilon);
    for (std::size_t b = 0; b < batch; ++b) {
      const double xn = (x.at(b, j) - mean[j]) * inv_std;
      x_hat.at(b, j) = xn;
      out.at(b, j) = layer.gamma[j] * xn + layer.beta[j];
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->x_hat = std::move(x_hat);
    cache->training = training;
  }
  return out;
}

BatchNormGrads batch_norm_backward(const BatchNormLayer& layer,
                                   const BatchNormCache& cache,
                                   const Matrix& grad_out) {
  require_same_shape("batch_norm_backward", cache.x_hat, grad_out);
  const std::size_t batch = grad_out.rows;
  const std::size_t width = grad_out.cols;

  BatchNormGrads grads;
  grads.dgamma.assign(width, 0.0);
  grads.dbeta.assign(width, 0.0);
  grads.dx = Matrix(batch, width);

  for (std::size_t j = 0; j < width; ++j) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double dy = grad_out.at(b, j);
      sum_dy += dy;
      sum_dy_xhat += dy * cache.x_hat.at(b, j);
    }
    grads.dbeta[j] = sum_dy;
    grads.dgamma[j] = sum_dy_xhat;

    const double inv_std = 1.0 / std::sqrt(cache.var[j] + layer.epsilon);
    if (cache.training) {
      const double nb = static_cast<double>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const double dxhat = grad_out.at(b, j) * layer.gamma[j];
        grads.dx.at(b, j) =
            inv_std * (dxhat - (layer.gamma[j] / nb) * sum_dy -
                       (layer.gamma[j] / nb) * cache.x_hat.at(b, j) * sum_dy_xhat);
      }
    } else {
      for (std::size_t b = 0; b < batch; ++b)
        grads.dx.at(b, j) = grad_out.at(b, j) * layer.gamma[j] * inv_std;
    }
  }
  return grads;
}

Matrix mlp_head(const Matrix& input, MlpHead& head, bool training,
                MlpCache* cache) {
  MlpCache local;
  MlpCache& c = cache ? *cache : local;
  c.input = input;
  c.z1 = affine_forward(input, head.fc1);
  c.bn1_out = batch_norm(c.z1, head.bn1, training, &c.bn1);
  c.act1 = relu(c.bn1_out);
  c.z2 = affine_forward(c.act1, head.fc2);
  c.bn2_out = batch_norm(c.z2, head.bn2, training, &c.bn2);
  return relu(c.bn2_out);
}

MlpGrads mlp_head_backward(const MlpHead& head, const MlpCache& cache,
                           const Matrix& grad_out) {
  MlpGrads grads;
  const Matrix d_bn2_out = relu_backward(cache.bn2_out, grad_out);
  const BatchNormGrads bn2 = batch_norm_backward(head.bn2, cache.bn2, d_bn2_out);
  grads.dgamma2 = bn2.dgamma;
  grads.dbeta2 = bn2.dbeta;
  Matrix d_act1;
  affine_backward(cache.act1, head.fc2, bn2.dx, grads.dw2, grads.db2, d_act1);
  const Matrix d_bn1_out = relu_backward(cache.bn1_out, d_act1);
  const BatchNormGrads bn1 = batch_norm_backward(head.bn1, cache.bn1, d_bn1_out);
  grads.dgamma1 = bn1.dgamma;
  grads.dbeta1 = bn1.dbeta;
  affine_backward(cache.input, head.fc1, bn1.dx, grads.dw1, grads.db1,
                  grads.dinput);
  return grads;
}

Matrix model_forward(ModelParams& params, const std::vector<Tensor3>& grids,
                     const ForwardOptions& opts, ForwardCache* cache) {
  const HyperParams& hp = params.hp;
  if (grids.empty()) throw std::invalid_argument("forward: empty batch");
  for (const Tensor3& g : grids)
    if (g.height != hp.height || g.width != hp.width || g.depth != hp.depth)
      throw ShapeError("forward: grid " + std::to_string(g.height) + "x" +
                       std::to_string(g.width) + "x" + std::to_string(g.depth) +
                       " does not match model " + std::to_string(hp.height) +
                       "x" + std::to_string(hp.width) + "x" +
                       std::to_string(hp.depth));
  if (opts.frozen_selection && opts.frozen_selection->size() != grids.size())
    throw std::invalid_argument("forward: frozen selection count mismatch");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.training = opts.training;
  c.samples.clear();
  c.samples.resize(grids.size());
  c.relation_macs = 0;

  stage("materialize", [&] {
    c.u_prime_mat = weight_norm_materialize(params.attention.u_map.direction,
                                            params.attention.u_map.gains);
    c.v_prime_mat = weight_norm_materialize(params.attention.v_map.direction,
                                            params.attention.v_map.gains);
    c.u_mat = weight_norm_materialize(params.relation.u_map.direction,
                                      params.relation.u_map.gains);
    c.v_mat = weight_norm_materialize(params.relation.v_map.direction,
                                      params.relation.v_map.gains);
    c.pool_mat = weight_norm_materialize(params.relation.pool_map.direction,
                                         params.relation.pool_map.gains);
    return 0;
  });

  const std::size_t n = hp.block_count();
  // Exhaustive selection keeps every pair; that is the full relation.
  c.selected_path =
      hp.selection_enabled &&
      (opts.force_selected_path || opts.frozen_selection != nullptr ||
       hp.selection_k < hp.pair_count());

  c.relation_batch = Matrix(grids.size(), hp.relation_dim);
  for (std::size_t b = 0; b < grids.size(); ++b) {
    SampleCache& s = c.samples[b];
    s.features = stage("rearrange", [&] { return rearrange(grids[b]); });

    stage("attention", [&] {
      s.att_u = relu(matmul(transpose(s.features), c.u_prime_mat));
      s.att_v = relu(matmul(transpose(c.v_prime_mat), s.features));
      s.att_gated = scale_columns(s.att_u, params.attention.pool);
      s.attention = attention_map(matmul(s.att_gated, s.att_v));
      return 0;
    });

    stage("relation", [&] {
      s.rel_u = relu(matmul(transpose(s.features), c.u_mat));
      s.rel_v = relu(matmul(transpose(s.features), c.v_mat));
      const std::size_t rank = hp.relation_rank;
      if (c.selected_path) {
        s.selection = opts.frozen_selection
                          ? (*opts.frozen_selection)[b]
                          : select_pairs(s.attention, hp.selection_k);
        std::vector<std::pair<std::uint32_t, std::uint32_t>> ordered =
            s.selection.pairs;
        std::sort(ordered.begin(), ordered.end());
        s.r_prime.assign(rank, 0.0);
        double kept_sum = 0.0;
        for (const auto& [i, j] : ordered) {
          const double w = s.attention.scores.at(i, j);
          kept_sum += w;
          for (std::size_t l = 0; l < rank; ++l)
            s.r_prime[l] += w * s.rel_u.at(i, l) * s.rel_v.at(j, l);
        }
        if (hp.renormalize_selection) {
          if (kept_sum <= 0.0)
            throw NumericError("forward[relation]: kept scores sum to " +
                               std::to_string(kept_sum) +
                               ", cannot renormalize");
          s.kept_score_sum = kept_sum;
          for (double& v : s.r_prime) v /= kept_sum;
        }
        c.relation_macs +=
            static_cast<std::uint64_t>(ordered.size()) * rank;
      } else {
        s.scores_rel_v = matmul(s.attention.scores, s.rel_v);
        s.r_prime.assign(rank, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t l = 0; l < rank; ++l)
            s.r_prime[l] += s.rel_u.at(i, l) * s.scores_rel_v.at(i, l);
        c.relation_macs += static_cast<std::uint64_t>(n) * n * rank;
      }
      s.r_joint = pool_relation(s.r_prime, c.pool_mat);
      return 0;
    });

    for (std::size_t j = 0; j < hp.relation_dim; ++j)
      c.relation_batch.at(b, j) = s.r_joint[j];
  }

  return stage("mlp_head", [&] {
    return mlp_head(c.relation_batch, params.mlp, opts.training, &c.mlp);
  });
}

ModelGrads make_zero_grads(const ModelParams& params) {
  ModelGrads g;
  const auto& att = params.attention;
  const auto& rel = params.relation;
  g.att_u_dir = Matrix(att.u_map.direction.rows, att.u_map.direction.cols);
  g.att_u_gain.assign(att.u_map.gains.size(), 0.0);
  g.att_v_dir = Matrix(att.v_map.direction.rows, att.v_map.direction.cols);
  g.att_v_gain.assign(att.v_map.gains.size(), 0.0);
  g.att_pool.assign(att.pool.size(), 0.0);
  g.rel_u_dir = Matrix(rel.u_map.direction.rows, rel.u_map.direction.cols);
  g.rel_u_gain.assign(rel.u_map.gains.size(), 0.0);
  g.rel_v_dir = Matrix(rel.v_map.direction.rows, rel.v_map.direction.cols);
  g.rel_v_gain.assign(rel.v_map.gains.size(), 0.0);
  g.rel_pool_dir =
      Matrix(rel.pool_map.direction.rows, rel.pool_map.direction.cols);
  g.rel_pool_gain.assign(rel.pool_map.gains.size(), 0.0);
  g.fc1_w = Matrix(params.mlp.fc1.weight.rows, params.mlp.fc1.weight.cols);
  g.fc1_b.assign(params.mlp.fc1.bias.size(), 0.0);
  g.bn1_gamma.assign(params.mlp.bn1.gamma.size(), 0.0);
  g.bn1_beta.assign(params.mlp.bn1.beta.size(), 0.0);
  g.fc2_w = Matrix(params.mlp.fc2.weight.rows, params.mlp.fc2.weight.cols);
  g.fc2_b.assign(params.mlp.fc2.bias.size(), 0.0);
  g.bn2_gamma.assign(params.mlp.bn2.gamma.size(), 0.0);
  g.bn2_beta.assign(params.mlp.bn2.beta.size(), 0.0);
  g.classifier_w =
      Matrix(params.classifier.weight.rows, params.classifier.weight.cols);
  g.classifier_b.assign(params.classifier.bias.size(), 0.0);
  return g;
}

ModelGrads model_backward(const ModelParams& params, const ForwardCache& cache,
                          const Matrix& grad_embeddings) {
  const HyperParams& hp = params.hp;
  if (cache.samples.empty())
    throw CacheError("backward: cache holds no samples");
  if (grad_embeddings.rows != cache.samples.size() ||
      grad_embeddings.cols != hp.embedding_dim)
    throw CacheError("backward: embedding gradient " +
                     shape_str(grad_embeddings) + " does not match cache of " +
                     std::to_string(cache.samples.size()) + " samples x " +
                     std::to_string(hp.embedding_dim));
  if (!cache.training)
    throw CacheError("backward: cache was produced in inference mode");

  ModelGrads grads = make_zero_grads(params);

  const MlpGrads mlp = mlp_head_backward(params.mlp, cache.mlp, grad_embeddings);
  grads.fc1_w = mlp.dw1;
  grads.fc1_b = mlp.db1;
  grads.bn1_gamma = mlp.dgamma1;
  grads.bn1_beta = mlp.dbeta1;
  grads.fc2_w = mlp.dw2;
  grads.fc2_b = mlp.db2;
  grads.bn2_gamma = mlp.dgamma2;
  grads.bn2_beta = mlp.dbeta2;

  const std::size_t n = hp.block_count();
  const std::size_t rank = hp.relation_rank;

  // Materialized-map gradients accumulated over the batch, converted through
  // the weight-norm parameterization once at the end.
  Matrix d_u_prime(cache.u_prime_mat.rows, cache.u_prime_mat.cols);
  Matrix d_v_prime(cache.v_prime_mat.rows, cache.v_prime_mat.cols);
  Matrix d_u(cache.u_mat.rows, cache.u_mat.cols);
  Matrix d_v(cache.v_mat.rows, cache.v_mat.cols);
  Matrix d_pool_mat(cache.pool_mat.rows, cache.pool_mat.cols);

  grads.feature_grads.resize(cache.samples.size());

  for (std::size_t b = 0; b < cache.samples.size(); ++b) {
    const SampleCache& s = cache.samples[b];
    Vector d_r_joint(hp.relation_dim);
    for (std::size_t j = 0; j < hp.relation_dim; ++j)
      d_r_joint[j] = mlp.dinput.at(b, j);

    // pool_relation: r_joint = P^T r', so dr' = P d_r_joint, dP += r' d_r_joint^T
    Vector d_r_prime(rank, 0.0);
    for (std::size_t l = 0; l < rank; ++l) {
      double acc = 0.0;
      for (std::size_t cdim = 0; cdim < hp.relation_dim; ++cdim) {
        acc += cache.pool_mat.at(l, cdim) * d_r_joint[cdim];
        d_pool_mat.at(l, cdim) += s.r_prime[l] * d_r_joint[cdim];
      }
      d_r_prime[l] = acc;
    }

    // relation backward
    Matrix d_rel_u(n, rank);
    Matrix d_rel_v(n, rank);
    Matrix d_scores(n, n);
    if (cache.selected_path) {
      std::vector<std::pair<std::uint32_t, std::uint32_t>> ordered =
          s.selection.pairs;
      std::sort(ordered.begin(), ordered.end());
      // With renormalization, r' = T / sum(kept scores); the divisor adds a
      // uniform term to every kept score's gradient.
      const double inv_sum = 1.0 / s.kept_score_sum;
      double d_sum = 0.0;
      if (hp.renormalize_selection) {
        for (std::size_t l = 0; l < rank; ++l)
          d_sum -= d_r_prime[l] * s.r_prime[l];
        d_sum *= inv_sum;
      }
      for (const auto& [i, j] : ordered) {
        const double w = s.attention.scores.at(i, j);
        double d_w = d_sum;
        for (std::size_t l = 0; l < rank; ++l) {
          const double xu = s.rel_u.at(i, l);
          const double yv = s.rel_v.at(j, l);
          const double dt = d_r_prime[l] * inv_sum;
          d_w += dt * xu * yv;
          d_rel_u.at(i, l) += dt * w * yv;
          d_rel_v.at(j, l) += dt * w * xu;
        }
        // Dropped pairs keep d_scores at exactly zero: the routing rule.
        d_scores.at(i, j) = d_w;
      }
    } else {
      // r'_l = sum_i X_il (S Y)_il with cached T = S Y.
      Matrix d_t(n, rank);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < rank; ++l) {
          d_rel_u.at(i, l) = d_r_prime[l] * s.scores_rel_v.at(i, l);
          d_t.at(i, l) = d_r_prime[l] * s.rel_u.at(i, l);
        }
      d_scores = matmul(d_t, transpose(s.rel_v));
      d_rel_v = matmul(transpose(s.attention.scores), d_t);
    }

    // through the relation ReLUs to U, V and F
    const Matrix d_rel_u_pre = relu_backward(s.rel_u, d_rel_u);
    const Matrix d_rel_v_pre = relu_backward(s.rel_v, d_rel_v);
    accumulate(d_u, matmul(s.features, d_rel_u_pre));
    accumulate(d_v, matmul(s.features, d_rel_v_pre));
    Matrix d_features = matmul(cache.u_mat, transpose(d_rel_u_pre));
    accumulate(d_features, matmul(cache.v_mat, transpose(d_rel_v_pre)));

    // softmax over the flattened map
    const Matrix d_logits = softmax_flat_backward(s.attention.scores, d_scores);

    // logits = (att_u * pool-per-column) att_v
    const Matrix d_gated = matmul(d_logits, transpose(s.att_v));    // N x L'
    const Matrix d_att_v = matmul(transpose(s.att_gated), d_logits);  // L' x N
    Matrix d_att_u(n, hp.attention_rank);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < hp.attention_rank; ++l) {
        grads.att_pool[l] += d_gated.at(i, l) * s.att_u.at(i, l);
        d_att_u.at(i, l) = d_gated.at(i, l) * params.attention.pool[l];
      }
    const Matrix d_att_u_pre = relu_backward(s.att_u, d_att_u);
    const Matrix d_att_v_pre = relu_backward(s.att_v, d_att_v);
    accumulate(d_u_prime, matmul(s.features, d_att_u_pre));
    accumulate(d_v_prime, matmul(s.features, transpose(d_att_v_pre)));
    accumulate(d_features, matmul(cache.u_prime_mat, transpose(d_att_u_pre)));
    accumulate(d_features, matmul(cache.v_prime_mat, d_att_v_pre));

    grads.feature_grads[b] = std::move(d_features);
  }

  weight_norm_backward(params.attention.u_map.direction,
                       params.attention.u_map.gains, d_u_prime, grads.att_u_dir,
                       grads.att_u_gain);
  weight_norm_backward(params.attention.v_map.direction,
                       params.attention.v_map.gains, d_v_prime, grads.att_v_dir,
                       grads.att_v_gain);
  weight_norm_backward(params.relation.u_map.direction,
                       params.relation.u_map.gains, d_u, grads.rel_u_dir,
                       grads.rel_u_gain);
  weight_norm_backward(params.relation.v_map.direction,
                       params.relation.v_map.gains, d_v, grads.rel_v_dir,
                       grads.rel_v_gain);
  weight_norm_backward(params.relation.pool_map.direction,
                       params.relation.pool_map.gains, d_pool_mat,
                       grads.rel_pool_dir, grads.rel_pool_gain);
  return grads;
}

namespace {

template <typename View, typename Params>
std::vector<View> collect_views(Params& p) {
  std::vector<View> views;
  auto add_matrix = [&](const std::string& name, auto& m) {
    views.push_back({name, m.values.data(), m.values.size()});
  };
  auto add_vector = [&](const std::string& name, auto& v) {
    views.push_back({name, v.data(), v.size()});
  };
  add_matrix("attention.u.direction", p.attention.u_map.direction);
  add_vector("attention.u.gains", p.attention.u_map.gains);
  add_matrix("attention.v.direction", p.attention.v_map.direction);
  add_vector("attention.v.gains", p.attention.v_map.gains);
  add_vector("attention.pool", p.attention.pool);
  add_matrix("relation.u.direction", p.relation.u_map.direction);
  add_vector("relation.u.gains", p.relation.u_map.gains);
  add_matrix("relation.v.direction", p.relation.v_map.direction);
  add_vector("relation.v.gains", p.relation.v_map.gains);
  add_matrix("relation.pool.direction", p.relation.pool_map.direction);
  add_vector("relation.pool.gains", p.relation.pool_map.gains);
  add_matrix("mlp.fc1.weight", p.mlp.fc1.weight);
  add_vector("mlp.fc1.bias", p.mlp.fc1.bias);
  add_vector("mlp.bn1.gamma", p.mlp.bn1.gamma);
  add_vector("mlp.bn1.beta", p.mlp.bn1.beta);
  add_matrix("mlp.fc2.weight", p.mlp.fc2.weight);
  add_vector("mlp.fc2.bias", p.mlp.fc2.bias);
  add_vector("mlp.bn2.gamma", p.mlp.bn2.gamma);
  add_vector("mlp.bn2.beta", p.mlp.bn2.beta);
  add_matrix("classifier.weight", p.classifier.weight);
  add_vector("classifier.bias", p.classifier.bias);
  return views;
}

template <typename View, typename Grads>
std::vector<View> collect_grad_views(Grads& g) {
  std::vector<View> views;
  auto add_matrix = [&](const std::string& name, auto& m) {
    views.push_back({name, m.values.data(), m.values.size()});
  };
  auto add_vector = [&](const std::string& name, auto& v) {
    views.push_back({name, v.data(), v.size()});
  };
  add_matrix("attention.u.direction", g.att_u_dir);
  add_vector("attention.u.gains", g.att_u_gain);
  add_matrix("attention.v.direction", g.att_v_dir);
  add_vector("attention.v.gains", g.att_v_gain);
  add_vector("attention.pool", g.att_pool);
  add_matrix("relation.u.direction", g.rel_u_dir);
  add_vector("relation.u.gains", g.rel_u_gain);
  add_matrix("relation.v.direction", g.rel_v_dir);
  add_vector("relation.v.gains", g.rel_v_gain);
  add_matrix("relation.pool.direction", g.rel_pool_dir);
  add_vector("relation.pool.gains", g.rel_pool_gain);
  add_matrix("mlp.fc1.weight", g.fc1_w);
  add_vector("mlp.fc1.bias", g.fc1_b);
  add_vector("mlp.bn1.gamma", g.bn1_gamma);
  add_vector("mlp.bn1.beta", g.bn1_beta);
  add_matrix("mlp.fc2.weight", g.fc2_w);
  add_vector("mlp.fc2.bias", g.fc2_b);
  add_vector("mlp.bn2.gamma", g.bn2_gamma);
  add_vector("mlp.bn2.beta", g.bn2_beta);
  add_matrix("classifier.weight", g.classifier_w);
  add_vector("classifier.bias", g.classifier_b);
  return views;
}

}  // namespace

std::vector<TensorView> trainable_views(ModelParams& params) {
  return collect_views<TensorView>(params);
}

std::vector<ConstTensorView> trainable_views_const(const ModelParams& params) {
  return collect_views<ConstTensorView>(params);
}

std::vector<TensorView> gradient_views(ModelGrads& grads) {
  return collect_grad_views<TensorView>(grads);
}

std::vector<ConstTensorView> gradient_views_const(const ModelGrads& grads) {
  return collect_grad_views<ConstTensorView>(grads);
}

}  // namespace afrn
