#ifndef AFRN_MODEL_HPP_
#define AFRN_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "afrn/matrix.hpp"
#include "afrn/weight_norm.hpp"

namespace afrn {

// Backward called with a cache that does not match the parameters/inputs.
struct CacheError : std::logic_error {
  using std::logic_error::logic_error;
};

// Low-rank bilinear attention parameters: maps U', V' (D x L') and the
// pooling vector p (length L').
struct AttentionParams {
  WeightNormParam u_map;
  WeightNormParam v_map;
  Vector pool;
};

// Pair-relation parameters: maps U, V (D x L) and pooling matrix P (L x C).
struct RelationParams {
  WeightNormParam u_map;
  WeightNormParam v_map;
  WeightNormParam pool_map;
};

struct BatchNormLayer {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
};

// y = x * weight + bias, rows of x are samples.
struct AffineLayer {
  Matrix weight;
  Vector bias;
};

struct MlpHead {
  AffineLayer fc1;
  AffineLayer fc2;
  BatchNormLayer bn1;
  BatchNormLayer bn2;
};

struct HyperParams {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;           // feature depth per block
  std::size_t attention_rank = 0;  // rank of the attention bilinear pooling
  std::size_t relation_rank = 0;   // rank of the relation bilinear pooling
  std::size_t relation_dim = 0;    // pooled relation width
  std::size_t embedding_dim = 0;
  std::size_t selection_k = 0;
  bool selection_enabled = true;
  // Rescale kept scores to sum to 1 inside the selected relation. The
  // substituted sum uses raw scores, so this stays off unless asked for.
  bool renormalize_selection = false;
  std::size_t identity_count = 0;

  std::size_t block_count() const { return height * width; }
  std::size_t pair_count() const { return block_count() * block_count(); }
};

struct ModelParams {
  HyperParams hp;
  AttentionParams attention;
  RelationParams relation;
  MlpHead mlp;
  AffineLayer classifier;
};

ModelParams init_model(const HyperParams& hp, std::uint64_t seed);

struct BilinearAttentionMap {
  Matrix logits;
  Matrix scores;
};

// Top-K ordered pairs (i, j), sorted by score descending, ties broken
// lexicographically by (i, j).
struct PairSelection {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  Vector scores;
  std::size_t requested_k = 0;
  bool clamped = false;  // requested_k exceeded the pair count
};

// --- stage operations -------------------------------------------------------

// Stacks the H*W block features of a grid into columns: F[d][h*W+w] = grid[h][w][d].
Matrix rearrange(const Tensor3& grid);
Tensor3 rearrange_inverse(const Matrix& features, std::size_t height,
                          std::size_t width);

// logits[i][j] = pool . (relu(u_mat^T f_i) * relu(v_mat^T f_j)), computed in
// matrix form as ((1*pool^T) * relu(F^T u_mat)) . relu(v_mat^T F).
Matrix attention_logits(const Matrix& features, const Matrix& u_mat,
                        const Matrix& v_mat, const Vector& pool);

BilinearAttentionMap attention_map(const Matrix& logits);

PairSelection select_pairs(const BilinearAttentionMap& map, std::size_t k);
// Ranking helper shared by scores and logits (monotone order statistics).
PairSelection select_pairs_from(const Matrix& score_like, std::size_t k);

// Intermediate relation r'. mac_counter, when given, accumulates the number
// of attention-weighted multiply-accumulate terms: N^2 * L for the full and
// naive forms, K * L for the selected form.
Vector joint_relation_full(const Matrix& features, const Matrix& scores,
                           const Matrix& u_mat, const Matrix& v_mat,
                           std::uint64_t* mac_counter = nullptr);
Vector joint_relation_naive(const Matrix& features, const Matrix& scores,
                            const Matrix& u_mat, const Matrix& v_mat,
                            std::uint64_t* mac_counter = nullptr);
Vector joint_relation_selected(const Matrix& features, const Matrix& scores,
                               const PairSelection& sel, const Matrix& u_mat,
                               const Matrix& v_mat,
                               std::uint64_t* mac_counter = nullptr);

Vector pool_relation(const Vector& r_prime, const Matrix& pool_mat);

// --- batch normalization and MLP head ---------------------------------------

struct BatchNormCache {
  Vector mean;
  Vector var;
  Matrix x_hat;
  bool training = false;
};

// x is B x F (rows are samples). Training mode normalizes by batch statistics
// and updates running statistics; inference normalizes by running statistics.
Matrix batch_norm(const Matrix& x, BatchNormLayer& layer, bool training,
                  BatchNormCache* cache = nullptr);

struct BatchNormGrads {
  Matrix dx;
  Vector dgamma;
  Vector dbeta;
};

BatchNormGrads batch_norm_backward(const BatchNormLayer& layer,
                                   const BatchNormCache& cache,
                                   const Matrix& grad_out);

struct MlpCache {
  Matrix input;
  Matrix z1, act1, z2;
  BatchNormCache bn1, bn2;
  Matrix bn1_out, bn2_out;
};

// affine -> BN -> ReLU, twice; returns the activated output of the second
// layer, which is the face representation used everywhere downstream.
Matrix mlp_head(const Matrix& input, MlpHead& head, bool training,
                MlpCache* cache = nullptr);

struct MlpGrads {
  Matrix dw1;
  Vector db1, dgamma1, dbeta1;
  Matrix dw2;
  Vector db2, dgamma2, dbeta2;
  Matrix dinput;
};

MlpGrads mlp_head_backward(const MlpHead& head, const MlpCache& cache,
                           const Matrix& grad_out);

// --- whole model -------------------------------------------------------------

struct SampleCache {
  Matrix features;     // F: D x N
  Matrix att_u;        // relu(F^T U'): N x L'
  Matrix att_v;        // relu(V'^T F): L' x N
  Matrix att_gated;    // (1 p^T) * att_u: N x L'
  BilinearAttentionMap attention;
  PairSelection selection;
  Matrix rel_u;        // relu(F^T U): N x L
  Matrix rel_v;        // relu(F^T V): N x L
  Matrix scores_rel_v; // scores * rel_v: N x L (full path only)
  double kept_score_sum = 1.0;  // selected-path divisor when renormalizing
  Vector r_prime;
  Vector r_joint;
};

struct ForwardCache {
  bool training = false;
  bool selected_path = false;
  Matrix u_prime_mat, v_prime_mat, u_mat, v_mat, pool_mat;
  std::vector<SampleCache> samples;
  Matrix relation_batch;  // B x C
  MlpCache mlp;
  std::uint64_t relation_macs = 0;
};

struct ForwardOptions {
  bool training = false;
  // Reuse these selections instead of ranking the current scores; the
  // selection is then a constant of the computation (gradient checks).
  const std::vector<PairSelection>* frozen_selection = nullptr;
  // Selection with K >= N^2 keeps every pair, which is the full relation by
  // definition, so it normally routes through the full path. Tests can force
  // the literal selected sum.
  bool force_selected_path = false;
};

// Returns B x E embeddings. Mutates only BN running statistics and only in
// training mode.
Matrix model_forward(ModelParams& params, const std::vector<Tensor3>& grids,
                     const ForwardOptions& opts, ForwardCache* cache = nullptr);

struct ModelGrads {
  Matrix att_u_dir;
  Vector att_u_gain;
  Matrix att_v_dir;
  Vector att_v_gain;
  Vector att_pool;
  Matrix rel_u_dir;
  Vector rel_u_gain;
  Matrix rel_v_dir;
  Vector rel_v_gain;
  Matrix rel_pool_dir;
  Vector rel_pool_gain;
  Matrix fc1_w;
  Vector fc1_b, bn1_gamma, bn1_beta;
  Matrix fc2_w;
  Vector fc2_b, bn2_gamma, bn2_beta;
  Matrix classifier_w;   // filled by the loss, not by model_backward
  Vector classifier_b;
  std::vector<Matrix> feature_grads;  // dF per sample, for a pluggable encoder
};

ModelGrads make_zero_grads(const ModelParams& params);

// Exact reverse of model_forward. Gradients flow to kept pairs only; dropped
// pairs' score entries receive exactly zero before the softmax backward, and
// the ranking itself is treated as a constant.
ModelGrads model_backward(const ModelParams& params, const ForwardCache& cache,
                          const Matrix& grad_embeddings);

// --- flat parameter access ----------------------------------------------------

struct TensorView {
  std::string name;
  double* data;
  std::size_t size;
};

struct ConstTensorView {
  std::string name;
  const double* data;
  std::size_t size;
};

// Trainable tensors in a fixed documented order (running statistics excluded).
std::vector<TensorView> trainable_views(ModelParams& params);
std::vector<ConstTensorView> trainable_views_const(const ModelParams& params);
std::vector<TensorView> gradient_views(ModelGrads& grads);
std::vector<ConstTensorView> gradient_views_const(const ModelGrads& grads);

}  // namespace afrn

#endif  // AFRN_MODEL_HPP_
