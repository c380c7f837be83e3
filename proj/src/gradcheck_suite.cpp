#include "afrn/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "afrn/kernels.hpp"
#include "afrn/losses.hpp"
#include "afrn/rng.hpp"

namespace afrn {

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo,
                     double hi) {
  Matrix m(rows, cols);
  for (double& v : m.values) v = rng.uniform(lo, hi);
  return m;
}

// Uniform away from zero, for ReLU-adjacent inputs.
Matrix random_offzero(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.values) {
    v = rng.uniform(0.1, 2.0);
    if (rng.uniform() < 0.5) v = -v;
  }
  return m;
}

void maybe_flip(std::vector<double>& grad, const std::string& check,
                const GradcheckOptions& opts) {
  if (opts.sign_flip == check)
    for (double& v : grad) v = -v;
}

std::vector<double> flat_params(const ModelParams& params) {
  std::vector<double> flat;
  for (const ConstTensorView& v : trainable_views_const(params))
    flat.insert(flat.end(), v.data, v.data + v.size);
  return flat;
}

void assign_flat(ModelParams& params, const std::vector<double>& flat) {
  std::size_t at = 0;
  for (const TensorView& v : trainable_views(params)) {
    std::copy(flat.begin() + at, flat.begin() + at + v.size, v.data);
    at += v.size;
  }
}

struct ModelInstance {
  ModelParams params;
  std::vector<Tensor3> grids;
  std::vector<int> labels;
  std::vector<TripletIndex> triplets;
  std::vector<PairSelection> frozen;
};

double instance_kink_margin(ModelInstance& inst, double loss_margin) {
  ForwardCache cache;
  ForwardOptions opts;
  opts.training = true;
  const Matrix emb = model_forward(inst.params, inst.grids, opts, &cache);
  double margin = 1e9;
  auto scan = [&](const Matrix& m) {
    for (double v : m.values) margin = std::min(margin, std::abs(v));
  };
  for (const SampleCache& s : cache.samples) {
    scan(matmul(transpose(s.features), cache.u_prime_mat));
    scan(matmul(transpose(cache.v_prime_mat), s.features));
    scan(matmul(transpose(s.features), cache.u_mat));
    scan(matmul(transpose(s.features), cache.v_mat));
  }
  scan(cache.mlp.bn1_out);
  scan(cache.mlp.bn2_out);
  for (const TripletIndex& t : inst.triplets) {
    double d_pos = 0.0, d_neg = 0.0;
    for (std::size_t j = 0; j < emb.cols; ++j) {
      const double dp = emb.at(t.anchor, j) - emb.at(t.positive, j);
      const double dn = emb.at(t.anchor, j) - emb.at(t.negative, j);
      d_pos += dp * dp;
      d_neg += dn * dn;
    }
    margin = std::min(margin, std::abs(1.0 - d_neg / (d_pos + loss_margin)));
  }
  return margin;
}

ModelInstance make_instance(const HyperParams& hp, std::size_t batch,
                            std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    const std::uint64_t s = derive_seed(seed, 7000 + attempt);
    ModelInstance inst;
    inst.params = init_model(hp, s);
    Rng rng(derive_seed(s, 42));
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor3 grid(hp.height, hp.width, hp.depth);
      for (double& v : grid.values) v = rng.normal(0.0, 1.0);
      inst.grids.push_back(std::move(grid));
      inst.labels.push_back(static_cast<int>(b % hp.identity_count));
    }
    inst.triplets = mine_triplets(inst.labels, derive_seed(s, 43));
    if (instance_kink_margin(inst, 1.0) < 2e-3) continue;
    ForwardOptions opts;
    opts.training = true;
    opts.force_selected_path = true;
    ForwardCache cache;
    ModelParams probe = inst.params;
    model_forward(probe, inst.grids, opts, &cache);
    for (const SampleCache& sc : cache.samples)
      inst.frozen.push_back(sc.selection);
    return inst;
  }
  throw NumericError("gradcheck: could not find a kink-free instance");
}

}  // namespace

HyperParams default_gradcheck_hyper() {
  HyperParams hp;
  hp.height = 2;
  hp.width = 2;
  hp.depth = 3;
  hp.attention_rank = 4;
  hp.relation_rank = 4;
  hp.relation_dim = 3;
  hp.embedding_dim = 4;
  hp.selection_k = 5;
  hp.selection_enabled = true;
  hp.identity_count = 3;
  return hp;
}

HyperParams degenerate_gradcheck_hyper() {
  HyperParams hp;
  hp.height = 1;
  hp.width = 1;
  hp.depth = 3;
  hp.attention_rank = 3;
  hp.relation_rank = 3;
  hp.relation_dim = 2;
  hp.embedding_dim = 3;
  hp.selection_k = 1;
  hp.selection_enabled = true;
  hp.identity_count = 2;
  return hp;
}

std::vector<GradCheckReport> run_gradcheck_suite(const HyperParams& hp,
                                                 std::size_t batch,
                                                 const GradcheckOptions& opts) {
  if (hp.block_count() > 8)
    throw std::invalid_argument(
        "gradcheck: config too large, needs height*width <= 8 (got " +
        std::to_string(hp.block_count()) + ")");
  if (batch < 2) throw std::invalid_argument("gradcheck: batch must be >= 2");

  std::vector<GradCheckReport> reports;
  Rng rng(derive_seed(opts.seed, 0x6c));
  const double tol = opts.tolerance;

  // --- kernels ---------------------------------------------------------
  auto check_op = [&](DifferentiableOp op, const Matrix& input) {
    if (opts.sign_flip == op.name) {
      auto original = op.backward;
      op.backward = [original](const Matrix& x, const Matrix& g) {
        return scale(original(x, g), -1.0);
      };
    }
    reports.push_back(
        finite_diff_check(op, input, tol, derive_seed(opts.seed, reports.size())));
  };

  {
    const Matrix rhs = random_matrix(rng, 4, 3, -2.0, 2.0);
    check_op({"matmul",
              [rhs](const Matrix& x) { return matmul(x, rhs); },
              [rhs](const Matrix& x, const Matrix& g) {
                return matmul_backward(x, rhs, g).first;
              },
              nullptr},
             random_matrix(rng, 3, 4, -2.0, 2.0));

    const Matrix other = random_matrix(rng, 3, 4, -2.0, 2.0);
    check_op({"hadamard",
              [other](const Matrix& x) { return hadamard(x, other); },
              [other](const Matrix& x, const Matrix& g) {
                return hadamard_backward(x, other, g).first;
              },
              nullptr},
             random_matrix(rng, 3, 4, -2.0, 2.0));

    check_op({"relu", [](const Matrix& x) { return relu(x); },
              [](const Matrix& x, const Matrix& g) {
                return relu_backward(x, g);
              },
              [](const Matrix& x, std::size_t i) {
                return std::abs(x.values[i]) < 1e-4;
              }},
             random_offzero(rng, 3, 4));

    check_op({"softmax_flat", [](const Matrix& x) { return softmax_flat(x); },
              [](const Matrix& x, const Matrix& g) {
                return softmax_flat_backward(softmax_flat(x), g);
              },
              nullptr},
             random_matrix(rng, 3, 3, -2.0, 2.0));
  }

  // --- weight normalization --------------------------------------------
  {
    const std::size_t rows = 4, cols = 3;
    const Matrix dir0 = random_offzero(rng, rows, cols);
    Vector gains0(cols);
    for (double& g : gains0) g = rng.uniform(0.5, 1.5);
    const Matrix proj = random_matrix(rng, rows, cols, -1.0, 1.0);

    std::vector<double> point = dir0.values;
    point.insert(point.end(), gains0.begin(), gains0.end());
    auto objective = [&](const std::vector<double>& flat) {
      Matrix dir(rows, cols);
      std::copy(flat.begin(), flat.begin() + rows * cols, dir.values.begin());
      Vector gains(flat.begin() + rows * cols, flat.end());
      return dot_all(proj, weight_norm_materialize(dir, gains));
    };
    Matrix d_dir;
    Vector d_gains;
    weight_norm_backward(dir0, gains0, proj, d_dir, d_gains);
    std::vector<double> analytic = d_dir.values;
    analytic.insert(analytic.end(), d_gains.begin(), d_gains.end());
    maybe_flip(analytic, "weight_norm", opts);
    reports.push_back(finite_diff_check_scalar("weight_norm", objective, point,
                                               analytic, tol));
  }

  // --- batch norm --------------------------------------------------------
  {
    const std::size_t width = 3;
    const Matrix x0 = random_matrix(rng, batch, width, -2.0, 2.0);
    Vector gamma0(width), beta0(width);
    for (double& v : gamma0) v = rng.uniform(0.5, 1.5);
    for (double& v : beta0) v = rng.uniform(-0.5, 0.5);
    const Matrix proj = random_matrix(rng, batch, width, -1.0, 1.0);

    std::vector<double> point = x0.values;
    point.insert(point.end(), gamma0.begin(), gamma0.end());
    point.insert(point.end(), beta0.begin(), beta0.end());
    auto objective = [&, batch](const std::vector<double>& flat) {
      BatchNormLayer bn;
      Matrix x(batch, width);
      std::copy(flat.begin(), flat.begin() + batch * width, x.values.begin());
      bn.gamma.assign(flat.begin() + batch * width,
                      flat.begin() + batch * width + width);
      bn.beta.assign(flat.begin() + batch * width + width, flat.end());
      bn.running_mean.assign(width, 0.0);
      bn.running_var.assign(width, 1.0);
      return dot_all(proj, batch_norm(x, bn, true));
    };
    BatchNormLayer bn;
    bn.gamma = gamma0;
    bn.beta = beta0;
    bn.running_mean.assign(width, 0.0);
    bn.running_var.assign(width, 1.0);
    BatchNormCache cache;
    batch_norm(x0, bn, true, &cache);
    const BatchNormGrads grads = batch_norm_backward(bn, cache, proj);
    std::vector<double> analytic = grads.dx.values;
    analytic.insert(analytic.end(), grads.dgamma.begin(), grads.dgamma.end());
    analytic.insert(analytic.end(), grads.dbeta.begin(), grads.dbeta.end());
    maybe_flip(analytic, "batch_norm", opts);
    reports.push_back(finite_diff_check_scalar("batch_norm", objective, point,
                                               analytic, tol));
  }

  // --- pooling ------------------------------------------------------------
  {
    const std::size_t rank = 4, cdim = 3;
    Vector r0(rank);
    for (double& v : r0) v = rng.uniform(-1.0, 1.0);
    const Matrix p0 = random_matrix(rng, rank, cdim, -1.0, 1.0);
    Vector proj(cdim);
    for (double& v : proj) v = rng.uniform(-1.0, 1.0);

    std::vector<double> point = r0;
    point.insert(point.end(), p0.values.begin(), p0.values.end());
    auto objective = [&](const std::vector<double>& flat) {
      Vector r(flat.begin(), flat.begin() + rank);
      Matrix p(rank, cdim);
      std::copy(flat.begin() + rank, flat.end(), p.values.begin());
      const Vector pooled = pool_relation(r, p);
      double sum = 0.0;
      for (std::size_t i = 0; i < cdim; ++i) sum += proj[i] * pooled[i];
      return sum;
    };
    // r_joint = P^T r': dr' = P proj, dP = r' proj^T
    std::vector<double> analytic;
    for (std::size_t l = 0; l < rank; ++l) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cdim; ++c) acc += p0.at(l, c) * proj[c];
      analytic.push_back(acc);
    }
    for (std::size_t l = 0; l < rank; ++l)
      for (std::size_t c = 0; c < cdim; ++c) analytic.push_back(r0[l] * proj[c]);
    maybe_flip(analytic, "pool_relation", opts);
    reports.push_back(finite_diff_check_scalar("pool_relation", objective,
                                               point, analytic, tol));
  }

  // --- model-level layers and the full model -----------------------------
  const ModelInstance inst = make_instance(hp, batch, opts.seed);
  const LossWeights weights;

  // attention_logits as a layer: objective is a projection of the logits as
  // a function of all attention parameters (through weight norm).
  {
    const std::size_t n = hp.block_count();
    const Matrix proj = random_matrix(rng, n, n, -1.0, 1.0);
    const Matrix features = rearrange(inst.grids[0]);

    auto att_objective = [&](const std::vector<double>& flat) {
      ModelParams probe = inst.params;
      assign_flat(probe, flat);
      const Matrix u = weight_norm_materialize(probe.attention.u_map.direction,
                                               probe.attention.u_map.gains);
      const Matrix v = weight_norm_materialize(probe.attention.v_map.direction,
                                               probe.attention.v_map.gains);
      return dot_all(proj,
                     attention_logits(features, u, v, probe.attention.pool));
    };

    // analytic gradient through one sample's attention stage
    ModelParams probe = inst.params;
    const Matrix u = weight_norm_materialize(probe.attention.u_map.direction,
                                             probe.attention.u_map.gains);
    const Matrix v = weight_norm_materialize(probe.attention.v_map.direction,
                                             probe.attention.v_map.gains);
    const Matrix att_u = relu(matmul(transpose(features), u));
    const Matrix att_v = relu(matmul(transpose(v), features));
    Matrix gated(att_u.rows, att_u.cols);
    for (std::size_t i = 0; i < att_u.rows; ++i)
      for (std::size_t l = 0; l < att_u.cols; ++l)
        gated.at(i, l) = att_u.at(i, l) * probe.attention.pool[l];

    const Matrix d_gated = matmul(proj, transpose(att_v));
    const Matrix d_att_v = matmul(transpose(gated), proj);
    Matrix d_att_u(att_u.rows, att_u.cols);
    Vector d_pool(hp.attention_rank, 0.0);
    for (std::size_t i = 0; i < att_u.rows; ++i)
      for (std::size_t l = 0; l < att_u.cols; ++l) {
        d_pool[l] += d_gated.at(i, l) * att_u.at(i, l);
        d_att_u.at(i, l) = d_gated.at(i, l) * probe.attention.pool[l];
      }
    const Matrix d_att_u_pre = relu_backward(att_u, d_att_u);
    const Matrix d_att_v_pre = relu_backward(att_v, d_att_v);
    const Matrix d_u_mat = matmul(features, d_att_u_pre);
    const Matrix d_v_mat = matmul(features, transpose(d_att_v_pre));

    ModelGrads grads = make_zero_grads(probe);
    weight_norm_backward(probe.attention.u_map.direction,
                         probe.attention.u_map.gains, d_u_mat, grads.att_u_dir,
                         grads.att_u_gain);
    weight_norm_backward(probe.attention.v_map.direction,
                         probe.attention.v_map.gains, d_v_mat, grads.att_v_dir,
                         grads.att_v_gain);
    grads.att_pool = d_pool;
    std::vector<double> analytic;
    for (const ConstTensorView& view : gradient_views_const(grads))
      analytic.insert(analytic.end(), view.data, view.data + view.size);
    maybe_flip(analytic, "attention_logits", opts);
    reports.push_back(finite_diff_check_scalar(
        "attention_logits", att_objective, flat_params(inst.params), analytic,
        tol));
  }

  // mlp_head as a layer: projection of the output over all head parameters.
  {
    Matrix input(batch, hp.relation_dim);
    for (;;) {  // resample until the head's pre-ReLU values clear the kinks
      for (double& v : input.values) v = rng.uniform(-1.5, 1.5);
      MlpHead head = inst.params.mlp;
      MlpCache probe_cache;
      mlp_head(input, head, true, &probe_cache);
      double margin = 1e9;
      for (double v : probe_cache.bn1_out.values)
        margin = std::min(margin, std::abs(v));
      for (double v : probe_cache.bn2_out.values)
        margin = std::min(margin, std::abs(v));
      if (margin >= 2e-3) break;
    }
    const Matrix proj =
        random_matrix(rng, batch, hp.embedding_dim, -1.0, 1.0);

    auto pack = [](const MlpHead& head) {
      std::vector<double> flat = head.fc1.weight.values;
      flat.insert(flat.end(), head.fc1.bias.begin(), head.fc1.bias.end());
      flat.insert(flat.end(), head.bn1.gamma.begin(), head.bn1.gamma.end());
      flat.insert(flat.end(), head.bn1.beta.begin(), head.bn1.beta.end());
      flat.insert(flat.end(), head.fc2.weight.values.begin(),
                  head.fc2.weight.values.end());
      flat.insert(flat.end(), head.fc2.bias.begin(), head.fc2.bias.end());
      flat.insert(flat.end(), head.bn2.gamma.begin(), head.bn2.gamma.end());
      flat.insert(flat.end(), head.bn2.beta.begin(), head.bn2.beta.end());
      return flat;
    };
    auto unpack = [&](const std::vector<double>& flat) {
      MlpHead head = inst.params.mlp;
      std::size_t at = 0;
      auto take = [&](double* data, std::size_t n) {
        std::copy(flat.begin() + at, flat.begin() + at + n, data);
        at += n;
      };
      take(head.fc1.weight.values.data(), head.fc1.weight.size());
      take(head.fc1.bias.data(), head.fc1.bias.size());
      take(head.bn1.gamma.data(), head.bn1.gamma.size());
      take(head.bn1.beta.data(), head.bn1.beta.size());
      take(head.fc2.weight.values.data(), head.fc2.weight.size());
      take(head.fc2.bias.data(), head.fc2.bias.size());
      take(head.bn2.gamma.data(), head.bn2.gamma.size());
      take(head.bn2.beta.data(), head.bn2.beta.size());
      return head;
    };
    auto objective = [&](const std::vector<double>& flat) {
      MlpHead head = unpack(flat);
      return dot_all(proj, mlp_head(input, head, true));
    };

    MlpHead head = inst.params.mlp;
    MlpCache cache;
    mlp_head(input, head, true, &cache);
    const MlpGrads grads = mlp_head_backward(head, cache, proj);
    std::vector<double> analytic = grads.dw1.values;
    analytic.insert(analytic.end(), grads.db1.begin(), grads.db1.end());
    analytic.insert(analytic.end(), grads.dgamma1.begin(), grads.dgamma1.end());
    analytic.insert(analytic.end(), grads.dbeta1.begin(), grads.dbeta1.end());
    analytic.insert(analytic.end(), grads.dw2.values.begin(),
                    grads.dw2.values.end());
    analytic.insert(analytic.end(), grads.db2.begin(), grads.db2.end());
    analytic.insert(analytic.end(), grads.dgamma2.begin(), grads.dgamma2.end());
    analytic.insert(analytic.end(), grads.dbeta2.begin(), grads.dbeta2.end());
    maybe_flip(analytic, "mlp_head", opts);
    reports.push_back(finite_diff_check_scalar(
        "mlp_head", objective, pack(inst.params.mlp), analytic, tol));
  }

  // losses w.r.t. embeddings
  {
    const std::size_t width = hp.embedding_dim;
    Matrix emb0(batch, width);
    for (;;) {
      for (double& v : emb0.values) v = rng.uniform(-1.5, 1.5);
      bool clean = true;
      for (const TripletIndex& t : inst.triplets) {
        double d_pos = 0.0, d_neg = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          const double dp = emb0.at(t.anchor, j) - emb0.at(t.positive, j);
          const double dn = emb0.at(t.anchor, j) - emb0.at(t.negative, j);
          d_pos += dp * dp;
          d_neg += dn * dn;
        }
        if (std::abs(1.0 - d_neg / (d_pos + 1.0)) < 1e-3) clean = false;
      }
      if (clean) break;
    }
    auto objective = [&, batch](const std::vector<double>& flat) {
      Matrix emb(batch, width);
      emb.values = flat;
      return joint_loss(emb, inst.labels, inst.params.classifier,
                        inst.triplets, 1.0, weights)
          .total;
    };
    LossGrads grads;
    joint_loss(emb0, inst.labels, inst.params.classifier, inst.triplets, 1.0,
               weights, &grads);
    std::vector<double> analytic = grads.d_embeddings.values;
    maybe_flip(analytic, "joint_loss", opts);
    reports.push_back(finite_diff_check_scalar("joint_loss", objective,
                                               emb0.values, analytic, tol));
  }

  // full model, both selection modes
  auto model_check = [&](const std::string& name, bool frozen_selection) {
    auto objective = [&, frozen_selection](const std::vector<double>& flat) {
      ModelParams probe = inst.params;
      if (!frozen_selection) probe.hp.selection_enabled = false;
      assign_flat(probe, flat);
      ForwardOptions fw;
      fw.training = true;
      if (frozen_selection) fw.frozen_selection = &inst.frozen;
      const Matrix emb = model_forward(probe, inst.grids, fw);
      return joint_loss(emb, inst.labels, probe.classifier, inst.triplets, 1.0,
                        weights)
          .total;
    };

    ModelParams probe = inst.params;
    if (!frozen_selection) probe.hp.selection_enabled = false;
    ForwardCache cache;
    ForwardOptions fw;
    fw.training = true;
    if (frozen_selection) fw.frozen_selection = &inst.frozen;
    const Matrix emb = model_forward(probe, inst.grids, fw, &cache);
    LossGrads loss_grads;
    joint_loss(emb, inst.labels, probe.classifier, inst.triplets, 1.0, weights,
               &loss_grads);
    ModelGrads grads = model_backward(probe, cache, loss_grads.d_embeddings);
    grads.classifier_w = loss_grads.d_classifier_w;
    grads.classifier_b = loss_grads.d_classifier_b;
    std::vector<double> analytic;
    for (const ConstTensorView& view : gradient_views_const(grads))
      analytic.insert(analytic.end(), view.data, view.data + view.size);
    maybe_flip(analytic, name, opts);
    reports.push_back(finite_diff_check_scalar(
        name, objective, flat_params(inst.params), analytic, tol));
  };

  model_check("model_selection_off", false);
  model_check("model_selection_on", true);

  return reports;
}

}  // namespace afrn
