#include "afrn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <mutex>
#include <thread>

#include "afrn/rng.hpp"

namespace afrn {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kMiningStream = 3;

}  // namespace

std::vector<Sample> load_or_generate(const RunConfig& config) {
  std::vector<Sample> samples = config.grid_file.empty()
                                    ? generate_dataset(config.dataset_spec())
                                    : load_grids(config.grid_file);
  for (const Sample& s : samples) {
    if (s.grid.height != config.height || s.grid.width != config.width ||
        s.grid.depth != config.depth)
      throw ShapeError("dataset grid " + std::to_string(s.grid.height) + "x" +
                       std::to_string(s.grid.width) + "x" +
                       std::to_string(s.grid.depth) + " does not match model " +
                       std::to_string(config.height) + "x" +
                       std::to_string(config.width) + "x" +
                       std::to_string(config.depth));
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= config.identities)
      throw std::invalid_argument("dataset label " + std::to_string(s.label) +
                                  " outside [0, " +
                                  std::to_string(config.identities) + ")");
  }
  return samples;
}

TrainResult train_model(const RunConfig& config,
                        const std::vector<Sample>& train_samples,
                        const EpochCallback& on_epoch) {
  if (train_samples.size() < 2)
    throw std::invalid_argument("train_model: needs at least 2 samples");

  TrainResult result;
  result.params = init_model(config.hyper_params(),
                             derive_seed(config.seed, kInitStream));
  result.opt_state.beta1 = config.beta1;
  result.opt_state.beta2 = config.beta2;
  result.opt_state.epsilon = config.adamax_epsilon;
  {
    auto views = trainable_views(result.params);
    result.opt_state.init(views);
  }

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0u);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr =
        lr_schedule(schedule_epoch(epoch, config.epoch_scale));
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream + 97 * epoch));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;

    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t size =
          std::min(config.batch_size, order.size() - start);
      if (size < 2) break;  // BN cannot train on a single sample

      std::vector<Tensor3> grids;
      std::vector<int> labels;
      grids.reserve(size);
      for (std::size_t k = 0; k < size; ++k) {
        grids.push_back(train_samples[order[start + k]].grid);
        labels.push_back(train_samples[order[start + k]].label);
      }

      ForwardCache cache;
      ForwardOptions opts;
      opts.training = true;
      const Matrix embeddings =
          model_forward(result.params, grids, opts, &cache);

      const std::vector<TripletIndex> triplets = mine_triplets(
          labels,
          derive_seed(config.seed, kMiningStream + 131 * result.steps));
      LossGrads loss_grads;
      const LossBreakdown loss =
          joint_loss(embeddings, labels, result.params.classifier, triplets,
                     config.margin, config.loss_weights, &loss_grads);
      if (!std::isfinite(loss.total))
        throw NumericError("train_model: non-finite loss at step " +
                           std::to_string(result.steps + 1));

      ModelGrads grads =
          model_backward(result.params, cache, loss_grads.d_embeddings);
      grads.classifier_w = std::move(loss_grads.d_classifier_w);
      grads.classifier_b = std::move(loss_grads.d_classifier_b);

      auto grad_views = gradient_views(grads);
      clip_global_norm(grad_views, config.clip_norm);
      auto param_views = trainable_views(result.params);
      adamax_step(param_views, gradient_views_const(grads), result.opt_state,
                  lr);

      result.relation_macs += cache.relation_macs;
      ++result.steps;
      ++stats.steps;
      stats.mean_total += loss.total;
      stats.mean_triplet += loss.triplet;
      stats.mean_pairwise += loss.pairwise;
      stats.mean_identity += loss.identity;
    }

    if (stats.steps > 0) {
      const double inv = 1.0 / static_cast<double>(stats.steps);
      stats.mean_total *= inv;
      stats.mean_triplet *= inv;
      stats.mean_pairwise *= inv;
      stats.mean_identity *= inv;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(result.params, result.opt_state, stats);
  }
  return result;
}

Matrix compute_embeddings(ModelParams& params,
                          const std::vector<Sample>& samples,
                          std::size_t threads) {
  if (samples.empty())
    throw std::invalid_argument("compute_embeddings: no samples");
  Matrix embeddings(samples.size(), params.hp.embedding_dim);

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&](std::size_t begin, std::size_t end) {
    try {
      for (std::size_t i = begin; i < end; ++i) {
        ForwardOptions opts;
        opts.training = false;
        const Matrix e = model_forward(params, {samples[i].grid}, opts);
        for (std::size_t j = 0; j < params.hp.embedding_dim; ++j)
          embeddings.at(i, j) = e.at(0, j);
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  threads = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (threads == 1) {
    worker(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (samples.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(samples.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(worker, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return embeddings;
}

std::vector<eval::ScoredPair> embedding_pairs(const Matrix& embeddings,
                                              const std::vector<int>& labels) {
  if (labels.size() != embeddings.rows)
    throw std::invalid_argument("embedding_pairs: label count mismatch");
  std::vector<eval::ScoredPair> pairs;
  pairs.reserve(embeddings.rows * (embeddings.rows - 1) / 2);
  for (std::size_t a = 0; a < embeddings.rows; ++a)
    for (std::size_t b = a + 1; b < embeddings.rows; ++b) {
      double sum = 0.0;
      for (std::size_t j = 0; j < embeddings.cols; ++j) {
        const double d = embeddings.at(a, j) - embeddings.at(b, j);
        sum += d * d;
      }
      pairs.push_back({sum, labels[a] == labels[b]});
    }
  return pairs;
}

double holdout_verification_accuracy(ModelParams& params,
                                     const std::vector<Sample>& validation,
                                     std::size_t threads) {
  const Matrix embeddings = compute_embeddings(params, validation, threads);
  std::vector<int> labels;
  labels.reserve(validation.size());
  for (const Sample& s : validation) labels.push_back(s.label);
  return eval::verification_accuracy(embedding_pairs(embeddings, labels)).first;
}

std::vector<KSweepRow> run_ksweep(const RunConfig& config,
                                  const std::vector<std::size_t>& k_values,
                                  std::vector<std::string>* warnings) {
  const std::size_t pair_count =
      config.height * config.width * config.height * config.width;

  std::vector<std::size_t> ks;
  std::set<std::size_t> seen;
  for (std::size_t k : k_values) {
    std::size_t effective = k;
    if (effective > pair_count) {
      if (warnings)
        warnings->push_back("k=" + std::to_string(k) + " exceeds " +
                            std::to_string(pair_count) +
                            " pairs; clamped");
      effective = pair_count;
    }
    if (!seen.insert(effective).second) {
      if (warnings)
        warnings->push_back("duplicate k=" + std::to_string(effective) +
                            " dropped");
      continue;
    }
    ks.push_back(effective);
  }

  const std::vector<Sample> samples = load_or_generate(config);
  const SplitResult split = split_dataset(samples, config.holdout_fraction,
                                          derive_seed(config.seed, 4));

  std::vector<KSweepRow> rows;
  for (std::size_t k : ks) {
    RunConfig run = config;
    run.selection_enabled = true;
    run.selection_k = k;
    TrainResult trained = train_model(run, split.train);
    rows.push_back({k, true,
                    holdout_verification_accuracy(trained.params,
                                                  split.validation,
                                                  config.threads)});
  }
  // Exhaustive reference: selection off, same data and seed.
  RunConfig ref = config;
  ref.selection_enabled = false;
  ref.selection_k = pair_count;
  TrainResult trained = train_model(ref, split.train);
  rows.push_back({pair_count, false,
                  holdout_verification_accuracy(trained.params,
                                                split.validation,
                                                config.threads)});
  return rows;
}

}  // namespace afrn
