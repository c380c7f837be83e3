#ifndef AFRN_TRAINER_HPP_
#define AFRN_TRAINER_HPP_

#include <functional>
#include <string>
#include <vector>

#include "afrn/config.hpp"
#include "afrn/eval.hpp"
#include "afrn/losses.hpp"
#include "afrn/model.hpp"
#include "afrn/optimizer.hpp"
#include "afrn/synth_data.hpp"

namespace afrn {

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_total = 0.0;
  double mean_triplet = 0.0;
  double mean_pairwise = 0.0;
  double mean_identity = 0.0;
  std::size_t steps = 0;
};

struct TrainResult {
  ModelParams params;
  AdamaxState opt_state;
  std::vector<EpochStats> history;
  std::size_t steps = 0;
  std::uint64_t relation_macs = 0;
};

using EpochCallback = std::function<void(const ModelParams&, const AdamaxState&,
                                         const EpochStats&)>;

// Loads config.grid_file when set, otherwise generates the synthetic dataset.
std::vector<Sample> load_or_generate(const RunConfig& config);

// Seeded single-threaded training loop: shuffled batches, in-batch triplet
// mining, joint loss, global-norm clipping, Adamax with the epoch schedule.
// Batches of size 1 at the tail of an epoch are dropped (BN needs >= 2).
TrainResult train_model(const RunConfig& config,
                        const std::vector<Sample>& train_samples,
                        const EpochCallback& on_epoch = nullptr);

// Inference-mode embeddings, one row per sample. Safe to parallelize because
// inference never mutates the model; results are identical for any thread
// count.
Matrix compute_embeddings(ModelParams& params,
                          const std::vector<Sample>& samples,
                          std::size_t threads = 1);

// All unordered distinct pairs of rows, genuine when labels match.
std::vector<eval::ScoredPair> embedding_pairs(const Matrix& embeddings,
                                              const std::vector<int>& labels);

// Best-threshold verification accuracy over all validation pairs.
double holdout_verification_accuracy(ModelParams& params,
                                     const std::vector<Sample>& validation,
                                     std::size_t threads = 1);

struct KSweepRow {
  std::size_t k = 0;
  bool selection = true;  // false marks the exhaustive reference row
  double accuracy = 0.0;
};

// Trains one model per K on a shared dataset and seed, reporting held-out
// verification accuracy, plus a selection-disabled reference row. Duplicate
// K values are dropped and K > N^2 clamps, both recorded in warnings.
std::vector<KSweepRow> run_ksweep(const RunConfig& config,
                                  const std::vector<std::size_t>& k_values,
                                  std::vector<std::string>* warnings = nullptr);

}  // namespace afrn

#endif  // AFRN_TRAINER_HPP_
