// Command-line front end: train, eval, gradcheck, ksweep, bench.
// Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "afrn/checkpoint.hpp"
#include "afrn/config.hpp"
#include "afrn/gradcheck_suite.hpp"
#include "afrn/kernels.hpp"
#include "afrn/rng.hpp"
#include "afrn/trainer.hpp"

namespace fs = std::filesystem;
using namespace afrn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

struct CommonArgs {
  std::string config_path;
  std::string preset;
  std::string out_dir;
  std::int64_t seed = -1;
  std::int64_t threads = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (key = value)");
  cmd->add_option("--preset", args.preset, "named preset: toy or paper");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--threads", args.threads,
                  "worker threads for inference embedding batches");
}

RunConfig resolve_config(const CommonArgs& args) {
  std::vector<ConfigMap> layers;
  if (!args.preset.empty()) layers.push_back(preset_config(args.preset));
  if (!args.config_path.empty())
    layers.push_back(parse_config_file(args.config_path));
  ConfigMap overrides;
  if (args.seed >= 0) overrides["run.seed"] = std::to_string(args.seed);
  if (!args.out_dir.empty()) overrides["run.output_dir"] = args.out_dir;
  if (args.threads > 0) overrides["run.threads"] = std::to_string(args.threads);
  layers.push_back(overrides);
  return build_config(layers);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  out << text;
  if (!out) throw IoError("write to \"" + path + "\" failed");
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// --- train -------------------------------------------------------------

int cmd_train(const CommonArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig config = resolve_config(args);
  fs::create_directories(config.output_dir);

  const std::vector<Sample> samples = load_or_generate(config);
  const SplitResult split =
      split_dataset(samples, config.holdout_fraction, config.seed);
  for (const std::string& w : split.warnings)
    std::cerr << "warning: " << w << "\n";

  const std::string grids_path =
      (fs::path(config.output_dir) / "dataset.grids").string();
  save_grids(grids_path, samples);

  const std::string ckpt_path =
      (fs::path(config.output_dir) / "model.ckpt").string();

  std::string history_csv = "epoch,lr,total,triplet,pairwise,identity\n";
  const TrainResult result = train_model(
      config, split.train,
      [&](const ModelParams& params, const AdamaxState& opt,
          const EpochStats& stats) {
        save_checkpoint(ckpt_path, params, &opt);
        history_csv += std::to_string(stats.epoch) + "," + fmt(stats.lr) + "," +
                       fmt(stats.mean_total) + "," + fmt(stats.mean_triplet) +
                       "," + fmt(stats.mean_pairwise) + "," +
                       fmt(stats.mean_identity) + "\n";
        std::cout << "epoch " << stats.epoch << "  lr " << fmt6(stats.lr)
                  << "  loss " << fmt6(stats.mean_total) << "\n";
      });

  ModelParams final_params = result.params;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::string accuracy_note;
  try {
    accuracy = holdout_verification_accuracy(final_params, split.validation,
                                             config.threads);
  } catch (const std::invalid_argument& e) {
    accuracy_note = e.what();  // e.g. no genuine pairs in a tiny holdout
  }

  const std::string history_path =
      (fs::path(config.output_dir) / "history.csv").string();
  write_text(history_path, history_csv);

  std::string summary;
  summary += "command = train\n";
  summary += "steps = " + std::to_string(result.steps) + "\n";
  summary += "relation_macs = " + std::to_string(result.relation_macs) + "\n";
  summary += "train_samples = " + std::to_string(split.train.size()) + "\n";
  summary +=
      "validation_samples = " + std::to_string(split.validation.size()) + "\n";
  summary += "holdout_verification_accuracy = " +
             (accuracy_note.empty() ? fmt(accuracy)
                                    : "n/a (" + accuracy_note + ")") +
             "\n";
  summary += "final_loss = " +
             fmt(result.history.empty() ? 0.0
                                        : result.history.back().mean_total) +
             "\n";
  summary += "wall_clock_seconds = " + fmt(elapsed_seconds(start)) + "\n";
  summary += "checkpoint = " + ckpt_path + "\n";
  summary += "dataset = " + grids_path + "\n";
  summary += "history = " + history_path + "\n";
  summary += "[config]\n" + echo_config(config);
  write_text((fs::path(config.output_dir) / "run_summary.txt").string(),
             summary);

  std::cout << "holdout verification accuracy "
            << (accuracy_note.empty() ? fmt6(accuracy) : "n/a") << "\n"
            << "checkpoint written to " << ckpt_path << "\n";
  return kExitOk;
}

// --- eval --------------------------------------------------------------

struct IdentificationSets {
  std::vector<eval::GalleryTemplate> gallery;
  std::vector<Vector> mated;
  std::vector<int> mated_subjects;
  std::vector<Vector> nonmated;
};

// Per identity: first half of its samples enroll as one template (one media
// per sample), the rest probe. The highest-label identity stays out of the
// gallery entirely; its probes are the non-mated searches.
IdentificationSets build_identification(const Matrix& embeddings,
                                        const std::vector<int>& labels) {
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  if (max_label < 1)
    throw std::invalid_argument(
        "identification protocol needs at least 2 identities");

  IdentificationSets sets;
  std::vector<std::vector<std::size_t>> by_id(max_label + 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_id[labels[i]].push_back(i);

  auto embedding_of = [&](std::size_t row) {
    Vector v(embeddings.cols);
    for (std::size_t j = 0; j < embeddings.cols; ++j) v[j] = embeddings.at(row, j);
    return v;
  };

  for (int id = 0; id <= max_label; ++id) {
    const auto& rows = by_id[id];
    if (rows.empty()) continue;
    if (id == max_label) {
      for (std::size_t r : rows) sets.nonmated.push_back(embedding_of(r));
      continue;
    }
    const std::size_t enroll = std::max<std::size_t>(1, rows.size() / 2);
    eval::GalleryTemplate t;
    t.subject = id;
    for (std::size_t k = 0; k < enroll; ++k)
      t.media.push_back({embedding_of(rows[k])});
    sets.gallery.push_back(std::move(t));
    for (std::size_t k = enroll; k < rows.size(); ++k) {
      sets.mated.push_back(embedding_of(rows[k]));
      sets.mated_subjects.push_back(id);
    }
  }
  if (sets.mated.empty())
    throw std::invalid_argument(
        "identification protocol produced no mated probes; need >= 2 samples "
        "for some enrolled identity");
  return sets;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& protocol, const std::string& which_split) {
  const RunConfig config = resolve_config(args);
  fs::create_directories(config.output_dir);

  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const HyperParams& hp = ckpt.params.hp;
  if (hp.height != config.height || hp.width != config.width ||
      hp.depth != config.depth)
    throw ShapeError("checkpoint grid " + std::to_string(hp.height) + "x" +
                     std::to_string(hp.width) + "x" + std::to_string(hp.depth) +
                     " does not match config " + std::to_string(config.height) +
                     "x" + std::to_string(config.width) + "x" +
                     std::to_string(config.depth));

  if (which_split != "all" && which_split != "train" &&
      which_split != "validation")
    throw std::invalid_argument("unknown split \"" + which_split +
                                "\" (expected train, validation, or all)");
  const std::vector<Sample> all = load_or_generate(config);
  std::vector<Sample> subset;
  if (which_split == "all") {
    subset = all;
  } else {
    SplitResult split =
        split_dataset(all, config.holdout_fraction, config.seed);
    subset = which_split == "train" ? std::move(split.train)
                                    : std::move(split.validation);
  }
  if (subset.size() < 2)
    throw std::invalid_argument("eval: split \"" + which_split +
                                "\" holds fewer than 2 samples");

  const Matrix embeddings =
      compute_embeddings(ckpt.params, subset, config.threads);
  std::vector<int> labels;
  for (const Sample& s : subset) labels.push_back(s.label);

  std::string summary;
  summary += "command = eval\n";
  summary += "protocol = " + protocol + "\n";
  summary += "split = " + which_split + "\n";
  summary += "samples = " + std::to_string(subset.size()) + "\n";
  summary += "checkpoint = " + checkpoint_path + "\n";

  if (protocol == "verification") {
    const std::vector<eval::ScoredPair> pairs =
        embedding_pairs(embeddings, labels);
    const auto [accuracy, threshold] = eval::verification_accuracy(pairs);
    const std::vector<double> targets = {0.001, 0.01, 0.1};
    const std::vector<eval::CurvePoint> points =
        eval::tar_at_far(pairs, targets);
    const std::string csv_path =
        (fs::path(config.output_dir) / "verification.csv").string();
    eval::write_curve_csv(csv_path, "tar", "far", targets, points);

    summary += "pairs = " + std::to_string(pairs.size()) + "\n";
    summary += "verification_accuracy = " + fmt(accuracy) + "\n";
    summary += "accuracy_threshold = " + fmt(threshold) + "\n";
    for (std::size_t i = 0; i < targets.size(); ++i)
      summary += "tar_at_far_" + fmt6(targets[i]) + " = " + fmt(points[i].tar) +
                 "\n";
    summary += "curve_csv = " + csv_path + "\n";
    std::cout << "verification accuracy " << fmt6(accuracy) << " ("
              << pairs.size() << " pairs)\n";
  } else if (protocol == "identification") {
    const IdentificationSets sets = build_identification(embeddings, labels);
    std::vector<std::size_t> ranks;
    for (std::size_t r : {std::size_t{1}, std::size_t{5}, std::size_t{10}})
      if (r <= sets.gallery.size()) ranks.push_back(r);
    const std::vector<double> rank_acc =
        eval::rank_n(sets.mated, sets.mated_subjects, sets.gallery, ranks);

    const std::vector<double> fpir_targets = {0.01, 0.1};
    const std::vector<eval::CurvePoint> tpir = eval::tpir_at_fpir(
        sets.mated, sets.mated_subjects, sets.nonmated, sets.gallery,
        fpir_targets);

    std::string rank_csv = "rank,accuracy\n";
    for (std::size_t i = 0; i < ranks.size(); ++i)
      rank_csv +=
          std::to_string(ranks[i]) + "," + fmt(rank_acc[i]) + "\n";
    const std::string rank_path =
        (fs::path(config.output_dir) / "identification_rank.csv").string();
    write_text(rank_path, rank_csv);
    const std::string tpir_path =
        (fs::path(config.output_dir) / "identification_tpir.csv").string();
    eval::write_curve_csv(tpir_path, "tpir", "fpir", fpir_targets, tpir);

    summary += "gallery_subjects = " + std::to_string(sets.gallery.size()) + "\n";
    summary += "mated_probes = " + std::to_string(sets.mated.size()) + "\n";
    summary += "nonmated_probes = " + std::to_string(sets.nonmated.size()) + "\n";
    for (std::size_t i = 0; i < ranks.size(); ++i)
      summary += "rank_" + std::to_string(ranks[i]) + " = " + fmt(rank_acc[i]) +
                 "\n";
    for (std::size_t i = 0; i < fpir_targets.size(); ++i)
      summary += "tpir_at_fpir_" + fmt6(fpir_targets[i]) + " = " +
                 fmt(tpir[i].tar) + "\n";
    summary += "rank_csv = " + rank_path + "\n";
    summary += "tpir_csv = " + tpir_path + "\n";
    std::cout << "rank-1 " << fmt6(rank_acc.empty() ? 0.0 : rank_acc[0])
              << " over " << sets.mated.size() << " mated probes\n";
  } else {
    throw std::invalid_argument("unknown protocol \"" + protocol +
                                "\" (expected verification or identification)");
  }

  summary += "[config]\n" + echo_config(config);
  write_text((fs::path(config.output_dir) / "eval_summary.txt").string(),
             summary);
  return kExitOk;
}

// --- gradcheck -----------------------------------------------------------

int cmd_gradcheck(const CommonArgs& args, const std::string& sign_flip) {
  GradcheckOptions opts;
  opts.sign_flip = sign_flip;
  if (args.seed >= 0) opts.seed = static_cast<std::uint64_t>(args.seed);

  std::vector<std::pair<std::string, HyperParams>> configs;
  std::size_t batch = 6;
  if (!args.config_path.empty() || !args.preset.empty()) {
    const RunConfig config = resolve_config(args);
    HyperParams hp = config.hyper_params();
    if (hp.block_count() > 8)
      throw std::invalid_argument(
          "gradcheck requires a tiny model: height*width <= 8, got " +
          std::to_string(hp.block_count()));
    hp.identity_count = std::min<std::size_t>(hp.identity_count, 3);
    configs.emplace_back("config", hp);
  } else {
    configs.emplace_back("default", default_gradcheck_hyper());
    configs.emplace_back("single-block", degenerate_gradcheck_hyper());
  }

  bool all_pass = true;
  for (const auto& [label, hp] : configs) {
    std::cout << "# gradcheck " << label << " (blocks=" << hp.block_count()
              << ", batch=" << batch << ", tolerance=" << fmt(opts.tolerance)
              << ")\n";
    for (const GradCheckReport& r : run_gradcheck_suite(hp, batch, opts)) {
      all_pass = all_pass && r.pass;
      std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.op_name
                << "  max_rel_err=" << fmt(r.max_rel_error)
                << "  checked=" << r.checked;
      if (r.skipped > 0) std::cout << "  skipped=" << r.skipped;
      std::cout << "\n";
    }
  }
  if (!all_pass) {
    std::cout << "gradient check FAILED\n";
    return kExitNumeric;
  }
  std::cout << "all gradient checks passed\n";
  return kExitOk;
}

// --- ksweep ---------------------------------------------------------------

int cmd_ksweep(const CommonArgs& args, const std::vector<std::size_t>& ks) {
  const RunConfig config = resolve_config(args);
  fs::create_directories(config.output_dir);

  std::vector<std::string> warnings;
  const std::vector<KSweepRow> rows = run_ksweep(config, ks, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

  // the reported metric is best-threshold verification accuracy on the
  // held-out pairs; the header says so to keep sweeps self-describing
  std::string csv = "k,mode,holdout_verification_accuracy\n";
  double best = 0.0, reference = 0.0;
  for (const KSweepRow& row : rows) {
    csv += std::to_string(row.k) + "," +
           (row.selection ? "selected" : "full") + "," + fmt(row.accuracy) +
           "\n";
    if (row.selection)
      best = std::max(best, row.accuracy);
    else
      reference = row.accuracy;
    std::cout << (row.selection ? "k=" : "reference k=") << row.k
              << "  holdout verification accuracy " << fmt6(row.accuracy)
              << "\n";
  }
  const std::string csv_path =
      (fs::path(config.output_dir) / "ksweep.csv").string();
  write_text(csv_path, csv);
  std::cout << "best selected accuracy " << fmt6(best)
            << " vs exhaustive reference " << fmt6(reference) << "\n"
            << "table written to " << csv_path << "\n";
  return kExitOk;
}

// --- bench -----------------------------------------------------------------

struct BenchPoint {
  std::size_t n, d, l, k;
};

int cmd_bench(const CommonArgs& args, const std::vector<std::string>& points) {
  std::vector<BenchPoint> grid;
  for (const std::string& spec : points) {
    BenchPoint p{};
    if (std::sscanf(spec.c_str(), "%zux%zux%zux%zu", &p.n, &p.d, &p.l, &p.k) !=
        4)
      throw std::invalid_argument("bad --point \"" + spec +
                                  "\", expected NxDxLxK");
    if (p.n == 0 || p.d == 0 || p.l == 0 || p.k == 0)
      throw std::invalid_argument("bench point values must be positive");
    grid.push_back(p);
  }
  if (grid.empty())
    grid = {{9, 16, 32, 27}, {16, 16, 32, 64}, {81, 64, 64, 442}};

  std::string out_dir = args.out_dir.empty() ? "out" : args.out_dir;
  fs::create_directories(out_dir);

  std::string csv =
      "n,d,l,k,macs_naive,macs_full,macs_selected,ns_naive,ns_full,"
      "ns_selected,max_deviation,speedup_naive_over_selected\n";

  Rng rng(args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 1);
  for (const BenchPoint& p : grid) {
    Matrix features(p.d, p.n);
    for (double& v : features.values) v = rng.normal(0.0, 1.0);
    Matrix logits(p.n, p.n);
    for (double& v : logits.values) v = rng.normal(0.0, 1.0);
    const Matrix scores = softmax_flat(logits);
    Matrix u(p.d, p.l), v_map(p.d, p.l);
    for (double& v : u.values) v = rng.normal(0.0, std::sqrt(2.0 / p.d));
    for (double& v : v_map.values) v = rng.normal(0.0, std::sqrt(2.0 / p.d));

    const std::size_t k = std::min(p.k, p.n * p.n);
    if (k != p.k)
      std::cerr << "warning: k=" << p.k << " clamped to " << k << "\n";
    const PairSelection sel = select_pairs_from(scores, k);

    auto time_ns = [](auto&& fn) {
      // one warm-up call, then enough repetitions to fill ~20ms
      fn();
      std::size_t reps = 1;
      for (;;) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t r = 0; r < reps; ++r) fn();
        const double ns =
            std::chrono::duration<double, std::nano>(
                std::chrono::steady_clock::now() - t0)
                .count();
        if (ns > 2e7 || reps >= 4096) return ns / static_cast<double>(reps);
        reps *= 4;
      }
    };

    std::uint64_t macs_naive = 0, macs_full = 0, macs_selected = 0;
    const Vector r_naive =
        joint_relation_naive(features, scores, u, v_map, &macs_naive);
    const Vector r_full =
        joint_relation_full(features, scores, u, v_map, &macs_full);
    const Vector r_selected =
        joint_relation_selected(features, scores, sel, u, v_map, &macs_selected);

    double deviation = 0.0;
    for (std::size_t i = 0; i < r_naive.size(); ++i) {
      deviation = std::max(deviation, std::abs(r_naive[i] - r_full[i]));
      if (k == p.n * p.n)
        deviation = std::max(deviation, std::abs(r_naive[i] - r_selected[i]));
    }

    const double ns_naive =
        time_ns([&] { joint_relation_naive(features, scores, u, v_map); });
    const double ns_full =
        time_ns([&] { joint_relation_full(features, scores, u, v_map); });
    const double ns_selected = time_ns(
        [&] { joint_relation_selected(features, scores, sel, u, v_map); });

    const double speedup = ns_naive / ns_selected;
    csv += std::to_string(p.n) + "," + std::to_string(p.d) + "," +
           std::to_string(p.l) + "," + std::to_string(k) + "," +
           std::to_string(macs_naive) + "," + std::to_string(macs_full) + "," +
           std::to_string(macs_selected) + "," + fmt(ns_naive) + "," +
           fmt(ns_full) + "," + fmt(ns_selected) + "," + fmt(deviation) + "," +
           fmt(speedup) + "\n";

    std::cout << "n=" << p.n << " d=" << p.d << " l=" << p.l << " k=" << k
              << "  macs " << macs_naive << "/" << macs_full << "/"
              << macs_selected << "  ns/call " << fmt6(ns_naive) << "/"
              << fmt6(ns_full) << "/" << fmt6(ns_selected) << "  speedup "
              << fmt6(speedup) << "\n";
  }

  const std::string csv_path = (fs::path(out_dir) / "bench.csv").string();
  write_text(csv_path, csv);
  std::cout << "table written to " << csv_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attentional feature-pair relation network toolkit"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, grad_args, ksweep_args, bench_args;

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args);

  CLI::App* evaluate =
      app.add_subcommand("eval", "evaluate a checkpoint on a protocol");
  add_common(evaluate, eval_args);
  std::string checkpoint_path, protocol = "verification", split = "validation";
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  evaluate->add_option("--protocol", protocol,
                       "verification or identification");
  evaluate->add_option("--split", split, "train, validation, or all");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(gradcheck, grad_args);
  std::string sign_flip;
  gradcheck
      ->add_option("--inject-sign-flip", sign_flip,
                   "test hook: negate the named check's analytic gradient")
      ->group("");  // hidden

  CLI::App* ksweep =
      app.add_subcommand("ksweep", "accuracy sweep over the kept-pair count");
  add_common(ksweep, ksweep_args);
  std::vector<std::size_t> ks;
  ksweep->add_option("--k", ks, "kept-pair counts to sweep")
      ->required()
      ->delimiter(',');

  CLI::App* bench = app.add_subcommand(
      "bench", "time the relation kernels and report operation counts");
  add_common(bench, bench_args);
  std::vector<std::string> points;
  bench->add_option("--point", points, "kernel shapes as NxDxLxK");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (evaluate->parsed())
      return cmd_eval(eval_args, checkpoint_path, protocol, split);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args, sign_flip);
    if (ksweep->parsed()) return cmd_ksweep(ksweep_args, ks);
    if (bench->parsed()) return cmd_bench(bench_args, points);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}
