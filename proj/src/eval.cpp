#include "afrn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

namespace afrn::eval {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_curve_input(const std::vector<ScoredPair>& pairs) {
  bool has_genuine = false, has_impostor = false;
  for (const ScoredPair& p : pairs) (p.genuine ? has_genuine : has_impostor) = true;
  if (!has_genuine || !has_impostor)
    throw std::invalid_argument(
        "scored pair set needs at least one genuine and one impostor pair");
}

std::vector<double> threshold_sweep(const std::vector<double>& distances) {
  std::set<double> uniq(distances.begin(), distances.end());
  std::vector<double> sweep;
  sweep.reserve(uniq.size() + 2);
  sweep.push_back(-kInf);
  sweep.insert(sweep.end(), uniq.begin(), uniq.end());
  sweep.push_back(kInf);
  return sweep;
}

}  // namespace

double squared_l2(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw ShapeError("squared_l2: widths " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

std::vector<CurvePoint> tar_at_far(const std::vector<ScoredPair>& pairs,
                                   const std::vector<double>& far_targets) {
  require_curve_input(pairs);
  for (double t : far_targets)
    if (t < 0.0 || t > 1.0)
      throw std::invalid_argument("tar_at_far: target " + std::to_string(t) +
                                  " outside [0, 1]");

  std::vector<double> all;
  std::size_t genuine_count = 0, impostor_count = 0;
  for (const ScoredPair& p : pairs) {
    all.push_back(p.distance);
    (p.genuine ? genuine_count : impostor_count) += 1;
  }

  auto rates_at = [&](double threshold) {
    std::size_t ga = 0, ia = 0;
    for (const ScoredPair& p : pairs)
      if (p.distance <= threshold) (p.genuine ? ga : ia) += 1;
    return std::pair<double, double>{
        static_cast<double>(ga) / static_cast<double>(genuine_count),
        static_cast<double>(ia) / static_cast<double>(impostor_count)};
  };

  const std::vector<double> sweep = threshold_sweep(all);
  std::vector<CurvePoint> out;
  for (double target : far_targets) {
    CurvePoint best{-kInf, 0.0, 0.0};
    for (double threshold : sweep) {
      const auto [tar, far] = rates_at(threshold);
      if (far <= target) best = {threshold, tar, far};
    }
    out.push_back(best);
  }
  return out;
}

std::pair<double, double> verification_accuracy(
    const std::vector<ScoredPair>& pairs) {
  require_curve_input(pairs);
  std::vector<double> all;
  for (const ScoredPair& p : pairs) all.push_back(p.distance);
  const double total = static_cast<double>(pairs.size());

  double best_acc = -1.0;
  double best_threshold = -kInf;
  for (double threshold : threshold_sweep(all)) {
    std::size_t correct = 0;
    for (const ScoredPair& p : pairs)
      if ((p.distance <= threshold) == p.genuine) ++correct;
    const double acc = static_cast<double>(correct) / total;
    if (acc > best_acc) {
      best_acc = acc;
      best_threshold = threshold;
    }
  }
  return {best_acc, best_threshold};
}

Vector aggregate_template(const GalleryTemplate& t) {
  if (t.media.empty())
    throw std::invalid_argument("aggregate_template: template has no media");
  std::size_t width = 0;
  for (const auto& media : t.media) {
    if (media.empty())
      throw std::invalid_argument("aggregate_template: empty media");
    for (const Vector& e : media) {
      if (width == 0) width = e.size();
      if (e.size() != width)
        throw ShapeError("aggregate_template: mixed embedding widths");
    }
  }
  Vector out(width, 0.0);
  for (const auto& media : t.media) {
    Vector media_mean(width, 0.0);
    for (const Vector& e : media)
      for (std::size_t i = 0; i < width; ++i) media_mean[i] += e[i];
    const double inv = 1.0 / static_cast<double>(media.size());
    for (std::size_t i = 0; i < width; ++i) out[i] += media_mean[i] * inv;
  }
  const double inv = 1.0 / static_cast<double>(t.media.size());
  for (double& v : out) v *= inv;
  return out;
}

namespace {

struct GallerySearch {
  std::vector<Vector> features;
  std::vector<int> subjects;
};

GallerySearch prepare_gallery(const std::vector<GalleryTemplate>& gallery) {
  if (gallery.empty())
    throw std::invalid_argument("gallery must not be empty");
  GallerySearch gs;
  std::set<int> seen;
  for (const GalleryTemplate& t : gallery) {
    if (!seen.insert(t.subject).second)
      throw std::invalid_argument("gallery subject " +
                                  std::to_string(t.subject) + " is duplicated");
    gs.features.push_back(aggregate_template(t));
    gs.subjects.push_back(t.subject);
  }
  return gs;
}

}  // namespace

std::vector<double> rank_n(const std::vector<Vector>& probe_embeddings,
                           const std::vector<int>& probe_subjects,
                           const std::vector<GalleryTemplate>& gallery,
                           const std::vector<std::size_t>& ranks) {
  if (probe_embeddings.size() != probe_subjects.size())
    throw std::invalid_argument("rank_n: probe count mismatch");
  if (probe_embeddings.empty())
    throw std::invalid_argument("rank_n: no probes");
  const GallerySearch gs = prepare_gallery(gallery);

  std::vector<std::size_t> probe_rank(probe_embeddings.size());
  for (std::size_t p = 0; p < probe_embeddings.size(); ++p) {
    std::vector<std::pair<double, std::size_t>> order;
    std::size_t true_slot = gs.features.size();
    for (std::size_t g = 0; g < gs.features.size(); ++g) {
      order.emplace_back(squared_l2(probe_embeddings[p], gs.features[g]), g);
      if (gs.subjects[g] == probe_subjects[p]) true_slot = g;
    }
    if (true_slot == gs.features.size())
      throw std::invalid_argument("rank_n: probe subject " +
                                  std::to_string(probe_subjects[p]) +
                                  " absent from gallery");
    std::sort(order.begin(), order.end());
    for (std::size_t r = 0; r < order.size(); ++r)
      if (order[r].second == true_slot) {
        probe_rank[p] = r + 1;
        break;
      }
  }

  std::vector<double> out;
  for (std::size_t rank : ranks) {
    std::size_t hits = 0;
    for (std::size_t r : probe_rank)
      if (r <= rank) ++hits;
    out.push_back(static_cast<double>(hits) /
                  static_cast<double>(probe_rank.size()));
  }
  return out;
}

std::vector<CurvePoint> tpir_at_fpir(
    const std::vector<Vector>& mated_embeddings,
    const std::vector<int>& mated_subjects,
    const std::vector<Vector>& nonmated_embeddings,
    const std::vector<GalleryTemplate>& gallery,
    const std::vector<double>& fpir_targets) {
  if (mated_embeddings.empty())
    throw std::invalid_argument("tpir_at_fpir: no mated probes");
  if (nonmated_embeddings.empty())
    throw std::invalid_argument(
        "tpir_at_fpir: FPIR undefined without non-mated probes");
  if (mated_embeddings.size() != mated_subjects.size())
    throw std::invalid_argument("tpir_at_fpir: mated probe count mismatch");
  const GallerySearch gs = prepare_gallery(gallery);

  auto best_match = [&](const Vector& probe) {
    double best = kInf;
    std::size_t arg = 0;
    for (std::size_t g = 0; g < gs.features.size(); ++g) {
      const double d = squared_l2(probe, gs.features[g]);
      if (d < best) {
        best = d;
        arg = g;
      }
    }
    return std::pair<double, int>{best, gs.subjects[arg]};
  };

  std::vector<double> mated_best;
  std::vector<bool> mated_correct;
  for (std::size_t p = 0; p < mated_embeddings.size(); ++p) {
    const auto [d, subject] = best_match(mated_embeddings[p]);
    mated_best.push_back(d);
    mated_correct.push_back(subject == mated_subjects[p]);
  }
  std::vector<double> nonmated_best;
  for (const Vector& probe : nonmated_embeddings)
    nonmated_best.push_back(best_match(probe).first);

  std::vector<double> all = mated_best;
  all.insert(all.end(), nonmated_best.begin(), nonmated_best.end());

  auto rates_at = [&](double threshold) {
    std::size_t hits = 0;
    for (std::size_t p = 0; p < mated_best.size(); ++p)
      if (mated_correct[p] && mated_best[p] <= threshold) ++hits;
    std::size_t false_hits = 0;
    for (double d : nonmated_best)
      if (d <= threshold) ++false_hits;
    return std::pair<double, double>{
        static_cast<double>(hits) / static_cast<double>(mated_best.size()),
        static_cast<double>(false_hits) /
            static_cast<double>(nonmated_best.size())};
  };

  for (double t : fpir_targets)
    if (t < 0.0 || t > 1.0)
      throw std::invalid_argument("tpir_at_fpir: target " + std::to_string(t) +
                                  " outside [0, 1]");

  const std::vector<double> sweep = threshold_sweep(all);
  std::vector<CurvePoint> out;
  for (double target : fpir_targets) {
    CurvePoint best{-kInf, 0.0, 0.0};
    for (double threshold : sweep) {
      const auto [tpir, fpir] = rates_at(threshold);
      if (fpir <= target) best = {threshold, tpir, fpir};
    }
    out.push_back(best);
  }
  return out;
}

void write_curve_csv(const std::string& path, const std::string& rate_name,
                     const std::string& target_name,
                     const std::vector<double>& targets,
                     const std::vector<CurvePoint>& points) {
  if (targets.size() != points.size())
    throw std::invalid_argument("write_curve_csv: row count mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  out << target_name << "_target,threshold," << rate_name << ","
      << target_name << "\n";
  char buf[256];
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", targets[i],
                  points[i].threshold, points[i].tar, points[i].far);
    out << buf << "\n";
  }
  if (!out) throw IoError("write to \"" + path + "\" failed");
}

}  // namespace afrn::eval
