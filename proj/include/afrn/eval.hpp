#ifndef AFRN_EVAL_HPP_
#define AFRN_EVAL_HPP_

#include <string>
#include <utility>
#include <vector>

#include "afrn/matrix.hpp"

namespace afrn::eval {

// Distance plus same-identity flag for one comparison.
struct ScoredPair {
  double distance;
  bool genuine;
};

struct CurvePoint {
  double threshold;
  double tar;   // TPIR for the open-set curve
  double far;   // FPIR for the open-set curve
};

// A subject's enrollment: media are groups of embeddings from one source.
struct GalleryTemplate {
  int subject = 0;
  std::vector<std::vector<Vector>> media;
};

double squared_l2(const Vector& a, const Vector& b);

// Accept when distance <= threshold. For each FAR target, reports TAR at the
// largest observed threshold with FAR <= target; thresholds sweep the
// observed distances plus -inf/+inf sentinels.
std::vector<CurvePoint> tar_at_far(const std::vector<ScoredPair>& pairs,
                                   const std::vector<double>& far_targets);

// Threshold maximizing classification accuracy; ties take the smallest
// threshold. Returns (accuracy, threshold).
std::pair<double, double> verification_accuracy(
    const std::vector<ScoredPair>& pairs);

// Mean of per-media means.
Vector aggregate_template(const GalleryTemplate& t);

// Closed-set identification: fraction of probes whose true subject is within
// the top N gallery matches by ascending squared-L2 to the aggregated
// template features. Returns one accuracy per requested rank.
std::vector<double> rank_n(const std::vector<Vector>& probe_embeddings,
                           const std::vector<int>& probe_subjects,
                           const std::vector<GalleryTemplate>& gallery,
                           const std::vector<std::size_t>& ranks);

// Open-set identification. A mated probe counts as a hit at threshold t only
// when its rank-1 match is the true subject and the best distance is <= t.
std::vector<CurvePoint> tpir_at_fpir(
    const std::vector<Vector>& mated_embeddings,
    const std::vector<int>& mated_subjects,
    const std::vector<Vector>& nonmated_embeddings,
    const std::vector<GalleryTemplate>& gallery,
    const std::vector<double>& fpir_targets);

// CSV emission: header row, one curve point per row.
void write_curve_csv(const std::string& path, const std::string& rate_name,
                     const std::string& target_name,
                     const std::vector<double>& targets,
                     const std::vector<CurvePoint>& points);

}  // namespace afrn::eval

#endif  // AFRN_EVAL_HPP_
