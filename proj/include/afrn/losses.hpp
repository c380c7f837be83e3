#ifndef AFRN_LOSSES_HPP_
#define AFRN_LOSSES_HPP_

#include <cstdint>
#include <vector>

#include "afrn/matrix.hpp"
#include "afrn/model.hpp"

namespace afrn {

struct TripletIndex {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
};

struct LossWeights {
  double triplet = 1.0;
  double pairwise = 0.5;
  double identity = 1.0;
};

struct LossBreakdown {
  double triplet = 0.0;
  double pairwise = 0.0;
  double identity = 0.0;
  double total = 0.0;
  LossWeights weights;
};

struct LossGrads {
  Matrix d_embeddings;
  Matrix d_classifier_w;
  Vector d_classifier_b;
};

// One triplet per anchor that has a positive: a uniformly random positive
// (same label, different index) and a uniformly random negative. Anchors are
// visited in index order; empty when the batch has no valid triplet.
std::vector<TripletIndex> mine_triplets(const std::vector<int>& labels,
                                        std::uint64_t seed);

// mean over triplets of max(0, 1 - d_n / (d_p + margin)), squared-L2 d.
// Gradients accumulate into d_embeddings when given.
double triplet_ratio_loss(const std::vector<TripletIndex>& triplets,
                          const Matrix& embeddings, double margin,
                          Matrix* d_embeddings = nullptr);

// mean over anchor-positive pairs of squared-L2 distance.
double pairwise_loss(const std::vector<TripletIndex>& triplets,
                     const Matrix& embeddings, Matrix* d_embeddings = nullptr);

// mean softmax cross-entropy of classifier(embedding) against labels.
double identity_loss(const Matrix& embeddings, const std::vector<int>& labels,
                     const AffineLayer& classifier,
                     Matrix* d_embeddings = nullptr,
                     Matrix* d_classifier_w = nullptr,
                     Vector* d_classifier_b = nullptr);

// Weighted sum of the three losses; all gradient paths accumulate into the
// embedding gradients.
LossBreakdown joint_loss(const Matrix& embeddings,
                         const std::vector<int>& labels,
                         const AffineLayer& classifier,
                         const std::vector<TripletIndex>& triplets,
                         double margin, const LossWeights& weights,
                         LossGrads* grads = nullptr);

}  // namespace afrn

#endif  // AFRN_LOSSES_HPP_
