#include "afrn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "afrn/kernels.hpp"
#include "afrn/rng.hpp"

namespace afrn {

namespace {

double squared_distance_rows(const Matrix& m, std::size_t a, std::size_t b) {
  double sum = 0.0;
  for (std::size_t j = 0; j < m.cols; ++j) {
    const double d = m.at(a, j) - m.at(b, j);
    sum += d * d;
  }
  return sum;
}

// Adds s * (row a - row b) to grad rows a (positively) and b (negatively):
// the gradient of s' * ||e_a - e_b||^2 with s = 2 s'.
void add_distance_grad(Matrix& grad, const Matrix& emb, std::size_t a,
                       std::size_t b, double s) {
  for (std::size_t j = 0; j < emb.cols; ++j) {
    const double d = emb.at(a, j) - emb.at(b, j);
    grad.at(a, j) += s * d;
    grad.at(b, j) -= s * d;
  }
}

}  // namespace

std::vector<TripletIndex> mine_triplets(const std::vector<int>& labels,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TripletIndex> triplets;
  for (std::size_t anchor = 0; anchor < labels.size(); ++anchor) {
    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i == anchor) continue;
      (labels[i] == labels[anchor] ? positives : negatives).push_back(i);
    }
    if (positives.empty() || negatives.empty()) continue;
    triplets.push_back(
        {anchor, positives[rng.uniform_below(positives.size())],
         negatives[rng.uniform_below(negatives.size())]});
  }
  return triplets;
}

double triplet_ratio_loss(const std::vector<TripletIndex>& triplets,
                          const Matrix& embeddings, double margin,
                          Matrix* d_embeddings) {
  if (margin <= 0.0)
    throw std::invalid_argument("triplet_ratio_loss: margin must be > 0");
  if (triplets.empty()) return 0.0;
  const double inv_count = 1.0 / static_cast<double>(triplets.size());
  double loss = 0.0;
  for (const TripletIndex& t : triplets) {
    const double d_pos = squared_distance_rows(embeddings, t.anchor, t.positive);
    const double d_neg = squared_distance_rows(embeddings, t.anchor, t.negative);
    const double denom = d_pos + margin;
    const double term = 1.0 - d_neg / denom;
    if (term <= 0.0) continue;
    loss += term;
    if (d_embeddings) {
      // d term / d d_neg = -1/denom; d term / d d_pos = d_neg/denom^2
      add_distance_grad(*d_embeddings, embeddings, t.anchor, t.negative,
                        -2.0 * inv_count / denom);
      add_distance_grad(*d_embeddings, embeddings, t.anchor, t.positive,
                        2.0 * inv_count * d_neg / (denom * denom));
    }
  }
  return loss * inv_count;
}

double pairwise_loss(const std::vector<TripletIndex>& triplets,
                     const Matrix& embeddings, Matrix* d_embeddings) {
  if (triplets.empty()) return 0.0;
  const double inv_count = 1.0 / static_cast<double>(triplets.size());
  double loss = 0.0;
  for (const TripletIndex& t : triplets) {
    loss += squared_distance_rows(embeddings, t.anchor, t.positive);
    if (d_embeddings)
      add_distance_grad(*d_embeddings, embeddings, t.anchor, t.positive,
                        2.0 * inv_count);
  }
  return loss * inv_count;
}

double identity_loss(const Matrix& embeddings, const std::vector<int>& labels,
                     const AffineLayer& classifier, Matrix* d_embeddings,
                     Matrix* d_classifier_w, Vector* d_classifier_b) {
  if (labels.size() != embeddings.rows)
    throw ShapeError("identity_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(embeddings.rows) +
                     " embeddings");
  const std::size_t classes = classifier.weight.cols;
  for (int label : labels)
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::invalid_argument("identity_loss: label " +
                                  std::to_string(label) + " outside [0, " +
                                  std::to_string(classes) + ")");

  Matrix logits = matmul(embeddings, classifier.weight);
  for (std::size_t b = 0; b < logits.rows; ++b)
    for (std::size_t j = 0; j < classes; ++j)
      logits.at(b, j) += classifier.bias[j];

  const double inv_count = 1.0 / static_cast<double>(embeddings.rows);
  double loss = 0.0;
  Matrix d_logits(logits.rows, logits.cols);
  for (std::size_t b = 0; b < logits.rows; ++b) {
    double max_logit = logits.at(b, 0);
    for (std::size_t j = 1; j < classes; ++j)
      max_logit = std::max(max_logit, logits.at(b, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j)
      sum += std::exp(logits.at(b, j) - max_logit);
    const double log_sum = std::log(sum) + max_logit;
    const std::size_t label = static_cast<std::size_t>(labels[b]);
    loss += log_sum - logits.at(b, label);
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits.at(b, j) - log_sum);
      d_logits.at(b, j) = inv_count * (p - (j == label ? 1.0 : 0.0));
    }
  }

  if (d_embeddings || d_classifier_w || d_classifier_b) {
    if (d_classifier_w)
      accumulate(*d_classifier_w, matmul(transpose(embeddings), d_logits));
    if (d_classifier_b)
      for (std::size_t b = 0; b < d_logits.rows; ++b)
        for (std::size_t j = 0; j < classes; ++j)
          (*d_classifier_b)[j] += d_logits.at(b, j);
    if (d_embeddings)
      accumulate(*d_embeddings, matmul(d_logits, transpose(classifier.weight)));
  }
  return loss * inv_count;
}

LossBreakdown joint_loss(const Matrix& embeddings,
                         const std::vector<int>& labels,
                         const AffineLayer& classifier,
                         const std::vector<TripletIndex>& triplets,
                         double margin, const LossWeights& weights,
                         LossGrads* grads) {
  LossBreakdown out;
  out.weights = weights;

  Matrix d_triplet, d_pairwise, d_identity;
  if (grads) {
    grads->d_embeddings = Matrix(embeddings.rows, embeddings.cols);
    grads->d_classifier_w =
        Matrix(classifier.weight.rows, classifier.weight.cols);
    grads->d_classifier_b.assign(classifier.bias.size(), 0.0);
    d_triplet = Matrix(embeddings.rows, embeddings.cols);
    d_pairwise = Matrix(embeddings.rows, embeddings.cols);
    d_identity = Matrix(embeddings.rows, embeddings.cols);
  }

  out.triplet = triplet_ratio_loss(triplets, embeddings, margin,
                                   grads ? &d_triplet : nullptr);
  out.pairwise =
      pairwise_loss(triplets, embeddings, grads ? &d_pairwise : nullptr);
  out.identity = identity_loss(embeddings, labels, classifier,
                               grads ? &d_identity : nullptr,
                               grads ? &grads->d_classifier_w : nullptr,
                               grads ? &grads->d_classifier_b : nullptr);
  out.total = weights.triplet * out.triplet + weights.pairwise * out.pairwise +
              weights.identity * out.identity;

  if (grads) {
    for (std::size_t i = 0; i < grads->d_embeddings.size(); ++i)
      grads->d_embeddings.values[i] = weights.triplet * d_triplet.values[i] +
                                      weights.pairwise * d_pairwise.values[i] +
                                      weights.identity * d_identity.values[i];
    for (double& v : grads->d_classifier_w.values) v *= weights.identity;
    for (double& v : grads->d_classifier_b) v *= weights.identity;
  }
  return out;
}

}  // namespace afrn
