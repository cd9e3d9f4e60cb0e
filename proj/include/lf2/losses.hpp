#pragma once

// Identity-classification and metric losses for source pretraining and
// target fine-tuning, each returning the value together with its gradient.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lf2/tensor.hpp"

namespace lf2 {

struct LossWeights {
  double alpha = 1.0;   // weight of the global identity objective
  double lambda = 0.5;  // triplet weight inside the identity objective
  double gamma = 0.5;   // weight of the per-part softmax triplet terms
  double margin = 0.3;  // hinge triplet margin
};

struct LossValue {
  double value = 0.0;
  Tensor grad;  // same shape as the input logits / embeddings
};

// Mean over the batch of -log softmax(logits)[label]. logits: N x M.
// InputError if a label is outside [0, M) or the batch is empty.
LossValue cross_entropy(const Tensor& logits, std::span<const int> labels);

struct MiningResult {
  std::vector<std::size_t> positive;  // hardest positive per anchor
  std::vector<std::size_t> negative;  // hardest negative per anchor
  std::vector<double> positive_distance;
  std::vector<double> negative_distance;
  // Anchors that had at least one positive and one negative. Always all
  // anchors under the strict policy.
  std::vector<std::uint8_t> valid;

  std::size_t valid_count() const;
};

enum class MiningPolicy {
  // Every label must occur at least twice and at least two labels must be
  // present; otherwise InputError.
  kStrict,
  // Anchors without a positive or a negative are marked invalid and skipped
  // by the losses.
  kSkipUnpaired,
};

// Batch-hard mining with L2 distances over rows of `embeddings` (N x d).
// Hardest positive: same label, not the anchor itself, maximal distance.
// Hardest negative: different label, minimal distance. Ties go to the lowest
// index.
MiningResult batch_hard_mine(const Tensor& embeddings, std::span<const int> labels,
                             MiningPolicy policy = MiningPolicy::kStrict);

// Mean over valid anchors of max(0, margin + d_ap - d_an).
double hinge_triplet(const MiningResult& mining, double margin);
// Mean over valid anchors of -log(e^{d_an} / (e^{d_ap} + e^{d_an})).
double softmax_triplet(const MiningResult& mining);

// Value and dL/d(embeddings), holding the mined pairs fixed.
LossValue hinge_triplet_loss(const Tensor& embeddings, const MiningResult& mining, double margin);
LossValue softmax_triplet_loss(const Tensor& embeddings, const MiningResult& mining);

// alpha * (cls + lambda * tri) + gamma * sum(part_tri).
double total_target_loss(double cls, double tri, std::span<const double> part_tri, const LossWeights& w);
// cls + lambda * tri.
double source_loss(double cls, double tri, double lambda);

}  // namespace lf2
