#include "lf2/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "lf2/kernels.hpp"

namespace lf2 {
namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Adds coeff * d||a - b|| / d(a, b) into grad rows a and b.
void add_distance_grad(const Tensor& emb, std::size_t a, std::size_t b, double dist, double coeff,
                       Tensor& grad) {
  if (dist <= 0.0 || coeff == 0.0) return;
  const std::size_t d = emb.dim(1);
  const double scale = coeff / dist;
  for (std::size_t t = 0; t < d; ++t) {
    const double diff = emb[a * d + t] - emb[b * d + t];
    grad[a * d + t] += scale * diff;
    grad[b * d + t] -= scale * diff;
  }
}

}  // namespace

LossValue cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) == 0)
    throw InputError("cross_entropy: expected a non-empty N x M logit batch, got " +
                     shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  if (labels.size() != n)
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  LossValue out{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m)
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(m) + ")");
    const double* row = logits.data() + i * m;
    const double top = *std::max_element(row, row + m);
    double sum = 0.0;
    for (std::size_t k = 0; k < m; ++k) sum += std::exp(row[k] - top);
    const double log_z = top + std::log(sum);
    out.value += log_z - row[labels[i]];
    for (std::size_t k = 0; k < m; ++k) out.grad[i * m + k] = std::exp(row[k] - log_z) / double(n);
    out.grad[i * m + static_cast<std::size_t>(labels[i])] -= 1.0 / double(n);
  }
  out.value /= double(n);
  return out;
}

std::size_t MiningResult::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

MiningResult batch_hard_mine(const Tensor& embeddings, std::span<const int> labels, MiningPolicy policy) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size())
    throw InputError("batch_hard_mine: embeddings " + shape_string(embeddings.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t n = labels.size();
  if (policy == MiningPolicy::kStrict) {
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    if (counts.size() < 2) throw InputError("batch_hard_mine: batch needs at least two distinct labels");
    for (const auto& [label, count] : counts)
      if (count < 2)
        throw InputError("batch_hard_mine: label " + std::to_string(label) + " occurs only once");
  }
  const Tensor sq = kernels::pairwise_sq_distances(embeddings, embeddings);
  MiningResult r;
  r.positive.assign(n, 0);
  r.negative.assign(n, 0);
  r.positive_distance.assign(n, 0.0);
  r.negative_distance.assign(n, 0.0);
  r.valid.assign(n, 0);
  for (std::size_t a = 0; a < n; ++a) {
    bool has_pos = false, has_neg = false;
    double best_pos = 0.0, best_neg = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      const double d = std::sqrt(sq[a * n + b]);
      if (labels[b] == labels[a]) {
        if (!has_pos || d > best_pos) {
          has_pos = true;
          best_pos = d;
          r.positive[a] = b;
        }
      } else if (!has_neg || d < best_neg) {
        has_neg = true;
        best_neg = d;
        r.negative[a] = b;
      }
    }
    r.positive_distance[a] = best_pos;
    r.negative_distance[a] = best_neg;
    r.valid[a] = has_pos && has_neg ? 1 : 0;
  }
  return r;
}

double hinge_triplet(const MiningResult& mining, double margin) {
  double sum = 0.0;
  const std::size_t count = mining.valid_count();
  for (std::size_t a = 0; a < mining.valid.size(); ++a)
    if (mining.valid[a])
      sum += std::max(0.0, margin + mining.positive_distance[a] - mining.negative_distance[a]);
  return count ? sum / double(count) : 0.0;
}

double softmax_triplet(const MiningResult& mining) {
  double sum = 0.0;
  const std::size_t count = mining.valid_count();
  for (std::size_t a = 0; a < mining.valid.size(); ++a)
    if (mining.valid[a]) sum += softplus(mining.positive_distance[a] - mining.negative_distance[a]);
  return count ? sum / double(count) : 0.0;
}

LossValue hinge_triplet_loss(const Tensor& embeddings, const MiningResult& mining, double margin) {
  LossValue out{hinge_triplet(mining, margin), Tensor(embeddings.shape())};
  const std::size_t count = mining.valid_count();
  if (count == 0) return out;
  for (std::size_t a = 0; a < mining.valid.size(); ++a) {
    if (!mining.valid[a]) continue;
    if (margin + mining.positive_distance[a] - mining.negative_distance[a] <= 0.0) continue;
    add_distance_grad(embeddings, a, mining.positive[a], mining.positive_distance[a], 1.0 / double(count), out.grad);
    add_distance_grad(embeddings, a, mining.negative[a], mining.negative_distance[a], -1.0 / double(count), out.grad);
  }
  return out;
}

LossValue softmax_triplet_loss(const Tensor& embeddings, const MiningResult& mining) {
  LossValue out{softmax_triplet(mining), Tensor(embeddings.shape())};
  const std::size_t count = mining.valid_count();
  if (count == 0) return out;
  for (std::size_t a = 0; a < mining.valid.size(); ++a) {
    if (!mining.valid[a]) continue;
    const double s = sigmoid(mining.positive_distance[a] - mining.negative_distance[a]) / double(count);
    add_distance_grad(embeddings, a, mining.positive[a], mining.positive_distance[a], s, out.grad);
    add_distance_grad(embeddings, a, mining.negative[a], mining.negative_distance[a], -s, out.grad);
  }
  return out;
}

double total_target_loss(double cls, double tri, std::span<const double> part_tri, const LossWeights& w) {
  double parts = 0.0;
  for (double v : part_tri) parts += v;
  return w.alpha * (cls + w.lambda * tri) + w.gamma * parts;
}

double source_loss(double cls, double tri, double lambda) { return cls + lambda * tri; }

}  // namespace lf2
