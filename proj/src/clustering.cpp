#include "lf2/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

#include "lf2/errors.hpp"
#include "lf2/kernels.hpp"

namespace lf2 {
namespace {

using Rng = std::mt19937_64;

// Index of the nearest centroid per row (lowest index on ties) and the
// squared distance to it.
void assign(const Tensor& vectors, const Tensor& centroids, std::vector<int>& labels,
            std::vector<double>& dist) {
  const Tensor d = kernels::pairwise_sq_distances(vectors, centroids);
  const std::size_t n = vectors.dim(0), k = centroids.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (d[i * k + c] < d[i * k + best]) best = c;
    labels[i] = static_cast<int>(best);
    dist[i] = d[i * k + best];
  }
}

Tensor seed_plus_plus(const Tensor& vectors, std::size_t k, Rng& rng) {
  const std::size_t n = vectors.dim(0), dim = vectors.dim(1);
  Tensor centroids({k, dim});
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(vectors.data() + pick * dim, dim, centroids.data() + c * dim);
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = vectors[i * dim + t] - centroids[c * dim + t];
        s += diff * diff;
      }
      mind[i] = std::min(mind[i], s);
      total += mind[i];
    }
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= mind[i];
        if (target < 0.0 && mind[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
  }
  return centroids;
}

void update_centroids(const Tensor& vectors, const std::vector<int>& labels, Tensor& centroids,
                      std::vector<std::size_t>& counts) {
  const std::size_t dim = vectors.dim(1), k = centroids.dim(0);
  std::vector<double> sums(k * dim, 0.0);
  counts.assign(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t t = 0; t < dim; ++t) sums[c * dim + t] += vectors[i * dim + t];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t t = 0; t < dim; ++t) centroids[c * dim + t] = sums[c * dim + t] / double(counts[c]);
  }
}

// Moves the farthest point of a multi-member cluster into each empty cluster.
// Returns true if anything changed.
bool repair_empty(const Tensor& vectors, std::vector<int>& labels, std::vector<double>& dist,
                  Tensor& centroids, std::vector<std::size_t>& counts) {
  const std::size_t dim = vectors.dim(1);
  bool changed = false;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = labels.size();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (counts[static_cast<std::size_t>(labels[i])] < 2) continue;
      if (far == labels.size() || dist[i] > dist[far]) far = i;
    }
    if (far == labels.size()) break;
    --counts[static_cast<std::size_t>(labels[far])];
    labels[far] = static_cast<int>(c);
    counts[c] = 1;
    dist[far] = 0.0;
    std::copy_n(vectors.data() + far * dim, dim, centroids.data() + c * dim);
    changed = true;
  }
  return changed;
}

KMeansResult lloyd(const Tensor& vectors, Tensor centroids, std::size_t max_iterations) {
  const std::size_t n = vectors.dim(0);
  KMeansResult r;
  r.labels.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<std::size_t> counts;
  assign(vectors, centroids, r.labels, dist);
  std::vector<int> previous;
  for (r.iterations = 1; r.iterations <= max_iterations; ++r.iterations) {
    update_centroids(vectors, r.labels, centroids, counts);
    if (repair_empty(vectors, r.labels, dist, centroids, counts))
      update_centroids(vectors, r.labels, centroids, counts);
    previous = r.labels;
    assign(vectors, centroids, r.labels, dist);
    if (r.labels == previous) {
      r.converged = true;
      break;
    }
  }
  r.centroids = std::move(centroids);
  r.sse = 0.0;
  for (double d : dist) r.sse += d;
  return r;
}

}  // namespace

KMeansResult kmeans(const Tensor& vectors, std::size_t k, const ClusterConfig& config) {
  if (vectors.rank() != 2 || vectors.dim(0) == 0)
    throw InputError("kmeans: expected a non-empty n x d matrix, got " + shape_string(vectors.shape()));
  if (k == 0 || k > vectors.dim(0))
    throw InputError("kmeans: cannot form " + std::to_string(k) + " clusters from " +
                     std::to_string(vectors.dim(0)) + " samples");
  if (!vectors.all_finite()) throw InputError("kmeans: non-finite feature values");
  KMeansResult best;
  bool have = false;
  const std::size_t restarts = std::max<std::size_t>(config.restarts, 1);
  for (std::size_t run = 0; run < restarts; ++run) {
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(run)};
    Rng rng(seq);
    KMeansResult r = lloyd(vectors, seed_plus_plus(vectors, k, rng), config.max_iterations);
    if (!have || r.sse < best.sse) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

Tensor l2_normalize_rows(const Tensor& vectors) {
  Tensor out = vectors;
  const std::size_t n = vectors.dim(0), d = vectors.size() / std::max<std::size_t>(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += out[i * d + t] * out[i * d + t];
    if (s <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t t = 0; t < d; ++t) out[i * d + t] *= inv;
  }
  return out;
}

PseudoLabelSets build_pseudo_datasets(const Tensor& global, const std::vector<Tensor>& fusion,
                                      const ClusterConfig& config) {
  PseudoLabelSets out;
  std::vector<const Tensor*> views{&global};
  for (const auto& f : fusion) views.push_back(&f);
  for (const Tensor* v : views) {
    if (v->rank() != 2 || v->dim(0) != global.dim(0))
      throw InputError("build_pseudo_datasets: view " + shape_string(v->shape()) +
                       " is not aligned with the global features " + shape_string(global.shape()));
    const KMeansResult r = kmeans(config.normalize ? l2_normalize_rows(*v) : *v, config.clusters, config);
    out.views.push_back(r.labels);
    out.clusters.push_back(config.clusters);
  }
  return out;
}

double consistency_ari(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size())
    throw InputError("consistency_ari: labelings have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " entries");
  if (a.size() < 2) throw InputError("consistency_ari: need at least two samples");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  const auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, n] : joint) index += pairs(n);
  for (const auto& [key, n] : rows) sum_rows += pairs(n);
  for (const auto& [key, n] : cols) sum_cols += pairs(n);
  const double expected = sum_rows * sum_cols / pairs(double(a.size()));
  const double maximum = 0.5 * (sum_rows + sum_cols);
  // Both labelings trivial (all one cluster or all singletons) and identical.
  if (maximum == expected) return 1.0;
  return (index - expected) / (maximum - expected);
}

ClusterSizeSummary summarize_cluster_sizes(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  ClusterSizeSummary s;
  if (counts.empty()) return s;
  s.min = labels.size();
  for (const auto& [label, n] : counts) {
    s.min = std::min(s.min, n);
    s.max = std::max(s.max, n);
    if (n == 1) ++s.singletons;
  }
  s.mean = double(labels.size()) / double(counts.size());
  return s;
}

}  // namespace lf2
