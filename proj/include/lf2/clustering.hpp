#pragma once

// K-means pseudo-labelling over the global view and every fusion view, plus
// the adjusted Rand index used to measure how consistent the views are.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lf2/tensor.hpp"

namespace lf2 {

struct ClusterConfig {
  std::size_t clusters = 32;  // shared by every view
  std::size_t max_iterations = 300;
  std::size_t restarts = 10;
  std::uint64_t seed = 0;
  bool normalize = true;  // L2-normalize rows before clustering
};

struct KMeansResult {
  std::vector<int> labels;
  Tensor centroids;  // k x d
  double sse = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm with k-means++ seeding; best of `config.restarts` runs by
// SSE. Empty clusters are refilled with the point farthest from its centroid.
// Ties in assignment go to the lowest centroid index. InputError if k is 0 or
// exceeds the number of rows.
KMeansResult kmeans(const Tensor& vectors, std::size_t k, const ClusterConfig& config);

// Returns a copy whose rows have unit L2 norm (zero rows stay zero).
Tensor l2_normalize_rows(const Tensor& vectors);

struct PseudoLabelSets {
  // views[j][i] = label of sample i from view j; view 0 is the global view.
  std::vector<std::vector<int>> views;
  std::vector<std::size_t> clusters;

  std::size_t samples() const { return views.empty() ? 0 : views.front().size(); }
};

// Clusters the global features and each per-part fusion feature set (all
// N x C, same sample order) with the same cluster count.
PseudoLabelSets build_pseudo_datasets(const Tensor& global, const std::vector<Tensor>& fusion,
                                      const ClusterConfig& config);

// Adjusted Rand index of two labelings of the same samples. InputError on a
// length mismatch or fewer than two samples.
double consistency_ari(std::span<const int> a, std::span<const int> b);

struct ClusterSizeSummary {
  std::size_t min = 0, max = 0, singletons = 0;
  double mean = 0.0;
};
ClusterSizeSummary summarize_cluster_sizes(std::span<const int> labels);

}  // namespace lf2
