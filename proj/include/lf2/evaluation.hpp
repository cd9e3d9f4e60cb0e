#pragma once

// Teacher-only inference features and retrieval metrics (mAP, CMC).

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lf2/data.hpp"
#include "lf2/model.hpp"

namespace lf2 {

struct InferenceOptions {
  bool global_only = false;        // C-dimensional global feature only
  bool normalize_segments = true;  // L2-normalize each segment before concatenating
};

// [gap(map), gap(part 1), ..., gap(part K)] from the teacher encoder, one row
// per image: N x (K+1)*C, or N x C with global_only. Fusion parameters play
// no part.
Tensor inference_features(const Tensor& images, const ReidModel& teacher, const InferenceOptions& options = {});
// Single image (3 x H x W) -> vector.
EmbeddingVector inference_feature(const Tensor& image, const ReidModel& teacher,
                                  const InferenceOptions& options = {});
// Batched over a dataset.
Tensor dataset_features(const std::vector<Sample>& samples, const ReidModel& teacher,
                        const InferenceOptions& options = {});

struct RetrievalSet {
  const Tensor* features = nullptr;  // N x D
  std::span<const int> ids;
  std::span<const int> cameras;      // empty when unknown
};

struct RetrievalMetrics {
  double map = 0.0;
  double cmc1 = 0.0, cmc5 = 0.0, cmc10 = 0.0;
  std::size_t evaluated = 0;  // queries with at least one relevant item
  std::size_t skipped = 0;
};

// L2 ranking of the gallery for every query. When cameras are given, gallery
// items with the query's identity and camera are removed from the ranking.
// Queries with no relevant item left are skipped and counted. InputError on
// an empty gallery or mismatched dimensions.
RetrievalMetrics evaluate(const RetrievalSet& query, const RetrievalSet& gallery);

// Binary embedding file: magic "LF2EMB01", uint64 rows, uint64 dim, then per
// row int64 id, int64 camera (-1 if unknown), dim float32 values.
void export_embeddings(const std::filesystem::path& path, const Tensor& features, std::span<const int> ids,
                       std::span<const int> cameras);
struct EmbeddingFile {
  Tensor features;
  std::vector<int> ids, cameras;
};
EmbeddingFile import_embeddings(const std::filesystem::path& path);

}  // namespace lf2
