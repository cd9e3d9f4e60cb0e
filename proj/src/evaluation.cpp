#include "lf2/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "lf2/errors.hpp"
#include "lf2/kernels.hpp"

namespace lf2 {
namespace {

constexpr char kMagic[8] = {'L', 'F', '2', 'E', 'M', 'B', '0', '1'};
constexpr std::size_t kChunk = 64;

void normalize_segment(double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  if (s <= 0.0) return;
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t i = 0; i < n; ++i) v[i] *= inv;
}

}  // namespace

Tensor inference_features(const Tensor& images, const ReidModel& teacher, const InferenceOptions& options) {
  const FeatureMap map = teacher.encode(images);
  const std::size_t n = map.dim(0), c = map.dim(1);
  std::vector<Tensor> segments{gap(map)};
  if (!options.global_only)
    for (const auto& part : partition(map, teacher.config().parts)) segments.push_back(gap(part));
  Tensor out({n, segments.size() * c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < segments.size(); ++s) {
      double* dst = out.data() + i * out.dim(1) + s * c;
      std::copy_n(segments[s].data() + i * c, c, dst);
      if (options.normalize_segments) normalize_segment(dst, c);
    }
  return out;
}

EmbeddingVector inference_feature(const Tensor& image, const ReidModel& teacher, const InferenceOptions& options) {
  if (image.rank() != 3) throw InputError("inference_feature: expected a 3 x H x W image");
  Shape batched{1};
  batched.insert(batched.end(), image.shape().begin(), image.shape().end());
  Tensor batch = image;
  batch.reshape(batched);
  Tensor row = inference_features(batch, teacher, options);
  row.reshape({row.size()});
  return row;
}

Tensor dataset_features(const std::vector<Sample>& samples, const ReidModel& teacher, const InferenceOptions& options) {
  if (samples.empty()) throw InputError("dataset_features: no samples");
  Tensor out;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor f = inference_features(stack_images(samples, idx), teacher, options);
    if (out.empty()) out = Tensor({samples.size(), f.dim(1)});
    std::copy_n(f.data(), f.size(), out.data() + begin * f.dim(1));
  }
  return out;
}

RetrievalMetrics evaluate(const RetrievalSet& query, const RetrievalSet& gallery) {
  if (!query.features || !gallery.features) throw InputError("evaluate: missing features");
  const Tensor& q = *query.features;
  const Tensor& g = *gallery.features;
  if (g.rank() != 2 || g.dim(0) == 0) throw InputError("evaluate: empty gallery");
  if (q.rank() != 2 || q.dim(1) != g.dim(1))
    throw InputError("evaluate: query " + shape_string(q.shape()) + " and gallery " + shape_string(g.shape()) +
                     " dimensions differ");
  if (query.ids.size() != q.dim(0) || gallery.ids.size() != g.dim(0))
    throw InputError("evaluate: identity arrays do not match feature rows");
  const bool cams = !query.cameras.empty() && !gallery.cameras.empty();
  if (cams && (query.cameras.size() != q.dim(0) || gallery.cameras.size() != g.dim(0)))
    throw InputError("evaluate: camera arrays do not match feature rows");

  const Tensor dist = kernels::pairwise_sq_distances(q, g);
  const std::size_t nq = q.dim(0), ng = g.dim(0);
  std::vector<double> ap(nq, -1.0);
  std::vector<std::size_t> first_hit(nq, 0);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<std::size_t> order;
    order.reserve(ng);
    for (std::size_t j = 0; j < ng; ++j) {
      if (cams && gallery.ids[j] == query.ids[i] && gallery.cameras[j] == query.cameras[i]) continue;
      order.push_back(j);
    }
    const double* row = dist.data() + i * ng;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    std::size_t hits = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery.ids[order[r]] != query.ids[i]) continue;
      if (hits == 0) first_hit[i] = r;
      ++hits;
      precision_sum += double(hits) / double(r + 1);
    }
    if (hits > 0) ap[i] = precision_sum / double(hits);
  }

  RetrievalMetrics m;
  for (std::size_t i = 0; i < nq; ++i) {
    if (ap[i] < 0.0) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    m.map += ap[i];
    m.cmc1 += first_hit[i] < 1;
    m.cmc5 += first_hit[i] < 5;
    m.cmc10 += first_hit[i] < 10;
  }
  if (m.evaluated > 0) {
    const double n = double(m.evaluated);
    m.map /= n;
    m.cmc1 /= n;
    m.cmc5 /= n;
    m.cmc10 /= n;
  }
  return m;
}

void export_embeddings(const std::filesystem::path& path, const Tensor& features, std::span<const int> ids,
                       std::span<const int> cameras) {
  if (features.rank() != 2 || ids.size() != features.dim(0) || (!cameras.empty() && cameras.size() != ids.size()))
    throw InputError("export_embeddings: rows, ids and cameras disagree");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const std::uint64_t rows = features.dim(0), dim = features.dim(1);
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  std::vector<float> buffer(dim);
  for (std::uint64_t i = 0; i < rows; ++i) {
    const std::int64_t id = ids[i], cam = cameras.empty() ? -1 : cameras[i];
    out.write(reinterpret_cast<const char*>(&id), sizeof id);
    out.write(reinterpret_cast<const char*>(&cam), sizeof cam);
    for (std::uint64_t d = 0; d < dim; ++d) buffer[d] = float(features[i * dim + d]);
    out.write(reinterpret_cast<const char*>(buffer.data()), std::streamsize(dim * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

EmbeddingFile import_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8];
  std::uint64_t rows = 0, dim = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&dim), sizeof dim);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InputError(path.string() + " is not an embedding file");
  EmbeddingFile f{Tensor({rows, dim}), {}, {}};
  std::vector<float> buffer(dim);
  for (std::uint64_t i = 0; i < rows; ++i) {
    std::int64_t id = 0, cam = 0;
    in.read(reinterpret_cast<char*>(&id), sizeof id);
    in.read(reinterpret_cast<char*>(&cam), sizeof cam);
    in.read(reinterpret_cast<char*>(buffer.data()), std::streamsize(dim * sizeof(float)));
    if (!in) throw InputError(path.string() + " is truncated");
    f.ids.push_back(int(id));
    f.cameras.push_back(int(cam));
    for (std::uint64_t d = 0; d < dim; ++d) f.features[i * dim + d] = buffer[d];
  }
  return f;
}

}  // namespace lf2
