#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "lf2/errors.hpp"
#include "lf2/evaluation.hpp"
#include "lf2/training.hpp"
#include "retrieval_oracle.hpp"
#include "test_util.hpp"

using namespace lf2;

namespace {

Tensor rows(std::initializer_list<std::initializer_list<double>> values) {
  Tensor t({values.size(), values.begin()->size()});
  std::size_t i = 0;
  for (const auto& r : values)
    for (double v : r) t[i++] = v;
  return t;
}

RetrievalMetrics run(const Tensor& q, std::vector<int> qid, const Tensor& g, std::vector<int> gid,
                     std::vector<int> qcam = {}, std::vector<int> gcam = {}) {
  return evaluate({&q, qid, qcam}, {&g, gid, gcam});
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.encoder.input_height = 32;
  mc.encoder.input_width = 16;
  mc.encoder.widths = {8, 8, 8, 8};
  mc.parts = 2;
  mc.classes = 3;
  return mc;
}

}  // namespace

TEST_CASE("AP and CMC hand examples") {
  SUBCASE("only relevant item first") {
    const auto m = run(rows({{0.0}}), {1}, rows({{0.1}, {2.0}}), {1, 2});
    CHECK(m.map == 1.0);
    CHECK(m.cmc1 == 1.0);
  }
  SUBCASE("relevant at ranks 1 and 3") {
    const auto m = run(rows({{0.0}}), {1}, rows({{0.1}, {0.2}, {0.3}}), {1, 2, 1});
    CHECK(m.map == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    CHECK(std::abs(m.map - 0.8333) < 1e-4);
  }
  SUBCASE("relevant at rank 2") {
    const auto m = run(rows({{0.0}}), {1}, rows({{0.1}, {0.2}, {0.3}}), {2, 1, 3});
    CHECK(m.cmc1 == 0.0);
    CHECK(m.cmc5 == 1.0);
    CHECK(m.map == 0.5);
  }
}

TEST_CASE("same-camera matches are excluded and unmatched queries skipped") {
  const Tensor q = rows({{0.0}, {5.0}});
  const Tensor g = rows({{0.0}, {1.0}, {2.0}});
  // Query 0 (id 1, cam 0): gallery 0 is the same id and camera and must vanish.
  // Query 1 (id 9) has no relevant item.
  const auto m = run(q, {1, 9}, g, {1, 2, 1}, {0, 0}, {0, 1, 1});
  CHECK(m.evaluated == 1);
  CHECK(m.skipped == 1);
  CHECK(m.map == 0.5);
  CHECK(m.cmc1 == 0.0);
  // Without cameras the same-camera item counts.
  const auto open = run(q, {1, 9}, g, {1, 2, 1});
  CHECK(open.cmc1 == 1.0);
}

TEST_CASE("evaluate rejects bad inputs") {
  const Tensor q = rows({{0.0, 1.0}});
  CHECK_THROWS_AS(run(q, {1}, Tensor({0, 2}), {}), InputError);
  CHECK_THROWS_AS(run(q, {1}, rows({{0.0}}), {1}), InputError);
  CHECK_THROWS_AS(run(q, {1, 2}, rows({{0.0, 1.0}}), {1}), InputError);
}

TEST_CASE("evaluate matches the brute-force oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    CAPTURE(trial);
    std::uniform_int_distribution<std::size_t> ng_dist(1, 20), nq_dist(1, 5), dim_dist(1, 6);
    std::uniform_int_distribution<int> id_dist(0, 4), cam_dist(0, 2);
    const std::size_t ng = ng_dist(rng), nq = nq_dist(rng), dim = dim_dist(rng);
    const Tensor q = testing::random_tensor({nq, dim}, rng), g = testing::random_tensor({ng, dim}, rng);
    std::vector<int> qid(nq), gid(ng), qcam, gcam;
    for (auto& v : qid) v = id_dist(rng);
    for (auto& v : gid) v = id_dist(rng);
    if (trial % 2) {
      for (std::size_t i = 0; i < nq; ++i) qcam.push_back(cam_dist(rng));
      for (std::size_t i = 0; i < ng; ++i) gcam.push_back(cam_dist(rng));
    }
    const auto got = run(q, qid, g, gid, qcam, gcam);
    const auto want = testing::oracle_metrics(q, qid, qcam, g, gid, gcam);
    CHECK(got.evaluated == want.evaluated);
    CHECK(got.skipped == want.skipped);
    CHECK(std::abs(got.map - want.map) <= 1e-9);
    CHECK(std::abs(got.cmc1 - want.cmc1) <= 1e-9);
    CHECK(std::abs(got.cmc5 - want.cmc5) <= 1e-9);
    CHECK(std::abs(got.cmc10 - want.cmc10) <= 1e-9);
    CHECK(got.cmc1 <= got.cmc5);
    CHECK(got.cmc5 <= got.cmc10);
    CHECK(got.map >= 0.0);
    CHECK(got.map <= 1.0);
  }
}

TEST_CASE("metrics are invariant under a joint orthogonal transform") {
  std::mt19937_64 rng(8);
  const std::size_t d = 5;
  // Gram-Schmidt on a random matrix.
  Tensor basis = testing::random_tensor({d, d}, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      double p = 0.0;
      for (std::size_t c = 0; c < d; ++c) p += basis[i * d + c] * basis[k * d + c];
      for (std::size_t c = 0; c < d; ++c) basis[i * d + c] -= p * basis[k * d + c];
    }
    double n = 0.0;
    for (std::size_t c = 0; c < d; ++c) n += basis[i * d + c] * basis[i * d + c];
    for (std::size_t c = 0; c < d; ++c) basis[i * d + c] /= std::sqrt(n);
  }
  auto rotate = [&](const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t r = 0; r < x.dim(0); ++r)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t c = 0; c < d; ++c) y[r * d + i] += basis[i * d + c] * x[r * d + c];
    return y;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor q = testing::random_tensor({4, d}, rng), g = testing::random_tensor({15, d}, rng);
    std::vector<int> qid{0, 1, 2, 3}, gid;
    for (int i = 0; i < 15; ++i) gid.push_back(i % 4);
    const auto a = run(q, qid, g, gid), b = run(rotate(q), qid, rotate(g), gid);
    CHECK(std::abs(a.map - b.map) < 1e-12);
    CHECK(a.cmc1 == b.cmc1);
    CHECK(a.cmc5 == b.cmc5);
  }
}

TEST_CASE("inference features") {
  const ModelConfig mc = tiny_model();
  const ReidModel teacher(mc, 3);
  const auto samples = synth_generate(3, 2, DomainStyle::source(), 5, {32, 16});
  const Tensor f = dataset_features(samples, teacher);
  CHECK(f.dim(1) == 3 * 8);
  CHECK(dataset_features(samples, teacher, {true, true}).dim(1) == 8);

  SUBCASE("each segment has unit norm") {
    for (std::size_t s = 0; s < 3; ++s) {
      double n = 0.0;
      for (std::size_t c = 0; c < 8; ++c) n += f[s * 8 + c] * f[s * 8 + c];
      CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("single image matches the batch row") {
    const Tensor one = inference_feature(samples[4].image, teacher);
    for (std::size_t c = 0; c < 24; ++c) CHECK(one[c] == doctest::Approx(f[4 * 24 + c]).epsilon(1e-12));
  }
  SUBCASE("fusion parameters play no part") {
    TrainConfig config;
    config.model = mc;
    config.reduction = 4;
    FinetuneState state = init_finetune(teacher, config);
    const Tensor before = dataset_features(samples, state.teacher);
    for (auto& [name, t] : state.fusion.state())
      for (double& v : t.values()) v = v * 3.0 + 1.0;
    const Tensor after = dataset_features(samples, state.teacher);
    CHECK(before == after);
  }
  SUBCASE("constant teacher map gives identical segments") {
    ReidModel flat = teacher;
    std::string last;
    for (const auto& [name, t] : flat.state())
      if (name.ends_with(".conv.weight")) last = name.substr(0, name.size() - std::string(".conv.weight").size());
    for (double& v : flat.state()[last + ".conv.weight"].values()) v = 0.0;
    for (double& v : flat.state()[last + ".bn.bias"].values()) v = 0.7;
    const Tensor c = dataset_features(samples, flat);
    for (std::size_t k = 0; k < 24; ++k) CHECK(c[k] == doctest::Approx(1.0 / std::sqrt(8.0)).epsilon(1e-12));
  }
}

TEST_CASE("embedding export round trip") {
  std::mt19937_64 rng(1);
  const Tensor f = testing::random_tensor({7, 24}, rng);
  const std::vector<int> ids{0, 1, 2, 3, 4, 5, 6}, cams{0, 1, 0, 1, 0, 1, 0};
  const auto path = std::filesystem::temp_directory_path() / "lf2_test_embeddings.bin";
  export_embeddings(path, f, ids, cams);
  const EmbeddingFile back = import_embeddings(path);
  CHECK(back.features.dim(0) == 7);
  CHECK(back.features.dim(1) == 24);
  CHECK(back.ids == ids);
  CHECK(back.cameras == cams);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(back.features[i] == double(float(f[i])));
  export_embeddings(path, f, ids, {});
  CHECK(import_embeddings(path).cameras == std::vector<int>(7, -1));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(import_embeddings(path), InputError);
}
