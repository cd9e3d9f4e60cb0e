#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lf2/model.hpp"
#include "test_util.hpp"

using namespace lf2;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.encoder.input_height = 16;
  cfg.encoder.input_width = 8;
  cfg.encoder.widths = {4, 6};
  cfg.parts = 2;
  cfg.classes = 3;
  return cfg;
}

// Independent per-channel mean over the batch axis.
std::vector<double> column_means(const Tensor& batch) {
  std::vector<double> m(batch.dim(1), 0.0);
  for (std::size_t i = 0; i < batch.dim(0); ++i)
    for (std::size_t c = 0; c < batch.dim(1); ++c) m[c] += batch.at(i, c);
  for (double& v : m) v /= double(batch.dim(0));
  return m;
}

}  // namespace

TEST_CASE("default encoder maps a 3x64x32 image to a 128x8x4 feature map") {
  ModelConfig cfg;
  cfg.encoder.widths = {32, 64, 128, 128};
  ReidModel model(cfg, 1);
  CHECK(cfg.encoder.channels() == 128);
  CHECK(cfg.encoder.feature_height() == 8);
  CHECK(cfg.encoder.feature_width() == 4);
  std::mt19937_64 rng(2);
  const FeatureMap map = encode(testing::random_tensor({3, 64, 32}, rng, 0.0, 1.0), model);
  CHECK(map.shape() == Shape{128, 8, 4});
  CHECK(map.all_finite());
}

TEST_CASE("encode: zero image on a fresh encoder gives an all-zero map") {
  ReidModel model(small_config(), 4);
  const FeatureMap map = encode(Tensor({3, 16, 8}), model);
  for (double v : map.values()) CHECK(v == 0.0);
}

TEST_CASE("encode is deterministic in inference mode and rejects mismatched shapes") {
  ReidModel model(small_config(), 4);
  std::mt19937_64 rng(9);
  const Tensor image = testing::random_tensor({3, 16, 8}, rng, 0.0, 1.0);
  CHECK(encode(image, model) == encode(image, model));
  CHECK_THROWS_AS(encode(Tensor({3, 16, 9}), model), InputError);
  CHECK_THROWS_AS(encode(Tensor({1, 16, 8}), model), InputError);
}

TEST_CASE("encoder config rejects heights not divisible by the part count") {
  EncoderConfig enc;
  enc.input_height = 64;
  enc.widths = {8, 8, 8, 8};
  CHECK_NOTHROW(enc.validate(2));
  CHECK_THROWS_AS(enc.validate(3), ConfigError);
}

TEST_CASE("partition splits height top to bottom") {
  std::mt19937_64 rng(1);
  SUBCASE("2048x16x8 with K=2") {
    const FeatureMap map({2048, 16, 8});
    const auto parts = partition(map, 2);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].shape() == Shape{2048, 8, 8});
    CHECK(parts[1].shape() == Shape{2048, 8, 8});
  }
  SUBCASE("K=1 is the identity") {
    const FeatureMap map = testing::random_tensor({5, 6, 3}, rng);
    const auto parts = partition(map, 1);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0] == map);
  }
  SUBCASE("part 0 holds rows 0-3 and part 1 rows 4-7") {
    const FeatureMap map = testing::random_tensor({128, 8, 4}, rng);
    const auto parts = partition(map, 2);
    for (std::size_t c = 0; c < 128; ++c)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w) {
          CHECK(parts[0].at(c, h, w) == map.at(c, h, w));
          CHECK(parts[1].at(c, h, w) == map.at(c, h + 4, w));
        }
  }
  SUBCASE("indivisible height is a configuration error") {
    CHECK_THROWS_AS(partition(FeatureMap({2, 5, 2}), 2), ConfigError);
  }
}

TEST_CASE("partition properties: concat is identity and part means average to the global mean") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t parts = 1 + rng() % 4;
    const std::size_t h = parts * (1 + rng() % 3);
    const FeatureMap map = testing::random_tensor({1 + rng() % 5, h, 1 + rng() % 4}, rng);
    const auto split = partition(map, parts);
    CHECK(concat_height(split) == map);
    const EmbeddingVector global = gap(map);
    for (std::size_t c = 0; c < global.size(); ++c) {
      double avg = 0.0;
      for (const auto& p : split) avg += gap(p)[c];
      CHECK(avg / double(parts) == doctest::Approx(global[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gap examples") {
  CHECK(gap(FeatureMap({3, 2, 2}, 1.5)) == Tensor({3}, 1.5));
  CHECK(gap(FeatureMap({1, 2, 2}, {1, 2, 3, 5}))[0] == doctest::Approx(2.75));
  const FeatureMap column({4, 1, 1}, {1, -2, 3, 0.5});
  CHECK(gap(column) == Tensor({4}, {1, -2, 3, 0.5}));
}

TEST_CASE("expert_forward examples") {
  std::mt19937_64 rng(7);
  SUBCASE("identity head in inference mode is the identity") {
    ExpertHead head = ExpertHead::identity(6);
    const EmbeddingVector v = testing::random_tensor({6}, rng);
    CHECK(testing::max_abs_diff(expert_forward(v, head, false), v) < 1e-5);  // eps in the BN denominator
  }
  SUBCASE("zero input, zero bias, zero shift gives zero") {
    ExpertHead head = ExpertHead::identity(4);
    head.weight = testing::random_tensor({4, 4}, rng);
    CHECK(expert_forward(Tensor({4}), head, false) == Tensor({4}));
  }
  SUBCASE("training mode output has per-channel batch mean equal to the shift") {
    ExpertHead head = ExpertHead::identity(8);
    head.weight = testing::random_tensor({8, 8}, rng);
    head.bias = testing::random_tensor({8}, rng);
    head.scale = testing::random_tensor({8}, rng, 0.5, 2.0);
    head.shift = testing::random_tensor({8}, rng);
    const Tensor out = expert_forward(testing::random_tensor({32, 8}, rng), head, true);
    const auto means = column_means(out);
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(means[c] - head.shift[c]) < 1e-6);
    // Running statistics moved away from their initial values.
    CHECK(head.running_mean != Tensor({8}));
  }
  SUBCASE("non-positive running variance is an internal-state error") {
    ExpertHead head = ExpertHead::identity(3);
    head.running_var[1] = 0.0;
    CHECK_THROWS_AS(expert_forward(Tensor({3}), head, false), StateError);
  }
}

TEST_CASE("expert_forward in inference mode is affine (superposition)") {
  std::mt19937_64 rng(8);
  ExpertHead head = ExpertHead::identity(5);
  head.weight = testing::random_tensor({5, 5}, rng);
  head.bias = testing::random_tensor({5}, rng);
  head.running_mean = testing::random_tensor({5}, rng);
  head.running_var = testing::random_tensor({5}, rng, 0.5, 2.0);
  head.shift = testing::random_tensor({5}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = testing::random_tensor({5}, rng), y = testing::random_tensor({5}, rng);
    const double a = 0.3, b = 0.7;  // a + b == 1 keeps the affine offset
    Tensor mix({5});
    for (std::size_t i = 0; i < 5; ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor fx = expert_forward(x, head, false), fy = expert_forward(y, head, false);
    const Tensor fm = expert_forward(mix, head, false);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(fm[i] - (a * fx[i] + b * fy[i])) < 1e-6);
  }
}

TEST_CASE("classify examples") {
  std::mt19937_64 rng(3);
  ClassifierHead head{testing::random_tensor({4, 3}, rng), Tensor({4})};
  CHECK(classify(Tensor({3}), head) == Tensor({4}));
  ClassifierHead eye{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  CHECK(classify(Tensor({2}, {3, -1}), eye) == Tensor({2}, {3, -1}));

  head.bias = testing::random_tensor({4}, rng);
  const EmbeddingVector v = testing::random_tensor({3}, rng);
  const Tensor logits = classify(v, head);
  ClassifierHead shifted = head;
  for (double& b : shifted.bias.values()) b += 5.0;
  const Tensor logits2 = classify(v, shifted);
  const auto argmax = [](const Tensor& t) {
    return std::max_element(t.values().begin(), t.values().end()) - t.values().begin();
  };
  CHECK(argmax(logits) == argmax(logits2));
}

TEST_CASE("model backward matches central finite differences") {
  ReidModel model(small_config(), 17);
  std::mt19937_64 rng(23);
  const Tensor images = testing::random_tensor({4, 3, 16, 8}, rng, 0.0, 1.0);

  auto probe = model.forward_train(images);
  // Random linear functional of every branch output.
  const Tensor r_global = testing::random_tensor(probe.global.shape(), rng);
  const Tensor r_logits = testing::random_tensor(probe.logits.shape(), rng);
  std::vector<Tensor> r_local, r_pooled;
  for (std::size_t j = 0; j < 2; ++j) {
    r_local.push_back(testing::random_tensor(probe.local[j].shape(), rng));
    r_pooled.push_back(testing::random_tensor(probe.pooled[j].shape(), rng));
  }
  auto objective = [&](ReidModel& m) {
    const auto out = m.forward_train(images);
    double s = testing::dot(out.global, r_global) + testing::dot(out.logits, r_logits);
    for (std::size_t j = 0; j < 2; ++j)
      s += testing::dot(out.local[j], r_local[j]) + testing::dot(out.pooled[j], r_pooled[j]);
    return s;
  };

  model.zero_grad();
  model.backward(probe, {r_global, r_pooled, r_local, r_logits});

  const double step = 1e-5;
  for (auto& [name, value] : model.state()) {
    if (is_buffer(name)) continue;
    const Tensor& grad = model.grads().at(name);
    for (int probe_idx = 0; probe_idx < 3; ++probe_idx) {
      const std::size_t i = rng() % value.size();
      const double saved = value[i];
      value[i] = saved + step;
      const double up = objective(model);
      value[i] = saved - step;
      const double down = objective(model);
      value[i] = saved;
      const double fd = (up - down) / (2 * step);
      INFO(name << "[" << i << "] analytic " << grad[i] << " numeric " << fd);
      CHECK(testing::relative_error(grad[i], fd, 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("load_state rejects mismatched layouts") {
  ReidModel a(small_config(), 1);
  auto cfg = small_config();
  cfg.encoder.widths = {4, 8};
  ReidModel b(cfg, 1);
  CHECK_THROWS_AS(a.load_state(b.state()), InputError);
  CHECK_NOTHROW(a.load_state(ReidModel(small_config(), 2).state()));
}
