#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <tuple>

#include "lf2/losses.hpp"
#include "mining_oracle.hpp"
#include "test_util.hpp"

using namespace lf2;

namespace {

MiningResult hand_mining(double d_ap, double d_an) {
  MiningResult m;
  m.positive = {1};
  m.negative = {2};
  m.positive_distance = {d_ap};
  m.negative_distance = {d_an};
  m.valid = {1};
  return m;
}

std::vector<int> pk_labels(std::size_t p, std::size_t k) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) labels.push_back(static_cast<int>(i));
  return labels;
}

}  // namespace

TEST_CASE("cross entropy examples") {
  SUBCASE("uniform logits give ln M") {
    for (std::size_t m : {2u, 751u}) {
      const Tensor logits({3, m}, 0.25);
      const std::vector<int> labels{0, 1, static_cast<int>(m - 1)};
      CHECK(std::abs(cross_entropy(logits, labels).value - std::log(double(m))) < 1e-6);
    }
    CHECK(std::log(751.0) == doctest::Approx(6.6214).epsilon(1e-4));
  }
  SUBCASE("logits heavily favoring the label give ~0") {
    const std::vector<int> labels{0};
    CHECK(cross_entropy(Tensor({1, 2}, {1000, 0}), labels).value < 1e-12);
  }
  SUBCASE("M=2, logits (1, 0), label 0") {
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(expected == doctest::Approx(0.31326).epsilon(1e-5));
    const std::vector<int> labels{0};
    CHECK(cross_entropy(Tensor({1, 2}, {1, 0}), labels).value == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("label out of range is rejected") {
    const std::vector<int> bad{2};
    CHECK_THROWS_AS(cross_entropy(Tensor({1, 2}), bad), InputError);
    const std::vector<int> negative{-1};
    CHECK_THROWS_AS(cross_entropy(Tensor({1, 2}), negative), InputError);
  }
}

TEST_CASE("batch-hard mining examples") {
  SUBCASE("two identical pairs at distinct points") {
    const Tensor emb({4, 2}, {0, 0, 0, 0, 3, 4, 3, 4});
    const std::vector<int> labels{0, 0, 1, 1};
    const auto m = batch_hard_mine(emb, labels);
    for (std::size_t a = 0; a < 4; ++a) {
      CHECK(m.positive_distance[a] == 0.0);
      CHECK(m.negative_distance[a] == doctest::Approx(5.0));
    }
  }
  SUBCASE("ties go to the lowest index") {
    // All points equidistant from anchor 0 within each label group.
    const Tensor emb({6, 1}, {0, 1, -1, 2, -2, 2});
    const std::vector<int> labels{0, 0, 0, 1, 1, 1};
    const auto m = batch_hard_mine(emb, labels);
    CHECK(m.positive[0] == 1);
    CHECK(m.negative[0] == 3);
    const auto again = batch_hard_mine(emb, labels);
    CHECK(again.positive == m.positive);
    CHECK(again.negative == m.negative);
  }
  SUBCASE("precondition violations are rejected") {
    const Tensor emb({3, 1}, {0, 1, 2});
    const std::vector<int> singleton{0, 0, 1};
    CHECK_THROWS_AS(batch_hard_mine(emb, singleton), InputError);
    const std::vector<int> one_label{0, 0, 0};
    CHECK_THROWS_AS(batch_hard_mine(emb, one_label), InputError);
  }
  SUBCASE("skip policy marks unpaired anchors invalid") {
    const Tensor emb({3, 1}, {0, 1, 2});
    const std::vector<int> labels{0, 0, 1};
    const auto m = batch_hard_mine(emb, labels, MiningPolicy::kSkipUnpaired);
    CHECK(m.valid == std::vector<std::uint8_t>{1, 1, 0});
  }
}

TEST_CASE("batch-hard mining equals the exhaustive scan on random 16x4 batches") {
  std::mt19937_64 rng(2024);
  const auto labels = pk_labels(16, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor emb = testing::random_tensor({64, 8}, rng);
    const auto m = batch_hard_mine(emb, labels);
    const auto oracle = testing::exhaustive_mine(emb, labels);
    CHECK(m.positive == oracle.positive);
    CHECK(m.negative == oracle.negative);
  }
}

TEST_CASE("hinge triplet examples") {
  CHECK(hinge_triplet(hand_mining(0.1, 0.9), 0.3) == 0.0);
  CHECK(std::abs(hinge_triplet(hand_mining(0.5, 0.4), 0.3) - 0.4) < 1e-9);
  CHECK(hinge_triplet(hand_mining(0.7, 0.7), 0.0) == 0.0);
}

TEST_CASE("softmax triplet examples") {
  CHECK(std::abs(softmax_triplet(hand_mining(0.8, 0.8)) - std::log(2.0)) < 1e-6);
  CHECK(softmax_triplet(hand_mining(0.0, 60.0)) < 1e-20);
  const double expected = -std::log(1.0 / (1.0 + std::exp(1.0)));
  CHECK(expected == doctest::Approx(1.31326).epsilon(1e-5));
  CHECK(softmax_triplet(hand_mining(1.0, 0.0)) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss composition examples") {
  const std::vector<double> parts{0.4, 0.6};
  CHECK(total_target_loss(2.0, 1.0, parts, LossWeights{}) == 3.0);
  LossWeights baseline;
  baseline.gamma = 0.0;
  CHECK(total_target_loss(2.0, 1.0, parts, baseline) == 2.5);
  CHECK(total_target_loss(0.0, 0.0, std::vector<double>{0.0, 0.0}, LossWeights{}) == 0.0);
  CHECK(source_loss(1.0, 2.0, 0.5) == 2.0);
  CHECK(source_loss(1.25, 2.0, 0.0) == 1.25);
  CHECK(source_loss(0.0, 0.0, 0.5) == 0.0);
}

TEST_CASE("losses are non-negative and triplets are translation invariant") {
  std::mt19937_64 rng(7);
  const auto labels = pk_labels(4, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor emb = testing::random_tensor({12, 5}, rng, -2, 2);
    const Tensor logits = testing::random_tensor({12, 4}, rng, -3, 3);
    CHECK(cross_entropy(logits, labels).value >= 0.0);
    const auto m = batch_hard_mine(emb, labels);
    CHECK(hinge_triplet(m, 0.3) >= 0.0);
    CHECK(softmax_triplet(m) >= 0.0);

    Tensor moved = emb;
    const Tensor shift = testing::random_tensor({5}, rng, -10, 10);
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t d = 0; d < 5; ++d) moved.at(i, d) += shift[d];
    CHECK(hinge_triplet(batch_hard_mine(moved, labels), 0.3) ==
          doctest::Approx(hinge_triplet(m, 0.3)).epsilon(1e-9));
  }
}

TEST_CASE("loss gradients match central finite differences") {
  std::mt19937_64 rng(8);
  const auto labels = pk_labels(3, 3);
  const double step = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = testing::random_tensor({9, 4}, rng, -2, 2);
    const auto ce = cross_entropy(logits, labels);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double saved = logits[i];
      logits[i] = saved + step;
      const double up = cross_entropy(logits, labels).value;
      logits[i] = saved - step;
      const double down = cross_entropy(logits, labels).value;
      logits[i] = saved;
      CHECK(testing::relative_error(ce.grad[i], (up - down) / (2 * step), 1e-7) < 1e-4);
    }

    // Mined pairs are held fixed; small steps keep them unchanged anyway.
    Tensor emb = testing::random_tensor({9, 4}, rng, -2, 2);
    const auto mining = batch_hard_mine(emb, labels);
    const auto hinge = hinge_triplet_loss(emb, mining, 1.0);
    const auto soft = softmax_triplet_loss(emb, mining);
    for (std::size_t i = 0; i < emb.size(); ++i) {
      const double saved = emb[i];
      emb[i] = saved + step;
      const auto up_m = batch_hard_mine(emb, labels);
      const double up_h = hinge_triplet(up_m, 1.0), up_s = softmax_triplet(up_m);
      emb[i] = saved - step;
      const auto down_m = batch_hard_mine(emb, labels);
      const double down_h = hinge_triplet(down_m, 1.0), down_s = softmax_triplet(down_m);
      emb[i] = saved;
      CHECK(testing::relative_error(hinge.grad[i], (up_h - down_h) / (2 * step), 1e-7) < 1e-4);
      CHECK(testing::relative_error(soft.grad[i], (up_s - down_s) / (2 * step), 1e-7) < 1e-4);
    }
  }
}
