#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lf2/mean_teacher.hpp"
#include "test_util.hpp"

using namespace lf2;

namespace {

ModelState random_state(std::mt19937_64& rng) {
  return ModelState{{"a.weight", testing::random_tensor({3, 4}, rng)},
                    {"a.bn.running_var", testing::random_tensor({4}, rng, 0.5, 1.5)},
                    {"b.bias", testing::random_tensor({2}, rng)}};
}

}  // namespace

TEST_CASE("init_teacher is a deep copy") {
  std::mt19937_64 rng(1);
  ModelState student = random_state(rng);
  const ModelState teacher = init_teacher(student);
  CHECK(teacher == student);
  student["a.weight"][0] += 1.0;
  CHECK(teacher.at("a.weight") != student.at("a.weight"));
  CHECK(teacher.size() == student.size());
}

TEST_CASE("ema_update examples") {
  std::mt19937_64 rng(2);
  SUBCASE("momentum 0 copies the student") {
    ModelState teacher = random_state(rng);
    const ModelState student = random_state(rng);
    ema_update(teacher, student, 0.0);
    CHECK(teacher == student);
  }
  SUBCASE("scalar arithmetic with momentum 0.999") {
    ModelState teacher{{"w", Tensor({1}, 1.0)}};
    ema_update(teacher, ModelState{{"w", Tensor({1}, 0.0)}}, 0.999);
    CHECK(teacher.at("w")[0] == doctest::Approx(0.999).epsilon(1e-15));
  }
  SUBCASE("constant student follows the closed-form geometric recursion") {
    const double w = 0.9;
    ModelState teacher{{"w", Tensor({1}, 2.0)}};
    const ModelState student{{"w", Tensor({1}, -1.0)}};
    for (int n = 1; n <= 40; ++n) {
      ema_update(teacher, student, w);
      const double closed = -1.0 + std::pow(w, n) * (2.0 - (-1.0));
      CHECK(std::abs(teacher.at("w")[0] - closed) < 1e-12);
    }
  }
}

TEST_CASE("ema_update rejects bad momentum and mismatched layouts") {
  std::mt19937_64 rng(3);
  ModelState teacher = random_state(rng);
  const ModelState student = random_state(rng);
  CHECK_THROWS_AS(ema_update(teacher, student, 1.0), ConfigError);
  CHECK_THROWS_AS(ema_update(teacher, student, -0.1), ConfigError);
  ModelState other = student;
  other.erase("b.bias");
  CHECK_THROWS_AS(ema_update(teacher, other, 0.5), InputError);
  other = student;
  other["b.bias"] = Tensor({3});
  CHECK_THROWS_AS(ema_update(teacher, other, 0.5), InputError);
}

TEST_CASE("ema_update is entrywise affine in the teacher") {
  std::mt19937_64 rng(4);
  const double w = 0.999;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelState teacher = random_state(rng);
    const ModelState student = random_state(rng);
    ModelState shifted = teacher;
    ModelState delta = random_state(rng);
    for (auto& [name, t] : shifted)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += delta.at(name)[i];
    const ModelState a = ema_updated(teacher, student, w);
    const ModelState b = ema_updated(shifted, student, w);
    for (const auto& [name, t] : a)
      for (std::size_t i = 0; i < t.size(); ++i)
        CHECK(std::abs((b.at(name)[i] - t[i]) - w * delta.at(name)[i]) < 1e-12);
  }
}
