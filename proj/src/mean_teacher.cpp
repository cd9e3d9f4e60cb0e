#include "lf2/mean_teacher.hpp"

#include <string>

namespace lf2 {

void require_same_layout(const ModelState& a, const ModelState& b, std::string_view context) {
  if (a.size() != b.size())
    throw InputError(std::string(context) + ": states hold " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " arrays");
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first)
      throw InputError(std::string(context) + ": name mismatch '" + ia->first + "' vs '" + ib->first + "'");
    if (ia->second.shape() != ib->second.shape())
      throw InputError(std::string(context) + ": shape mismatch for '" + ia->first + "': " +
                       shape_string(ia->second.shape()) + " vs " + shape_string(ib->second.shape()));
  }
}

ModelState init_teacher(const ModelState& student) { return student; }

void ema_update(ModelState& teacher, const ModelState& student, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("ema_update: momentum must lie in [0, 1), got " + std::to_string(momentum));
  require_same_layout(teacher, student, "ema_update");
  const double blend = 1.0 - momentum;
  auto is = student.begin();
  for (auto it = teacher.begin(); it != teacher.end(); ++it, ++is) {
    double* t = it->second.data();
    const double* s = is->second.data();
    const std::size_t n = it->second.size();
    for (std::size_t i = 0; i < n; ++i) t[i] = momentum * t[i] + blend * s[i];
  }
}

ModelState ema_updated(ModelState teacher, const ModelState& student, double momentum) {
  ema_update(teacher, student, momentum);
  return teacher;
}

}  // namespace lf2
