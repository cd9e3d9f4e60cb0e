#include "lf2/optim.hpp"

#include <cmath>

#include "lf2/errors.hpp"

namespace lf2 {

void Adam::step(ModelState& params, const ModelState& grads, double lr) {
  ++steps_;
  for (auto& [name, p] : params) {
    if (is_buffer(name)) continue;
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != p.shape())
      throw InputError("adam: gradient of " + name + " has shape " + shape_string(g->second.shape()) +
                       ", parameter has " + shape_string(p.shape()));
    Moments& mo = moments_[name];
    if (mo.m.shape() != p.shape()) mo = Moments{Tensor(p.shape()), Tensor(p.shape()), 0};
    ++mo.t;
    const double c1 = 1.0 - std::pow(config_.beta1, double(mo.t));
    const double c2 = 1.0 - std::pow(config_.beta2, double(mo.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double grad = g->second[i] + config_.weight_decay * p[i];
      mo.m[i] = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * grad;
      mo.v[i] = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * grad * grad;
      p[i] -= lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + config_.eps);
    }
  }
}

void Adam::reset(std::string_view prefix) {
  for (auto it = moments_.begin(); it != moments_.end();)
    it = it->first.starts_with(prefix) ? moments_.erase(it) : std::next(it);
}

void Adam::clear() {
  moments_.clear();
  steps_ = 0;
}

}  // namespace lf2
