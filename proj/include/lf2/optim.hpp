#pragma once

// Adam with L2 weight decay folded into the gradient. Moments are keyed by
// parameter name so a network can grow or replace a head between epochs.

#include <cstddef>
#include <string>
#include <string_view>

#include "lf2/model_state.hpp"

namespace lf2 {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One update of every non-buffer entry of `params` that has a gradient.
  // Gradients must have the parameter's shape (InputError otherwise).
  void step(ModelState& params, const ModelState& grads, double lr);
  // Forgets the moments of every parameter whose name starts with `prefix`.
  void reset(std::string_view prefix);
  void clear();

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m, v;
    std::size_t t = 0;
  };
  AdamConfig config_;
  std::map<std::string, Moments> moments_;
  std::size_t steps_ = 0;
};

}  // namespace lf2
