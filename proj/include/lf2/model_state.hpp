#pragma once

#include <map>
#include <string>
#include <string_view>

#include "lf2/tensor.hpp"

namespace lf2 {

// Named parameter collection for one network: learnable arrays plus the
// normalization running statistics. Ordered by name so iteration (and
// therefore serialization and EMA) is deterministic.
using ModelState = std::map<std::string, Tensor>;

// Running statistics are carried in the state but never receive gradients.
inline bool is_buffer(std::string_view name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

// Throws InputError unless both states have the same names and shapes.
void require_same_layout(const ModelState& a, const ModelState& b, std::string_view context);

}  // namespace lf2
