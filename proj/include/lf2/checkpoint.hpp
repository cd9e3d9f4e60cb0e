#pragma once

// Checkpoint container: the 8-byte magic "LF2CKPT1", a uint64 length and a
// JSON metadata record, a uint64 array count, then per array a uint64 name
// length, the name, a uint64 rank, rank uint64 dims and the float64 values.
// All integers and values are little-endian.

#include <filesystem>

#include "json.hpp"
#include "lf2/model_state.hpp"

namespace lf2 {

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ModelState arrays;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// InputError if the file is missing, truncated or not a checkpoint.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Arrays of `state` renamed to `prefix + name`, and the inverse selection.
void put_state(Checkpoint& checkpoint, const std::string& prefix, const ModelState& state);
ModelState take_state(const Checkpoint& checkpoint, const std::string& prefix);

}  // namespace lf2
