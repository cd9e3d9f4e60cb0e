#pragma once

// Run configuration file: INI-style sections of `key = value` lines (the TOML
// subset used by configs/*.toml). Values may be quoted; `[a, b]` lists are
// accepted for integer arrays; `#` starts a comment. Keys that are absent
// keep the full-scale defaults; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include "lf2/training.hpp"

namespace lf2 {

struct RunConfig {
  TrainConfig train;
  std::filesystem::path source_root;  // Market-style layout, or empty for synthetic
  std::filesystem::path target_root;
  std::filesystem::path output_dir = "runs";
  // Synthetic data used when a root is empty.
  std::size_t synthetic_ids = 32;
  std::size_t synthetic_images = 40;
  std::size_t synthetic_train = 30;  // per identity, target split
  std::size_t synthetic_query = 2;
};

// ConfigError on unreadable files, malformed values or unknown keys.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<string>");

// Resolved snapshot in the same format; parse_run_config(to_config_text(c))
// reproduces c.
std::string to_config_text(const RunConfig& config);
// FNV-1a of the snapshot, output directory excluded.
std::string config_hash(const RunConfig& config);

}  // namespace lf2
