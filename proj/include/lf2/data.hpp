#pragma once

// Dataset ingestion (Market-style directories and a synthetic generator),
// identity-balanced P x K batch sampling and training-time augmentation.
// Images are 3 x H x W tensors with values in [0, 1].

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lf2/tensor.hpp"

namespace lf2 {

struct Sample {
  Tensor image;
  int identity = -1;  // contiguous label within its split, -1 when unknown
  int key = -1;       // original person id, comparable across splits
  std::optional<int> camera;
  std::string source;
};

struct ImageSize {
  std::size_t height = 64;
  std::size_t width = 32;
};

enum class Split { kTrain, kQuery, kGallery };

// Sub-directory name for a split: bounding_box_train, query, bounding_box_test.
std::string split_directory(Split split);

// Parses `<pid>_c<cam>_<rest>.{jpg,jpeg,png}`. Returns nullopt when malformed.
struct ParsedName {
  int person = 0;
  int camera = 0;
};
std::optional<ParsedName> parse_market_name(const std::string& filename);

// Reads every image of a split, resized to `size`. Files are ordered
// lexicographically by path; malformed names are skipped with a warning.
// Identities are remapped onto [0, M) in order of first appearance.
// InputError if the directory is missing or contains no usable image.
std::vector<Sample> load_dataset(const std::filesystem::path& root, Split split, ImageSize size = {});

// Writes the image as 8-bit PNG/JPG (chosen by extension).
void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path, ImageSize size);

// Global appearance of a synthetic domain.
struct DomainStyle {
  std::string name = "A";
  double hue_rotation = 0.0;    // radians, applied to clothing colours
  double saturation = 1.0;      // 1 keeps colours, 0 makes them grey
  double brightness = 1.0;
  double background_level = 0.5;
  double background_clutter = 0.0;  // 0 plain, 1 heavy random blobs
  double camera_cast = 0.0;         // strength of per-camera colour gains
  double noise = 0.02;
  std::size_t cameras = 4;

  static DomainStyle source();  // "A": plain background, mild casts
  static DomainStyle target();  // "B": hue shift, clutter, strong casts
};

// n_ids persistent identity signatures (torso colour, lower-body colour,
// scale, torso pattern) drawn from `seed` alone, rendered imgs_per_id times
// each with per-image pose jitter and noise under `style`. Camera of image i
// is i mod style.cameras. Deterministic in (seed, style).
std::vector<Sample> synth_generate(std::size_t n_ids, std::size_t imgs_per_id, const DomainStyle& style,
                                   std::uint64_t seed, ImageSize size = {});

// Held-out view of a synthetic identity set: per identity the first `train`
// images form the unlabeled training split, the next `query` images the query
// split and the remainder the gallery.
struct SplitDataset {
  std::vector<Sample> train, query, gallery;
};
SplitDataset split_per_identity(const std::vector<Sample>& samples, std::size_t train, std::size_t query);

// Writes the three splits in the Market directory layout.
void write_market_layout(const std::filesystem::path& root, const SplitDataset& data);

struct SamplerConfig {
  std::size_t identities = 16;  // P
  std::size_t instances = 4;    // K images per identity
  std::uint64_t seed = 0;

  std::size_t batch_size() const { return identities * instances; }
};

// Endless stream of P x K index batches over `labels` (ground truth while
// pretraining, pseudo labels while fine-tuning). Identities with fewer than K
// images are sampled with replacement. ConfigError if fewer than P distinct
// labels exist or P < 2 or K < 2.
class PkSampler {
 public:
  PkSampler(std::span<const int> labels, const SamplerConfig& config);
  std::vector<std::size_t> next();
  std::size_t label_count() const { return groups_.size(); }

 private:
  SamplerConfig config_;
  std::vector<std::vector<std::size_t>> groups_;
  std::mt19937_64 rng_;
};

enum class Phase { kSourcePretrain, kTargetFinetune, kEval };

struct AugmentOptions {
  double flip_probability = 0.5;
  std::size_t pad = 4;
  double erase_probability = 0.5;
  double erase_area_min = 0.02, erase_area_max = 0.4;
  double erase_aspect_min = 0.3, erase_aspect_max = 3.33;
  std::optional<bool> force_flip;  // overrides the coin toss when set
};

// eval: resize to `size` only. source: + flip and zero-pad/crop. target:
// + random erasing filled with the per-channel mean. Shape is preserved.
Tensor augment(const Tensor& image, Phase phase, std::mt19937_64& rng, const AugmentOptions& options = {},
               std::optional<ImageSize> size = std::nullopt);

Tensor flip_horizontal(const Tensor& image);
Tensor resize_image(const Tensor& image, ImageSize size);

// Stacks the selected samples' images into an N x 3 x H x W batch.
Tensor stack_images(const std::vector<Sample>& samples, std::span<const std::size_t> indices);
Tensor stack_images(const std::vector<Sample>& samples);

}  // namespace lf2
