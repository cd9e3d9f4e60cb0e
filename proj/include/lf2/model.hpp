#pragma once

// Desk-scale re-identification network: a strided convolutional encoder that
// produces a C x H x W feature map, the horizontal partitioner, global average
// pooling, one expert head (FC -> BN) per part and a linear classifier.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lf2/layers.hpp"
#include "lf2/model_state.hpp"
#include "lf2/tensor.hpp"

namespace lf2 {

using Rng = std::mt19937_64;

// Rank-3 (C x H x W) map, or rank-4 (N x C x H x W) for a batch.
using FeatureMap = Tensor;
// Rank-1 vector of length C, or rank-2 (N x C) for a batch.
using EmbeddingVector = Tensor;

struct EncoderConfig {
  std::size_t input_height = 64;
  std::size_t input_width = 32;
  std::size_t input_channels = 3;
  // One conv -> BN -> ReLU block per entry; the last entry is the feature
  // channel count C. Every block but the last halves the resolution.
  std::vector<std::size_t> widths{32, 64, 128, 128};
  std::size_t final_stride = 1;

  std::size_t channels() const { return widths.empty() ? 0 : widths.back(); }
  std::size_t feature_height() const;
  std::size_t feature_width() const;
  // ConfigError unless C, H, W >= 1 and H is divisible by `parts`.
  void validate(std::size_t parts) const;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t parts = 2;
  std::size_t classes = 2;
  layers::BatchNormSettings batchnorm;
};

// Splits the height axis into `parts` equal slices, top to bottom. Accepts a
// single map or a batch.
std::vector<FeatureMap> partition(const FeatureMap& map, std::size_t parts);
// Inverse of partition.
FeatureMap concat_height(const std::vector<FeatureMap>& parts);

// Spatial mean per channel: (C x H x W) -> (C), (N x C x H x W) -> (N x C).
EmbeddingVector gap(const FeatureMap& map);
// Spreads (N x C) gradients evenly over an (N x C x H x W) map.
FeatureMap gap_backward(const EmbeddingVector& d_pooled, std::size_t height, std::size_t width);

struct ExpertHead {
  Tensor weight;  // C x C
  Tensor bias;    // C
  Tensor scale;   // BN gamma
  Tensor shift;   // BN beta
  Tensor running_mean;
  Tensor running_var;

  static ExpertHead identity(std::size_t channels);
};

// FC -> BN on a single vector (inference only) or an N x C batch. Training
// mode normalizes with batch statistics and updates the running statistics.
EmbeddingVector expert_forward(const EmbeddingVector& v, ExpertHead& head, bool training,
                               const layers::BatchNormSettings& settings = {});

struct ClassifierHead {
  Tensor weight;  // M x C
  Tensor bias;    // M
};

// logits = W v + b for a vector, or row-wise for an N x C batch.
Tensor classify(const EmbeddingVector& v, const ClassifierHead& head);

// Student or teacher network. Parameters and running statistics live in a
// single ModelState so the mean-teacher update and checkpoints work on names.
class ReidModel {
 public:
  struct TrainOutput {
    FeatureMap map;                         // N x C x H x W
    EmbeddingVector global;                 // f^{P0}: N x C
    std::vector<EmbeddingVector> pooled;    // gap(part j): N x C
    std::vector<EmbeddingVector> local;     // expert_j(pooled j): N x C
    Tensor logits;                          // N x M

    // Backward state.
    struct Block {
      layers::ConvCache conv;
      layers::BatchNormCache bn;
      Tensor activation;
    };
    std::vector<Block> blocks;
    std::vector<layers::BatchNormCache> expert_bn;
    std::vector<Tensor> expert_fc_out;
  };

  struct Gradients {
    EmbeddingVector global;               // dL/d f^{P0}
    std::vector<EmbeddingVector> pooled;  // dL/d gap(part j), may be empty
    std::vector<EmbeddingVector> local;   // dL/d expert outputs, may be empty
    Tensor logits;                        // may be empty
  };

  ReidModel() = default;
  ReidModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModelState& state() const { return state_; }
  ModelState& state() { return state_; }
  const ModelState& grads() const { return grads_; }
  ModelState& grads() { return grads_; }

  // Replaces the state; names and shapes must match the current layout.
  void load_state(const ModelState& state);
  void zero_grad();
  // Fresh classifier with `classes` outputs (weights ~ N(0, 0.001^2), zero bias).
  void reset_classifier(std::size_t classes, Rng& rng);

  // Inference-mode encoder on a batch of N x 3 x H x W images.
  FeatureMap encode(const Tensor& images) const;
  // Training-mode forward of every branch.
  TrainOutput forward_train(const Tensor& images);
  // Accumulates parameter gradients into grads().
  void backward(const TrainOutput& out, const Gradients& grads);

  ExpertHead expert(std::size_t part) const;
  ClassifierHead classifier() const;

 private:
  Tensor& param(const std::string& name) { return state_.at(name); }
  const Tensor& param(const std::string& name) const { return state_.at(name); }

  ModelConfig config_;
  ModelState state_;
  ModelState grads_;
};

// Single-image inference through the encoder. `image` is 3 x H x W.
FeatureMap encode(const Tensor& image, const ReidModel& model);

}  // namespace lf2
