#pragma once

// Fusion Module: a channel gate on the teacher's global feature map driven by
// one student local feature.
//
//   Z   = (W2 relu(W1 F + b1) + b2) * F        (elementwise residual gate)
//   out = sigmoid(Z)[c] * Phi[c, h, w]          (broadcast over H x W)
//
// Each part index owns an independent set of parameters.

#include <cstddef>
#include <vector>

#include "lf2/model.hpp"
#include "lf2/model_state.hpp"
#include "lf2/tensor.hpp"

namespace lf2 {

struct FusionParams {
  Tensor w1;  // (C/r) x C
  Tensor b1;  // C/r
  Tensor w2;  // C x (C/r)
  Tensor b2;  // C
  std::size_t reduction = 4;

  std::size_t channels() const { return w1.empty() ? 0 : w1.dim(1); }
  std::size_t hidden() const { return w1.empty() ? 0 : w1.dim(0); }

  // Fan-in scaled uniform weights, zero biases. ConfigError unless r | C.
  static FusionParams random(std::size_t channels, std::size_t reduction, Rng& rng);
};

struct FusionGrads {
  Tensor w1, b1, w2, b2;
  Tensor local;   // dL/dF
  Tensor global;  // dL/dPhi (empty for the batched pooled path)

  static FusionGrads zeros_like(const FusionParams& params);
};

// Pre-sigmoid attention vector Z for one local feature (length C).
Tensor attention_logits(const EmbeddingVector& local, const FusionParams& params);

// Fused map sigmoid(Z) * Phi. InputError on any dimension mismatch.
FeatureMap fuse(const EmbeddingVector& local, const FeatureMap& global, const FusionParams& params);

// gap(fuse(...)).
EmbeddingVector fusion_feature(const EmbeddingVector& local, const FeatureMap& global,
                               const FusionParams& params);

// Gradients of a scalar loss through fuse given dL/d(fused map).
FusionGrads fuse_backward(const EmbeddingVector& local, const FeatureMap& global,
                          const FusionParams& params, const FeatureMap& d_out);

// Batched fusion features from pooled inputs. Because the gate is constant
// over space, gap(sigmoid(Z) * Phi) == sigmoid(Z) * gap(Phi), so the batch
// path only needs the pooled global feature. local, pooled_global: N x C.
struct FusionBatchCache {
  Tensor hidden_pre, hidden, mlp, gate;
};
EmbeddingVector fusion_features(const Tensor& local, const Tensor& pooled_global,
                                const FusionParams& params, FusionBatchCache* cache = nullptr);
// Accumulates parameter gradients into `grads` and returns dL/d(local).
Tensor fusion_features_backward(const Tensor& d_out, const Tensor& local, const Tensor& pooled_global,
                                const FusionParams& params, const FusionBatchCache& cache,
                                FusionGrads& grads);

// One FusionParams per part (1..K) stored in a ModelState under
// "fusion.<j>.{w1,b1,w2,b2}" so the optimizer and checkpoints treat it like
// any other network.
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(std::size_t parts, std::size_t channels, std::size_t reduction, Rng& rng);

  std::size_t parts() const { return parts_; }
  std::size_t reduction() const { return reduction_; }
  FusionParams params(std::size_t part) const;
  void set_params(std::size_t part, const FusionParams& params);
  void accumulate_grads(std::size_t part, const FusionGrads& grads);

  const ModelState& state() const { return state_; }
  ModelState& state() { return state_; }
  ModelState& grads() { return grads_; }
  void zero_grad();

 private:
  std::size_t parts_ = 0;
  std::size_t reduction_ = 4;
  ModelState state_;
  ModelState grads_;
};

}  // namespace lf2
