#pragma once

// Forward/backward primitives for the desk-scale encoder and heads. Each
// forward returns whatever the matching backward needs in a small cache.

#include <cstddef>

#include "lf2/kernels.hpp"
#include "lf2/tensor.hpp"

namespace lf2::layers {

struct ConvCache {
  kernels::ConvGeometry geometry;
  std::size_t batch = 0;
  Tensor columns;  // (C*k*k) x (N*Ho*Wo)
};

// 3x3 convolution without bias. x: N x Cin x H x W, weight: Cout x Cin x 3 x 3.
Tensor conv2d_forward(const Tensor& x, const Tensor& weight, std::size_t stride, ConvCache* cache);
// Accumulates into d_weight and returns dL/dx (empty when `input_grad` is false).
Tensor conv2d_backward(const Tensor& d_out, const Tensor& weight, const ConvCache& cache,
                       Tensor& d_weight, bool input_grad = true);

struct BatchNormCache {
  Tensor normalized;  // x_hat, same layout as the input
  Tensor inv_std;     // per channel
  Tensor batch_mean;  // training mode only
  Tensor batch_var;   // unbiased, training mode only
  bool training = false;
};

struct BatchNormSettings {
  double momentum = 0.1;
  double eps = 1e-5;
};

// Batch normalization over an input laid out as N x C x S (S = spatial size,
// 1 for vectors). Training mode normalizes with biased batch statistics and
// records them in the cache; inference mode uses the running statistics.
Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Tensor& running_mean, const Tensor& running_var, bool training,
                         const BatchNormSettings& settings, BatchNormCache* cache);
// running = (1 - momentum) * running + momentum * batch (unbiased variance).
void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchNormCache& cache,
                          const BatchNormSettings& settings);
Tensor batchnorm_backward(const Tensor& d_out, const Tensor& gamma, const BatchNormCache& cache,
                          Tensor& d_gamma, Tensor& d_beta);

// In place. The backward masks by the stored post-activation values.
void relu_inplace(Tensor& x);
void relu_backward_inplace(Tensor& d_out, const Tensor& activation);

// y = x W^T + b, x: N x In, W: Out x In.
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Accumulates into d_weight / d_bias; returns dL/dx.
Tensor linear_backward(const Tensor& d_out, const Tensor& x, const Tensor& weight,
                       Tensor& d_weight, Tensor& d_bias);

}  // namespace lf2::layers
