#include "lf2/layers.hpp"

#include <algorithm>
#include <cmath>

namespace lf2::layers {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, std::size_t stride, ConvCache* cache) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1))
    throw InputError("conv2d: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  kernels::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, weight.dim(2) / 2};
  const std::size_t batch = x.dim(0), cout = weight.dim(0);
  const std::size_t ho = g.out_height(), wo = g.out_width(), plane = ho * wo;

  Tensor columns({g.patch_size(), batch * plane});
  kernels::im2col(g, batch, x.data(), columns.data());
  Tensor flat({cout, batch * plane});
  kernels::gemm(kernels::Op::kNone, kernels::Op::kNone, cout, batch * plane, g.patch_size(),
                weight.data(), columns.data(), flat.data());

  Tensor y({batch, cout, ho, wo});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t n = 0; n < batch; ++n)
      std::copy_n(flat.data() + co * batch * plane + n * plane, plane,
                  y.data() + (n * cout + co) * plane);
  if (cache != nullptr) {
    cache->geometry = g;
    cache->batch = batch;
    cache->columns = std::move(columns);
  }
  return y;
}

Tensor conv2d_backward(const Tensor& d_out, const Tensor& weight, const ConvCache& cache,
                       Tensor& d_weight, bool input_grad) {
  const auto& g = cache.geometry;
  const std::size_t batch = cache.batch, cout = weight.dim(0);
  const std::size_t plane = g.out_height() * g.out_width();

  Tensor flat({cout, batch * plane});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < cout; ++co)
      std::copy_n(d_out.data() + (n * cout + co) * plane, plane,
                  flat.data() + co * batch * plane + n * plane);

  kernels::gemm(kernels::Op::kNone, kernels::Op::kTranspose, cout, g.patch_size(), batch * plane,
                flat.data(), cache.columns.data(), d_weight.data(), /*accumulate=*/true);
  if (!input_grad) return {};
  Tensor d_cols({g.patch_size(), batch * plane});
  kernels::gemm(kernels::Op::kTranspose, kernels::Op::kNone, g.patch_size(), batch * plane, cout,
                weight.data(), flat.data(), d_cols.data());
  Tensor dx({batch, g.channels, g.height, g.width});
  kernels::col2im(g, batch, d_cols.data(), dx.data());
  return dx;
}

Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         const Tensor& running_mean, const Tensor& running_var, bool training,
                         const BatchNormSettings& settings, BatchNormCache* cache) {
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.size() / (batch * channels);
  if (gamma.size() != channels)
    throw InputError("batchnorm: " + std::to_string(channels) + " channels but " +
                     std::to_string(gamma.size()) + " scale entries");
  const double count = static_cast<double>(batch * spatial);

  Tensor y(x.shape());
  Tensor normalized(training ? x.shape() : Shape{});
  Tensor inv_std({channels});
  Tensor batch_mean(training ? Shape{channels} : Shape{});
  Tensor batch_var(training ? Shape{channels} : Shape{});
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (training) {
      for (std::size_t n = 0; n < batch; ++n) {
        const double* p = x.data() + (n * channels + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) mean += p[s];
      }
      mean /= count;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* p = x.data() + (n * channels + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) var += (p[s] - mean) * (p[s] - mean);
      }
      var /= count;
      batch_mean[c] = mean;
      batch_var[c] = count > 1.0 ? var * count / (count - 1.0) : var;
    } else {
      if (!(running_var[c] > 0.0))
        throw StateError("batchnorm: running variance of channel " + std::to_string(c) +
                         " is not positive");
      mean = running_mean[c];
      var = running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + settings.eps);
    inv_std[c] = istd;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const double xhat = (x[off + s] - mean) * istd;
        if (training) normalized[off + s] = xhat;
        y[off + s] = gamma[c] * xhat + beta[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(batch_mean);
    cache->batch_var = std::move(batch_var);
    cache->training = training;
  }
  return y;
}

void update_running_stats(Tensor& running_mean, Tensor& running_var, const BatchNormCache& cache,
                          const BatchNormSettings& settings) {
  if (!cache.training) throw StateError("batchnorm: no batch statistics recorded");
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = (1.0 - settings.momentum) * running_mean[c] + settings.momentum * cache.batch_mean[c];
    running_var[c] = (1.0 - settings.momentum) * running_var[c] + settings.momentum * cache.batch_var[c];
  }
}

Tensor batchnorm_backward(const Tensor& d_out, const Tensor& gamma, const BatchNormCache& cache,
                          Tensor& d_gamma, Tensor& d_beta) {
  if (!cache.training) throw StateError("batchnorm: backward requires a training-mode forward");
  const std::size_t batch = d_out.dim(0), channels = d_out.dim(1);
  const std::size_t spatial = d_out.size() / (batch * channels);
  const double count = static_cast<double>(batch * spatial);
  Tensor dx(d_out.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        sum_dy += d_out[off + s];
        sum_dy_xhat += d_out[off + s] * cache.normalized[off + s];
      }
    }
    d_gamma[c] += sum_dy_xhat;
    d_beta[c] += sum_dy;
    const double scale = gamma[c] * cache.inv_std[c] / count;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s)
        dx[off + s] = scale * (count * d_out[off + s] - sum_dy - cache.normalized[off + s] * sum_dy_xhat);
    }
  }
  return dx;
}

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(Tensor& d_out, const Tensor& activation) {
  for (std::size_t i = 0; i < d_out.size(); ++i)
    if (!(activation[i] > 0.0)) d_out[i] = 0.0;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
    throw InputError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  const std::size_t batch = x.dim(0), out = weight.dim(0);
  Tensor y({batch, out});
  kernels::gemm(kernels::Op::kNone, kernels::Op::kTranspose, batch, out, x.dim(1), x.data(),
                weight.data(), y.data());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) y[n * out + o] += bias[o];
  return y;
}

Tensor linear_backward(const Tensor& d_out, const Tensor& x, const Tensor& weight,
                       Tensor& d_weight, Tensor& d_bias) {
  const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  kernels::gemm(kernels::Op::kTranspose, kernels::Op::kNone, out, in, batch, d_out.data(), x.data(),
                d_weight.data(), /*accumulate=*/true);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) d_bias[o] += d_out[n * out + o];
  Tensor dx({batch, in});
  kernels::gemm(kernels::Op::kNone, kernels::Op::kNone, batch, in, out, d_out.data(), weight.data(),
                dx.data());
  return dx;
}

}  // namespace lf2::layers
