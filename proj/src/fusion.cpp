#include "lf2/fusion.hpp"

#include <cmath>
#include <string>

namespace lf2 {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_local(const EmbeddingVector& local, const FusionParams& params) {
  if (params.w1.rank() != 2 || params.w2.rank() != 2 || params.hidden() == 0)
    throw InputError("fusion: parameters are not initialized");
  if (params.hidden() * params.reduction != params.channels() || params.w2.dim(0) != params.channels() ||
      params.w2.dim(1) != params.hidden() || params.b1.size() != params.hidden() ||
      params.b2.size() != params.channels())
    throw InputError("fusion: inconsistent parameter shapes for reduction ratio " +
                     std::to_string(params.reduction));
  if (local.rank() != 1 || local.size() != params.channels())
    throw InputError("fusion: local feature " + shape_string(local.shape()) + " does not match " +
                     std::to_string(params.channels()) + " channels");
}

void check_global(const FeatureMap& global, std::size_t channels) {
  if (global.rank() != 3 || global.dim(0) != channels)
    throw InputError("fusion: global map " + shape_string(global.shape()) + " does not match " +
                     std::to_string(channels) + " channels");
}

std::string key(std::size_t part, const char* field) {
  return "fusion." + std::to_string(part) + "." + field;
}

// Forward of the gate MLP on one vector; fills hidden_pre, hidden, mlp.
void gate_mlp(const double* f, const FusionParams& p, double* hidden_pre, double* hidden, double* mlp) {
  const std::size_t c = p.channels(), h = p.hidden();
  for (std::size_t i = 0; i < h; ++i) {
    double s = p.b1[i];
    const double* w = p.w1.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) s += w[k] * f[k];
    hidden_pre[i] = s;
    hidden[i] = s > 0.0 ? s : 0.0;
  }
  for (std::size_t o = 0; o < c; ++o) {
    double s = p.b2[o];
    const double* w = p.w2.data() + o * h;
    for (std::size_t i = 0; i < h; ++i) s += w[i] * hidden[i];
    mlp[o] = s;
  }
}

// Backward of Z = mlp(f) * f given dZ; accumulates parameter grads and
// writes dL/df.
void gate_mlp_backward(const double* d_z, const double* f, const double* hidden_pre,
                       const double* hidden, const double* mlp, const FusionParams& p,
                       FusionGrads& g, double* d_f) {
  const std::size_t c = p.channels(), h = p.hidden();
  std::vector<double> d_mlp(c), d_hidden(h, 0.0);
  for (std::size_t o = 0; o < c; ++o) {
    d_mlp[o] = d_z[o] * f[o];
    d_f[o] = d_z[o] * mlp[o];
    g.b2[o] += d_mlp[o];
    double* gw = g.w2.data() + o * h;
    const double* w = p.w2.data() + o * h;
    for (std::size_t i = 0; i < h; ++i) {
      gw[i] += d_mlp[o] * hidden[i];
      d_hidden[i] += w[i] * d_mlp[o];
    }
  }
  for (std::size_t i = 0; i < h; ++i) {
    const double d_pre = hidden_pre[i] > 0.0 ? d_hidden[i] : 0.0;
    g.b1[i] += d_pre;
    double* gw = g.w1.data() + i * c;
    const double* w = p.w1.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) {
      gw[k] += d_pre * f[k];
      d_f[k] += w[k] * d_pre;
    }
  }
}

}  // namespace

FusionParams FusionParams::random(std::size_t channels, std::size_t reduction, Rng& rng) {
  if (reduction == 0 || channels == 0 || channels % reduction != 0)
    throw ConfigError("fusion: reduction ratio " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels) + " channels");
  const std::size_t hidden = channels / reduction;
  FusionParams p{Tensor({hidden, channels}), Tensor({hidden}), Tensor({channels, hidden}),
                 Tensor({channels}), reduction};
  std::uniform_real_distribution<double> first(-1.0 / std::sqrt(double(channels)), 1.0 / std::sqrt(double(channels)));
  for (double& v : p.w1.values()) v = first(rng);
  std::uniform_real_distribution<double> second(-1.0 / std::sqrt(double(hidden)), 1.0 / std::sqrt(double(hidden)));
  for (double& v : p.w2.values()) v = second(rng);
  return p;
}

FusionGrads FusionGrads::zeros_like(const FusionParams& params) {
  return FusionGrads{Tensor(params.w1.shape()), Tensor(params.b1.shape()), Tensor(params.w2.shape()),
                     Tensor(params.b2.shape()), Tensor(), Tensor()};
}

Tensor attention_logits(const EmbeddingVector& local, const FusionParams& params) {
  check_local(local, params);
  const std::size_t c = params.channels(), h = params.hidden();
  std::vector<double> pre(h), hid(h);
  Tensor z({c});
  gate_mlp(local.data(), params, pre.data(), hid.data(), z.data());
  for (std::size_t o = 0; o < c; ++o) z[o] *= local[o];
  return z;
}

FeatureMap fuse(const EmbeddingVector& local, const FeatureMap& global, const FusionParams& params) {
  check_local(local, params);
  check_global(global, params.channels());
  const Tensor z = attention_logits(local, params);
  const std::size_t spatial = global.dim(1) * global.dim(2);
  FeatureMap out(global.shape());
  for (std::size_t c = 0; c < z.size(); ++c) {
    const double gate = sigmoid(z[c]);
    for (std::size_t s = 0; s < spatial; ++s) out[c * spatial + s] = gate * global[c * spatial + s];
  }
  return out;
}

EmbeddingVector fusion_feature(const EmbeddingVector& local, const FeatureMap& global,
                               const FusionParams& params) {
  return gap(fuse(local, global, params));
}

FusionGrads fuse_backward(const EmbeddingVector& local, const FeatureMap& global,
                          const FusionParams& params, const FeatureMap& d_out) {
  check_local(local, params);
  check_global(global, params.channels());
  if (d_out.shape() != global.shape())
    throw InputError("fuse_backward: gradient shape " + shape_string(d_out.shape()) +
                     " does not match the fused map");
  const std::size_t c = params.channels(), h = params.hidden();
  const std::size_t spatial = global.dim(1) * global.dim(2);
  std::vector<double> pre(h), hid(h), mlp(c), d_z(c);
  gate_mlp(local.data(), params, pre.data(), hid.data(), mlp.data());

  FusionGrads g = FusionGrads::zeros_like(params);
  g.global = Tensor(global.shape());
  g.local = Tensor({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double gate = sigmoid(mlp[ch] * local[ch]);
    double dot = 0.0;
    for (std::size_t s = 0; s < spatial; ++s) {
      dot += d_out[ch * spatial + s] * global[ch * spatial + s];
      g.global[ch * spatial + s] = gate * d_out[ch * spatial + s];
    }
    d_z[ch] = dot * gate * (1.0 - gate);
  }
  gate_mlp_backward(d_z.data(), local.data(), pre.data(), hid.data(), mlp.data(), params, g, g.local.data());
  return g;
}

EmbeddingVector fusion_features(const Tensor& local, const Tensor& pooled_global,
                                const FusionParams& params, FusionBatchCache* cache) {
  if (local.rank() != 2 || local.shape() != pooled_global.shape() || local.dim(1) != params.channels())
    throw InputError("fusion_features: local " + shape_string(local.shape()) + " and global " +
                     shape_string(pooled_global.shape()) + " must both be N x " +
                     std::to_string(params.channels()));
  const std::size_t n = local.dim(0), c = params.channels(), h = params.hidden();
  FusionBatchCache tmp;
  FusionBatchCache& cc = cache != nullptr ? *cache : tmp;
  cc.hidden_pre = Tensor({n, h});
  cc.hidden = Tensor({n, h});
  cc.mlp = Tensor({n, c});
  cc.gate = Tensor({n, c});
  EmbeddingVector out({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    gate_mlp(local.data() + i * c, params, cc.hidden_pre.data() + i * h, cc.hidden.data() + i * h,
             cc.mlp.data() + i * c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gate = sigmoid(cc.mlp[i * c + ch] * local[i * c + ch]);
      cc.gate[i * c + ch] = gate;
      out[i * c + ch] = gate * pooled_global[i * c + ch];
    }
  }
  return out;
}

Tensor fusion_features_backward(const Tensor& d_out, const Tensor& local, const Tensor& pooled_global,
                                const FusionParams& params, const FusionBatchCache& cache,
                                FusionGrads& grads) {
  const std::size_t n = local.dim(0), c = params.channels(), h = params.hidden();
  Tensor d_local({n, c});
  std::vector<double> d_z(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gate = cache.gate[i * c + ch];
      d_z[ch] = d_out[i * c + ch] * pooled_global[i * c + ch] * gate * (1.0 - gate);
    }
    gate_mlp_backward(d_z.data(), local.data() + i * c, cache.hidden_pre.data() + i * h,
                      cache.hidden.data() + i * h, cache.mlp.data() + i * c, params, grads,
                      d_local.data() + i * c);
  }
  return d_local;
}

FusionModule::FusionModule(std::size_t parts, std::size_t channels, std::size_t reduction, Rng& rng)
    : parts_(parts), reduction_(reduction) {
  for (std::size_t j = 1; j <= parts; ++j) set_params(j, FusionParams::random(channels, reduction, rng));
}

FusionParams FusionModule::params(std::size_t part) const {
  return FusionParams{state_.at(key(part, "w1")), state_.at(key(part, "b1")), state_.at(key(part, "w2")),
                      state_.at(key(part, "b2")), reduction_};
}

void FusionModule::set_params(std::size_t part, const FusionParams& params) {
  state_[key(part, "w1")] = params.w1;
  state_[key(part, "b1")] = params.b1;
  state_[key(part, "w2")] = params.w2;
  state_[key(part, "b2")] = params.b2;
}

void FusionModule::accumulate_grads(std::size_t part, const FusionGrads& g) {
  if (grads_.empty()) zero_grad();
  const std::pair<const char*, const Tensor*> fields[] = {{"w1", &g.w1}, {"b1", &g.b1}, {"w2", &g.w2}, {"b2", &g.b2}};
  for (const auto& [field, src] : fields) {
    Tensor& dst = grads_.at(key(part, field));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*src)[i];
  }
}

void FusionModule::zero_grad() {
  for (const auto& [name, value] : state_) grads_[name] = Tensor(value.shape());
}

}  // namespace lf2
