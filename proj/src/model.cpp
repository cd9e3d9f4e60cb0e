#include "lf2/model.hpp"

#include <algorithm>
#include <cmath>

namespace lf2 {
namespace {

std::string block_name(std::size_t b) { return "encoder.block" + std::to_string(b); }
std::string expert_name(std::size_t j) { return "expert" + std::to_string(j); }

std::size_t block_stride(const EncoderConfig& cfg, std::size_t b) {
  return b + 1 == cfg.widths.size() ? cfg.final_stride : 2;
}

void add_batchnorm(ModelState& state, const std::string& prefix, std::size_t channels) {
  state[prefix + ".weight"] = Tensor({channels}, 1.0);
  state[prefix + ".bias"] = Tensor({channels}, 0.0);
  state[prefix + ".running_mean"] = Tensor({channels}, 0.0);
  state[prefix + ".running_var"] = Tensor({channels}, 1.0);
}

Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

std::size_t EncoderConfig::feature_height() const {
  std::size_t h = input_height;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const kernels::ConvGeometry g{1, h, 1, 3, block_stride(*this, b), 1};
    h = g.out_height();
  }
  return h;
}

std::size_t EncoderConfig::feature_width() const {
  std::size_t w = input_width;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const kernels::ConvGeometry g{1, 1, w, 3, block_stride(*this, b), 1};
    w = g.out_width();
  }
  return w;
}

void EncoderConfig::validate(std::size_t parts) const {
  if (widths.empty() || std::find(widths.begin(), widths.end(), 0u) != widths.end())
    throw ConfigError("encoder: block widths must be positive");
  if (input_height == 0 || input_width == 0 || input_channels == 0)
    throw ConfigError("encoder: input dimensions must be positive");
  if (final_stride == 0) throw ConfigError("encoder: final stride must be positive");
  if (parts == 0) throw ConfigError("encoder: part count must be positive");
  const std::size_t h = feature_height();
  if (h == 0 || feature_width() == 0) throw ConfigError("encoder: feature map collapsed to zero size");
  if (h % parts != 0)
    throw ConfigError("encoder: feature height " + std::to_string(h) + " is not divisible by " +
                      std::to_string(parts) + " parts");
}

std::vector<FeatureMap> partition(const FeatureMap& map, std::size_t parts) {
  if (map.rank() != 3 && map.rank() != 4)
    throw InputError("partition: expected a C x H x W map or a batch, got " + shape_string(map.shape()));
  const bool batched = map.rank() == 4;
  const std::size_t n = batched ? map.dim(0) : 1;
  const std::size_t c = map.dim(batched ? 1 : 0), h = map.dim(batched ? 2 : 1),
                    w = map.dim(batched ? 3 : 2);
  if (parts == 0 || h % parts != 0)
    throw ConfigError("partition: height " + std::to_string(h) + " is not divisible by " +
                      std::to_string(parts));
  const std::size_t ph = h / parts;
  std::vector<FeatureMap> out;
  out.reserve(parts);
  for (std::size_t j = 0; j < parts; ++j) {
    FeatureMap part(batched ? Shape{n, c, ph, w} : Shape{c, ph, w});
    for (std::size_t i = 0; i < n * c; ++i)
      std::copy_n(map.data() + (i * h + j * ph) * w, ph * w, part.data() + i * ph * w);
    out.push_back(std::move(part));
  }
  return out;
}

FeatureMap concat_height(const std::vector<FeatureMap>& parts) {
  if (parts.empty()) throw InputError("concat_height: no parts");
  const auto& first = parts.front();
  const bool batched = first.rank() == 4;
  const std::size_t n = batched ? first.dim(0) : 1;
  const std::size_t c = first.dim(batched ? 1 : 0), ph = first.dim(batched ? 2 : 1),
                    w = first.dim(batched ? 3 : 2);
  const std::size_t h = ph * parts.size();
  FeatureMap out(batched ? Shape{n, c, h, w} : Shape{c, h, w});
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (parts[j].shape() != first.shape()) throw InputError("concat_height: parts differ in shape");
    for (std::size_t i = 0; i < n * c; ++i)
      std::copy_n(parts[j].data() + i * ph * w, ph * w, out.data() + (i * h + j * ph) * w);
  }
  return out;
}

EmbeddingVector gap(const FeatureMap& map) {
  if (map.rank() != 3 && map.rank() != 4)
    throw InputError("gap: expected a C x H x W map or a batch, got " + shape_string(map.shape()));
  const bool batched = map.rank() == 4;
  const std::size_t rows = batched ? map.dim(0) * map.dim(1) : map.dim(0);
  const std::size_t spatial = map.size() / std::max<std::size_t>(rows, 1);
  EmbeddingVector out(batched ? Shape{map.dim(0), map.dim(1)} : Shape{map.dim(0)});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = map.data() + r * spatial;
    double s = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) s += p[i];
    out[r] = s / static_cast<double>(spatial);
  }
  return out;
}

FeatureMap gap_backward(const EmbeddingVector& d_pooled, std::size_t height, std::size_t width) {
  const std::size_t spatial = height * width;
  FeatureMap out({d_pooled.dim(0), d_pooled.dim(1), height, width});
  for (std::size_t r = 0; r < d_pooled.size(); ++r)
    std::fill_n(out.data() + r * spatial, spatial, d_pooled[r] / static_cast<double>(spatial));
  return out;
}

ExpertHead ExpertHead::identity(std::size_t channels) {
  ExpertHead head{Tensor({channels, channels}), Tensor({channels}), Tensor({channels}, 1.0),
                  Tensor({channels}), Tensor({channels}), Tensor({channels}, 1.0)};
  for (std::size_t c = 0; c < channels; ++c) head.weight.at(c, c) = 1.0;
  return head;
}

EmbeddingVector expert_forward(const EmbeddingVector& v, ExpertHead& head, bool training,
                               const layers::BatchNormSettings& settings) {
  const bool single = v.rank() == 1;
  if (single && training)
    throw InputError("expert_forward: training mode needs a batch of vectors");
  Tensor batch = v;
  if (single) batch.reshape({1, v.size()});
  if (batch.rank() != 2 || batch.dim(1) != head.weight.dim(1))
    throw InputError("expert_forward: input " + shape_string(v.shape()) + " does not match head width " +
                     std::to_string(head.weight.dim(1)));
  const Tensor fc = layers::linear_forward(batch, head.weight, head.bias);
  layers::BatchNormCache cache;
  Tensor out = layers::batchnorm_forward(fc, head.scale, head.shift, head.running_mean,
                                         head.running_var, training, settings, &cache);
  if (training) layers::update_running_stats(head.running_mean, head.running_var, cache, settings);
  if (single) out.reshape({v.size()});
  return out;
}

Tensor classify(const EmbeddingVector& v, const ClassifierHead& head) {
  const bool single = v.rank() == 1;
  Tensor batch = v;
  if (single) batch.reshape({1, v.size()});
  Tensor logits = layers::linear_forward(batch, head.weight, head.bias);
  if (single) logits.reshape({head.weight.dim(0)});
  return logits;
}

ReidModel::ReidModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.encoder.validate(config_.parts);
  if (config_.classes < 2) throw ConfigError("model: classifier needs at least 2 classes");
  Rng rng(seed);
  const auto& enc = config_.encoder;
  std::size_t in = enc.input_channels;
  for (std::size_t b = 0; b < enc.widths.size(); ++b) {
    const std::size_t out = enc.widths[b];
    state_[block_name(b) + ".conv.weight"] = kaiming_normal({out, in, 3, 3}, in * 9, rng);
    add_batchnorm(state_, block_name(b) + ".bn", out);
    in = out;
  }
  const std::size_t c = enc.channels();
  for (std::size_t j = 1; j <= config_.parts; ++j) {
    state_[expert_name(j) + ".fc.weight"] = fan_in_uniform({c, c}, c, rng);
    state_[expert_name(j) + ".fc.bias"] = Tensor({c});
    add_batchnorm(state_, expert_name(j) + ".bn", c);
  }
  reset_classifier(config_.classes, rng);
}

void ReidModel::load_state(const ModelState& state) {
  require_same_layout(state_, state, "load_state");
  state_ = state;
}

void ReidModel::zero_grad() {
  for (auto& [name, value] : state_) {
    if (is_buffer(name)) continue;
    auto it = grads_.find(name);
    if (it == grads_.end() || it->second.shape() != value.shape())
      grads_[name] = Tensor(value.shape());
    else
      it->second.fill(0.0);
  }
}

void ReidModel::reset_classifier(std::size_t classes, Rng& rng) {
  if (classes < 2) throw ConfigError("model: classifier needs at least 2 classes");
  config_.classes = classes;
  const std::size_t c = config_.encoder.channels();
  Tensor weight({classes, c});
  std::normal_distribution<double> dist(0.0, 0.001);
  for (double& v : weight.values()) v = dist(rng);
  state_["classifier.weight"] = std::move(weight);
  state_["classifier.bias"] = Tensor({classes});
  grads_.erase("classifier.weight");
  grads_.erase("classifier.bias");
}

FeatureMap ReidModel::encode(const Tensor& images) const {
  const auto& enc = config_.encoder;
  if (images.rank() != 4 || images.dim(1) != enc.input_channels || images.dim(2) != enc.input_height ||
      images.dim(3) != enc.input_width)
    throw InputError("encode: images " + shape_string(images.shape()) + " do not match encoder input " +
                     shape_string({enc.input_channels, enc.input_height, enc.input_width}));
  Tensor x = images;
  for (std::size_t b = 0; b < enc.widths.size(); ++b) {
    const std::string bn = block_name(b) + ".bn";
    x = layers::conv2d_forward(x, param(block_name(b) + ".conv.weight"), block_stride(enc, b), nullptr);
    x = layers::batchnorm_forward(x, param(bn + ".weight"), param(bn + ".bias"),
                                  param(bn + ".running_mean"), param(bn + ".running_var"), false,
                                  config_.batchnorm, nullptr);
    layers::relu_inplace(x);
  }
  return x;
}

ReidModel::TrainOutput ReidModel::forward_train(const Tensor& images) {
  const auto& enc = config_.encoder;
  if (images.rank() != 4 || images.dim(1) != enc.input_channels || images.dim(2) != enc.input_height ||
      images.dim(3) != enc.input_width)
    throw InputError("forward_train: images " + shape_string(images.shape()) +
                     " do not match encoder input");
  TrainOutput out;
  out.blocks.resize(enc.widths.size());
  Tensor x = images;
  for (std::size_t b = 0; b < enc.widths.size(); ++b) {
    auto& blk = out.blocks[b];
    const std::string bn = block_name(b) + ".bn";
    x = layers::conv2d_forward(x, param(block_name(b) + ".conv.weight"), block_stride(enc, b), &blk.conv);
    x = layers::batchnorm_forward(x, param(bn + ".weight"), param(bn + ".bias"),
                                  param(bn + ".running_mean"), param(bn + ".running_var"), true,
                                  config_.batchnorm, &blk.bn);
    layers::update_running_stats(param(bn + ".running_mean"), param(bn + ".running_var"), blk.bn,
                                 config_.batchnorm);
    layers::relu_inplace(x);
    blk.activation = x;
  }
  out.map = std::move(x);
  out.global = gap(out.map);
  const auto parts = partition(out.map, config_.parts);
  out.expert_bn.resize(config_.parts);
  for (std::size_t j = 0; j < config_.parts; ++j) {
    const std::string name = expert_name(j + 1);
    out.pooled.push_back(gap(parts[j]));
    Tensor fc = layers::linear_forward(out.pooled[j], param(name + ".fc.weight"), param(name + ".fc.bias"));
    out.local.push_back(layers::batchnorm_forward(fc, param(name + ".bn.weight"), param(name + ".bn.bias"),
                                                  param(name + ".bn.running_mean"),
                                                  param(name + ".bn.running_var"), true,
                                                  config_.batchnorm, &out.expert_bn[j]));
    layers::update_running_stats(param(name + ".bn.running_mean"), param(name + ".bn.running_var"),
                                 out.expert_bn[j], config_.batchnorm);
    out.expert_fc_out.push_back(std::move(fc));
  }
  out.logits = layers::linear_forward(out.global, param("classifier.weight"), param("classifier.bias"));
  return out;
}

void ReidModel::backward(const TrainOutput& out, const Gradients& g) {
  if (grads_.empty()) zero_grad();
  const std::size_t n = out.map.dim(0), c = out.map.dim(1), h = out.map.dim(2), w = out.map.dim(3);
  Tensor d_global = g.global.empty() ? Tensor({n, c}) : g.global;
  if (!g.logits.empty()) {
    const Tensor dx = layers::linear_backward(g.logits, out.global, param("classifier.weight"),
                                              grads_.at("classifier.weight"), grads_.at("classifier.bias"));
    for (std::size_t i = 0; i < d_global.size(); ++i) d_global[i] += dx[i];
  }
  FeatureMap d_map = gap_backward(d_global, h, w);

  std::vector<FeatureMap> d_parts;
  const std::size_t ph = h / config_.parts;
  for (std::size_t j = 0; j < config_.parts; ++j) {
    Tensor d_pooled({n, c});
    if (j < g.pooled.size() && !g.pooled[j].empty()) d_pooled = g.pooled[j];
    if (j < g.local.size() && !g.local[j].empty()) {
      const std::string name = expert_name(j + 1);
      const Tensor d_fc = layers::batchnorm_backward(g.local[j], param(name + ".bn.weight"), out.expert_bn[j],
                                                     grads_.at(name + ".bn.weight"), grads_.at(name + ".bn.bias"));
      const Tensor dx = layers::linear_backward(d_fc, out.pooled[j], param(name + ".fc.weight"),
                                                grads_.at(name + ".fc.weight"), grads_.at(name + ".fc.bias"));
      for (std::size_t i = 0; i < d_pooled.size(); ++i) d_pooled[i] += dx[i];
    }
    d_parts.push_back(gap_backward(d_pooled, ph, w));
  }
  const FeatureMap d_local_map = concat_height(d_parts);
  for (std::size_t i = 0; i < d_map.size(); ++i) d_map[i] += d_local_map[i];

  Tensor d = std::move(d_map);
  for (std::size_t b = config_.encoder.widths.size(); b-- > 0;) {
    const auto& blk = out.blocks[b];
    const std::string bn = block_name(b) + ".bn";
    layers::relu_backward_inplace(d, blk.activation);
    d = layers::batchnorm_backward(d, param(bn + ".weight"), blk.bn, grads_.at(bn + ".weight"),
                                   grads_.at(bn + ".bias"));
    // The input image gradient is never needed.
    d = layers::conv2d_backward(d, param(block_name(b) + ".conv.weight"), blk.conv,
                                grads_.at(block_name(b) + ".conv.weight"), /*input_grad=*/b > 0);
  }
}

ExpertHead ReidModel::expert(std::size_t part) const {
  const std::string name = expert_name(part);
  return ExpertHead{param(name + ".fc.weight"),       param(name + ".fc.bias"),
                    param(name + ".bn.weight"),       param(name + ".bn.bias"),
                    param(name + ".bn.running_mean"), param(name + ".bn.running_var")};
}

ClassifierHead ReidModel::classifier() const {
  return ClassifierHead{param("classifier.weight"), param("classifier.bias")};
}

FeatureMap encode(const Tensor& image, const ReidModel& model) {
  if (image.rank() != 3) throw InputError("encode: expected a 3-D image, got " + shape_string(image.shape()));
  Tensor batch = image;
  batch.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  FeatureMap map = model.encode(batch);
  map.reshape({map.dim(1), map.dim(2), map.dim(3)});
  return map;
}

}  // namespace lf2
