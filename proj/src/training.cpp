#include "lf2/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "lf2/errors.hpp"
#include "lf2/mean_teacher.hpp"

namespace lf2 {
namespace {

constexpr std::size_t kExtractChunk = 64;

// Independent stream seed for one purpose (sampler, augmentation, ...).
std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(salt), std::uint32_t(salt >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[1]) << 32) | words[0];
}

void require_finite_grads(const ModelState& grads, const std::string& where) {
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) throw TrainingAbort(where + ": non-finite gradient in " + name);
}

Tensor augmented_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices, Phase phase,
                       const AugmentOptions& options, Rng& rng) {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) {
    Sample s;
    s.image = augment(samples.at(i).image, phase, rng, options);
    picked.push_back(std::move(s));
  }
  return stack_images(picked);
}

std::vector<int> gather(std::span<const int> labels, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

std::size_t iterations_per_epoch(const StageSchedule& s, std::size_t samples, std::size_t batch) {
  return s.iterations ? s.iterations : std::max<std::size_t>(1, (samples + batch - 1) / batch);
}

void copy_rows(const Tensor& src, Tensor& dst, std::size_t begin) {
  std::copy_n(src.data(), src.size(), dst.data() + begin * (dst.size() / dst.dim(0)));
}

}  // namespace

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoFusion: return "no-fm";
    case Ablation::kBaseline: return "baseline";
  }
  return "full";
}

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::kFull;
  if (name == "no-fm") return Ablation::kNoFusion;
  if (name == "baseline") return Ablation::kBaseline;
  throw ConfigError("unknown ablation '" + name + "' (expected full, no-fm or baseline)");
}

double learning_rate(const StageSchedule& schedule, std::size_t epoch) {
  double lr = schedule.lr;
  for (std::size_t d : schedule.decay_epochs)
    if (epoch >= d) lr *= schedule.decay_factor;
  return lr;
}

void TrainConfig::validate() const {
  model.encoder.validate(model.parts);
  if (model.parts < 1) throw ConfigError("parts (K) must be at least 1");
  if (reduction == 0 || model.encoder.channels() % reduction != 0)
    throw ConfigError("reduction ratio must divide the channel count");
  for (const auto* s : {&pretrain, &finetune}) {
    if (!(s->lr > 0.0) || !std::isfinite(s->lr)) throw ConfigError("learning rates must be positive");
    if (!(s->decay_factor > 0.0)) throw ConfigError("decay factor must be positive");
  }
  if (finetune.epochs < 1) throw ConfigError("finetune epochs must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw ConfigError("EMA momentum must lie in [0, 1)");
  for (double w : {weights.alpha, weights.lambda, weights.gamma, weights.margin})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
  if (cluster.clusters < 2) throw ConfigError("cluster count must be at least 2");
  if (sampler.identities < 2 || sampler.instances < 2)
    throw ConfigError("sampler needs at least 2 identities and 2 instances");
}

PretrainResult pretrain_source(const std::vector<Sample>& source, const TrainConfig& config, const ReidModel* init) {
  config.validate();
  if (source.empty()) throw InputError("pretrain: empty source dataset");
  std::vector<int> labels;
  int classes = 0;
  for (const auto& s : source) {
    if (s.identity < 0) throw InputError("pretrain: source sample " + s.source + " has no identity");
    labels.push_back(s.identity);
    classes = std::max(classes, s.identity + 1);
  }
  ModelConfig mc = config.model;
  mc.classes = std::size_t(classes);
  PretrainResult result{init ? *init : ReidModel(mc, config.seed), {}};
  ReidModel& model = result.model;
  if (model.classifier().weight.dim(0) != std::size_t(classes))
    throw InputError("pretrain: initial model has " + std::to_string(model.classifier().weight.dim(0)) +
                     " classes, data has " + std::to_string(classes));
  if (config.pretrain.epochs == 0) return result;

  Adam adam({0.9, 0.999, 1e-8, config.weight_decay});
  Rng rng(mix(config.seed, 0xA06));
  SamplerConfig sc = config.sampler;
  sc.seed = mix(config.seed, 0x5A3);
  PkSampler sampler(labels, sc);
  const std::size_t iterations = iterations_per_epoch(config.pretrain, source.size(), sc.batch_size());

  for (std::size_t epoch = 0; epoch < config.pretrain.epochs; ++epoch) {
    const double lr = learning_rate(config.pretrain, epoch);
    double epoch_loss = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      const auto batch = sampler.next();
      const Tensor images = augmented_batch(source, batch, Phase::kSourcePretrain, config.augment, rng);
      const std::vector<int> y = gather(labels, batch);
      model.zero_grad();
      const auto out = model.forward_train(images);
      const LossValue ce = cross_entropy(out.logits, y);
      const LossValue tri = hinge_triplet_loss(out.global, batch_hard_mine(out.global, y), config.weights.margin);
      const double total = source_loss(ce.value, tri.value, config.weights.lambda);
      if (!std::isfinite(total))
        throw TrainingAbort("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                            std::to_string(it));
      ReidModel::Gradients g;
      g.logits = ce.grad;
      g.global = tri.grad;
      for (double& v : g.global.values()) v *= config.weights.lambda;
      model.backward(out, g);
      require_finite_grads(model.grads(), "pretrain");
      adam.step(model.state(), model.grads(), lr);
      result.log.push_back({"pretrain", epoch, it, lr, ce.value, tri.value, {}, total});
      epoch_loss += total;
    }
    spdlog::info("pretrain epoch {}/{} lr {:.2e} loss {:.4f}", epoch + 1, config.pretrain.epochs, lr,
                 epoch_loss / double(iterations));
  }
  return result;
}

FinetuneState init_finetune(const ReidModel& pretrained, const TrainConfig& config) {
  config.validate();
  Rng rng(mix(config.seed, 0xF05));
  FinetuneState s{pretrained, pretrained, FusionModule(config.model.parts, config.model.encoder.channels(),
                                                       config.reduction, rng),
                  Adam({0.9, 0.999, 1e-8, config.weight_decay})};
  s.teacher.load_state(init_teacher(pretrained.state()));
  return s;
}

IterationLosses step_iteration(FinetuneState& state, const Tensor& images, const std::vector<std::vector<int>>& labels,
                               const TrainConfig& config, double lr) {
  const std::size_t parts = config.model.parts;
  const bool baseline = config.ablation == Ablation::kBaseline;
  const bool fused = config.ablation == Ablation::kFull;
  const LossWeights& w = config.weights;
  const double gamma = baseline ? 0.0 : w.gamma;
  if (labels.empty()) throw InputError("step_iteration: no label views");
  if (!baseline && labels.size() != parts + 1)
    throw InputError("step_iteration: expected " + std::to_string(parts + 1) + " label views");

  state.student.zero_grad();
  state.fusion.zero_grad();
  const auto out = state.student.forward_train(images);
  const std::vector<int>& y0 = labels[0];

  IterationLosses losses;
  losses.parts.assign(parts, 0.0);
  const LossValue ce = cross_entropy(out.logits, y0);
  const LossValue tri = hinge_triplet_loss(out.global, batch_hard_mine(out.global, y0), w.margin);
  losses.cls = ce.value;
  losses.tri = tri.value;

  ReidModel::Gradients g;
  g.logits = ce.grad;
  for (double& v : g.logits.values()) v *= w.alpha;
  g.global = tri.grad;
  for (double& v : g.global.values()) v *= w.alpha * w.lambda;

  if (!baseline) {
    Tensor teacher_global;
    if (fused) teacher_global = gap(state.teacher.encode(images));
    g.local.resize(parts);
    g.pooled.resize(parts);
    for (std::size_t j = 0; j < parts; ++j) {
      const std::vector<int>& yj = labels[j + 1];
      const LossValue local =
          softmax_triplet_loss(out.local[j], batch_hard_mine(out.local[j], yj, MiningPolicy::kSkipUnpaired));
      losses.parts[j] = local.value;
      g.local[j] = local.grad;
      for (double& v : g.local[j].values()) v *= gamma;
      if (!fused) continue;

      // Fusion-side term: the FM output on the student's pooled part against
      // the labels that FM produced.
      const FusionParams params = state.fusion.params(j + 1);
      FusionBatchCache cache;
      const Tensor phi = fusion_features(out.pooled[j], teacher_global, params, &cache);
      const LossValue fuse_loss = softmax_triplet_loss(phi, batch_hard_mine(phi, yj, MiningPolicy::kSkipUnpaired));
      losses.parts[j] += fuse_loss.value;
      Tensor d_phi = fuse_loss.grad;
      for (double& v : d_phi.values()) v *= gamma;
      FusionGrads fg = FusionGrads::zeros_like(params);
      fusion_features_backward(d_phi, out.pooled[j], teacher_global, params, cache, fg);
      state.fusion.accumulate_grads(j + 1, fg);
    }
  }
  losses.total = total_target_loss(losses.cls, losses.tri, losses.parts, {w.alpha, w.lambda, gamma, w.margin});
  if (!std::isfinite(losses.total)) throw TrainingAbort("finetune: non-finite loss");

  state.student.backward(out, g);
  require_finite_grads(state.student.grads(), "finetune student");
  require_finite_grads(state.fusion.grads(), "finetune fusion");
  state.adam.step(state.student.state(), state.student.grads(), lr);
  if (fused) state.adam.step(state.fusion.state(), state.fusion.grads(), lr);
  ema_update(state.teacher.state(), state.student.state(), config.ema_momentum);
  return losses;
}

ClusteringFeatures extract_clustering_features(const FinetuneState& state, const std::vector<Sample>& samples,
                                               Ablation ablation) {
  if (samples.empty()) throw InputError("extract_clustering_features: no samples");
  const std::size_t n = samples.size(), c = state.teacher.config().encoder.channels();
  const std::size_t parts = state.teacher.config().parts;
  ClusteringFeatures f;
  f.global = Tensor({n, c});
  if (ablation != Ablation::kBaseline) f.parts.assign(parts, Tensor({n, c}));

  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += kExtractChunk) {
    const std::size_t end = std::min(n, begin + kExtractChunk);
    idx.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    const Tensor images = stack_images(samples, idx);
    const FeatureMap teacher_map = state.teacher.encode(images);
    const Tensor global = gap(teacher_map);
    copy_rows(global, f.global, begin);
    if (ablation == Ablation::kNoFusion) {
      const auto split = partition(teacher_map, parts);
      for (std::size_t j = 0; j < parts; ++j) copy_rows(gap(split[j]), f.parts[j], begin);
    } else if (ablation == Ablation::kFull) {
      const auto student_parts = partition(state.student.encode(images), parts);
      for (std::size_t j = 0; j < parts; ++j)
        copy_rows(fusion_features(gap(student_parts[j]), global, state.fusion.params(j + 1)), f.parts[j], begin);
    }
  }
  return f;
}

double EpochReport::mean_ari() const {
  if (ari.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double a : ari) s += a;
  return s / double(ari.size());
}

double cluster_purity(std::span<const int> clusters, std::span<const int> identities) {
  if (clusters.size() != identities.size() || clusters.empty())
    throw InputError("cluster_purity: label arrays must be non-empty and equal length");
  std::map<int, std::map<int, std::size_t>> table;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++table[clusters[i]][identities[i]];
  std::size_t majority = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [id, n] : counts) best = std::max(best, n);
    majority += best;
  }
  return double(majority) / double(clusters.size());
}

FinetuneResult finetune_target(const ReidModel& pretrained, const std::vector<Sample>& target,
                               const TrainConfig& config, const FinetuneHooks& hooks) {
  if (target.empty()) throw InputError("finetune: empty target dataset");
  FinetuneResult result{init_finetune(pretrained, config), {}, {}};
  FinetuneState& state = result.state;
  Rng rng(mix(config.seed, 0xA07));
  const bool has_truth = std::all_of(target.begin(), target.end(), [](const Sample& s) { return s.identity >= 0; });
  std::vector<int> truth;
  for (const auto& s : target) truth.push_back(s.identity);
  const std::size_t parts = config.model.parts;

  for (std::size_t epoch = 0; epoch < config.finetune.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const ClusteringFeatures features = extract_clustering_features(state, target, config.ablation);
    ClusterConfig cc = config.cluster;
    cc.seed = mix(config.seed, 0xC100 + epoch);
    PseudoLabelSets labels;
    try {
      labels = build_pseudo_datasets(features.global, features.parts, cc);
    } catch (const InputError& e) {
      throw TrainingAbort("finetune epoch " + std::to_string(epoch) + ": clustering failed: " + e.what());
    }

    EpochReport report;
    report.epoch = epoch;
    for (std::size_t j = 1; j < labels.views.size(); ++j)
      report.ari.push_back(consistency_ari(labels.views[0], labels.views[j]));
    if (has_truth) {
      report.purity = cluster_purity(labels.views[0], truth);
      for (std::size_t j = 1; j < labels.views.size(); ++j)
        report.view_purity.push_back(cluster_purity(labels.views[j], truth));
    }
    for (const auto& v : labels.views) report.sizes.push_back(summarize_cluster_sizes(v));

    state.student.reset_classifier(cc.clusters, rng);
    state.teacher.state()["classifier.weight"] = state.student.state().at("classifier.weight");
    state.teacher.state()["classifier.bias"] = state.student.state().at("classifier.bias");
    state.adam.reset("classifier.");
    if (hooks.on_epoch_start) hooks.on_epoch_start(epoch, state);

    SamplerConfig sc = config.sampler;
    sc.seed = mix(config.seed, 0x5A30 + epoch);
    PkSampler sampler(labels.views[0], sc);
    const double lr = learning_rate(config.finetune, epoch);
    const std::size_t iterations = iterations_per_epoch(config.finetune, target.size(), sc.batch_size());
    report.parts.assign(parts, 0.0);
    for (std::size_t it = 0; it < iterations; ++it) {
      const auto batch = sampler.next();
      const Tensor images = augmented_batch(target, batch, Phase::kTargetFinetune, config.augment, rng);
      std::vector<std::vector<int>> batch_labels;
      for (const auto& view : labels.views) batch_labels.push_back(gather(view, batch));
      IterationLosses l;
      try {
        l = step_iteration(state, images, batch_labels, config, lr);
      } catch (const TrainingAbort& e) {
        throw TrainingAbort("finetune epoch " + std::to_string(epoch) + ", iteration " + std::to_string(it) +
                            ": " + e.what());
      }
      if (hooks.after_step) hooks.after_step(state);
      result.log.push_back({"finetune", epoch, it, lr, l.cls, l.tri, l.parts, l.total});
      report.cls += l.cls / double(iterations);
      report.tri += l.tri / double(iterations);
      report.total += l.total / double(iterations);
      for (std::size_t j = 0; j < parts; ++j) report.parts[j] += l.parts[j] / double(iterations);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    spdlog::info("finetune[{}] epoch {}/{} loss {:.4f} ari {:.3f} purity {:.3f} ({:.1f}s)",
                 ablation_name(config.ablation), epoch + 1, config.finetune.epochs, report.total, report.mean_ari(),
                 report.purity, seconds);
    if (hooks.on_epoch_end) hooks.on_epoch_end(report, labels);
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace lf2
