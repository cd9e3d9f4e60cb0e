#pragma once

// Two-stage recipe: supervised source pretraining, then per target epoch
// {extract clustering features -> k-means on every view -> fresh classifier
// -> iterations of the joint loss, each followed by the mean-teacher update}.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "lf2/clustering.hpp"
#include "lf2/data.hpp"
#include "lf2/fusion.hpp"
#include "lf2/losses.hpp"
#include "lf2/model.hpp"
#include "lf2/optim.hpp"

namespace lf2 {

enum class Ablation {
  kFull,      // fusion views from the FM
  kNoFusion,  // fusion views replaced by pooled parts of the teacher map
  kBaseline,  // global view only, gamma = 0
};
std::string ablation_name(Ablation a);
// Accepts "full", "no-fm", "baseline"; ConfigError otherwise.
Ablation parse_ablation(const std::string& name);

struct StageSchedule {
  std::size_t epochs = 80;
  std::size_t iterations = 0;  // per epoch; 0 means one pass over the data
  double lr = 3.5e-4;
  std::vector<std::size_t> decay_epochs;  // 0-based epochs where lr drops
  double decay_factor = 0.1;
};
double learning_rate(const StageSchedule& schedule, std::size_t epoch);

struct TrainConfig {
  ModelConfig model;
  std::size_t reduction = 4;
  StageSchedule pretrain{80, 0, 3.5e-4, {40, 70}, 0.1};
  StageSchedule finetune{80, 400, 3.5e-4, {}, 0.1};
  double weight_decay = 5e-4;
  double ema_momentum = 0.999;
  LossWeights weights;
  ClusterConfig cluster{500, 300, 10, 0, true};
  SamplerConfig sampler{16, 4, 0};
  AugmentOptions augment;
  Ablation ablation = Ablation::kFull;
  std::uint64_t seed = 1;

  // ConfigError on non-positive rates, momentum outside [0, 1), etc.
  void validate() const;
};

struct LossRecord {
  std::string stage;
  std::size_t epoch = 0, iteration = 0;
  double lr = 0.0;
  double cls = 0.0, tri = 0.0;
  std::vector<double> parts;
  double total = 0.0;
};

struct PretrainResult {
  ReidModel model;
  std::vector<LossRecord> log;
};

// Trains a fresh model (or `init` when given) on labelled source samples with
// cross-entropy + lambda * hinge triplet. TrainingAbort on a non-finite loss.
PretrainResult pretrain_source(const std::vector<Sample>& source, const TrainConfig& config,
                               const ReidModel* init = nullptr);

// Everything the fine-tuning loop mutates.
struct FinetuneState {
  ReidModel student;
  ReidModel teacher;
  FusionModule fusion;
  Adam adam;
};

FinetuneState init_finetune(const ReidModel& pretrained, const TrainConfig& config);

struct IterationLosses {
  double cls = 0.0, tri = 0.0;
  std::vector<double> parts;  // one per part; zero under the baseline
  double total = 0.0;
};

// One optimizer step on the student and FM given a batch and its per-view
// labels (labels[0] = global view, labels[j] = view j), then the EMA update.
// TrainingAbort on non-finite loss or gradients.
IterationLosses step_iteration(FinetuneState& state, const Tensor& images,
                               const std::vector<std::vector<int>>& labels, const TrainConfig& config,
                               double lr);

// Inference-mode features that feed k-means: view 0 is gap of the teacher
// map, views 1..K depend on the ablation (empty under the baseline).
struct ClusteringFeatures {
  Tensor global;
  std::vector<Tensor> parts;
};
ClusteringFeatures extract_clustering_features(const FinetuneState& state, const std::vector<Sample>& samples,
                                               Ablation ablation);

struct EpochReport {
  std::size_t epoch = 0;
  double cls = 0.0, tri = 0.0, total = 0.0;
  std::vector<double> parts;
  std::vector<double> ari;  // ARI(Y0, Yj) for j = 1..K
  double purity = std::numeric_limits<double>::quiet_NaN();  // view 0, synthetic data only
  std::vector<double> view_purity;                            // views 1..K
  std::vector<ClusterSizeSummary> sizes;

  double mean_ari() const;
};

struct FinetuneHooks {
  // Called after clustering, once the fresh classifier is in place.
  std::function<void(std::size_t epoch, const FinetuneState&)> on_epoch_start;
  // Called after every iteration (optimizer step and EMA update).
  std::function<void(const FinetuneState&)> after_step;
  std::function<void(const EpochReport&, const PseudoLabelSets&)> on_epoch_end;
};

struct FinetuneResult {
  FinetuneState state;
  std::vector<EpochReport> reports;
  std::vector<LossRecord> log;
};

FinetuneResult finetune_target(const ReidModel& pretrained, const std::vector<Sample>& target,
                               const TrainConfig& config, const FinetuneHooks& hooks = {});

// Fraction of samples whose cluster's majority identity matches their own.
double cluster_purity(std::span<const int> clusters, std::span<const int> identities);

}  // namespace lf2
