// lf2: pretrain, finetune, evaluate, report-consistency, synth-gen.
// Exit status: 0 success, 1 runtime failure, 2 usage/config/input error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "lf2/checkpoint.hpp"
#include "lf2/clustering.hpp"
#include "lf2/config.hpp"
#include "lf2/errors.hpp"
#include "lf2/evaluation.hpp"
#include "lf2/run.hpp"
#include "lf2/training.hpp"

namespace fs = std::filesystem;
using namespace lf2;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration file")->required();
  cmd->add_option("--seed", c.seed, "Override the run seed");
  cmd->add_option("--output", c.output, "Output directory");
}

// File, then environment, then flags.
RunConfig resolve(const Common& c) {
  if (!fs::exists(c.config)) throw ConfigError("config file not found: " + c.config);
  RunConfig config = load_run_config(c.config);
  if (const char* dir = std::getenv("LF2_OUTPUT_DIR"); dir && *dir) config.output_dir = dir;
  if (const char* seed = std::getenv("LF2_SEED"); seed && *seed) {
    try {
      config.train.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw ConfigError(std::string("LF2_SEED is not an integer: ") + seed);
    }
  }
  if (c.seed) config.train.seed = *c.seed;
  if (!c.output.empty()) config.output_dir = c.output;
  return config;
}

std::vector<std::string> g_argv;

int cmd_pretrain(const Common& c) {
  RunConfig config = resolve(c);
  if (c.epochs) config.train.pretrain.epochs = *c.epochs;
  config.train.validate();
  const auto source = load_source(config);
  spdlog::info("pretrain: {} source images", source.size());
  const fs::path out = config.output_dir;
  write_manifest(out, config, "pretrain", c.config, g_argv);
  const PretrainResult r = pretrain_source(source, config.train);
  save_checkpoint(out / "pretrain.ckpt",
                  make_checkpoint(config, "pretrain", config.train.pretrain.epochs, r.model));
  write_loss_log(out / "pretrain_loss.csv", r.log);
  spdlog::info("wrote {}", (out / "pretrain.ckpt").string());
  return 0;
}

int cmd_finetune(const Common& c, const std::string& checkpoint_path, const std::string& ablation) {
  RunConfig config = resolve(c);
  if (c.epochs) config.train.finetune.epochs = *c.epochs;
  if (!ablation.empty()) config.train.ablation = parse_ablation(ablation);
  config.train.validate();
  const ReidModel pretrained = model_from_checkpoint(load_checkpoint(checkpoint_path), "student.", config);
  const auto target = load_target(config);
  spdlog::info("finetune ({}): {} target images", ablation_name(config.train.ablation), target.train.size());
  const fs::path out = config.output_dir;
  write_manifest(out, config, "finetune", c.config, g_argv);

  FinetuneHooks hooks;
  hooks.on_epoch_end = [&](const EpochReport& report, const PseudoLabelSets& labels) {
    append_label_sets(out / "labels.csv", report.epoch, labels);
  };
  const FinetuneResult r = finetune_target(pretrained, target.train, config.train, hooks);
  save_checkpoint(out / "finetune.ckpt",
                  make_checkpoint(config, "finetune", config.train.finetune.epochs, r.state.student,
                                  &r.state.teacher, &r.state.fusion));
  write_loss_log(out / "finetune_loss.csv", r.log);
  write_epoch_report(out / "report.csv", r.reports);
  spdlog::info("wrote {}", (out / "finetune.ckpt").string());
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint_path, const std::string& dataset,
                 bool global_only, const std::string& export_path) {
  RunConfig config = resolve(c);
  if (!dataset.empty()) config.target_root = dataset;
  const ReidModel teacher = inference_model(load_checkpoint(checkpoint_path), config);
  const auto target = load_target(config);
  const InferenceOptions options{global_only, true};
  const Tensor qf = dataset_features(target.query, teacher, options);
  const Tensor gf = dataset_features(target.gallery, teacher, options);

  auto ids = [](const std::vector<Sample>& s) {
    std::vector<int> v;
    for (const auto& x : s) v.push_back(x.key);
    return v;
  };
  auto cams = [](const std::vector<Sample>& s) {
    std::vector<int> v;
    for (const auto& x : s) {
      if (!x.camera) return std::vector<int>{};
      v.push_back(*x.camera);
    }
    return v;
  };
  const auto qi = ids(target.query), gi = ids(target.gallery);
  const auto qc = cams(target.query), gc = cams(target.gallery);
  const RetrievalMetrics m = evaluate({&qf, qi, qc}, {&gf, gi, gc});

  std::cout << fmt::format("mAP {:.4f}  CMC@1 {:.4f}  CMC@5 {:.4f}  CMC@10 {:.4f}  (queries {}, skipped {}, dim {})\n",
                           m.map, m.cmc1, m.cmc5, m.cmc10, m.evaluated, m.skipped, qf.dim(1));
  const fs::path out = config.output_dir;
  write_manifest(out, config, "evaluate", c.config, g_argv);
  const nlohmann::json j{{"map", m.map},         {"cmc1", m.cmc1},       {"cmc5", m.cmc5},
                         {"cmc10", m.cmc10},     {"evaluated", m.evaluated}, {"skipped", m.skipped},
                         {"dimension", qf.dim(1)}, {"global_only", global_only}, {"checkpoint", checkpoint_path}};
  std::ofstream(out / "metrics.json") << j.dump(2) << "\n";

  if (!export_path.empty()) {
    Tensor all({qf.dim(0) + gf.dim(0), qf.dim(1)});
    std::copy(qf.data(), qf.data() + qf.size(), all.data());
    std::copy(gf.data(), gf.data() + gf.size(), all.data() + qf.size());
    std::vector<int> ai = qi, ac = qc;
    ai.insert(ai.end(), gi.begin(), gi.end());
    ac.insert(ac.end(), gc.begin(), gc.end());
    export_embeddings(export_path, all, ai, ac);
    spdlog::info("wrote {} embeddings to {}", all.dim(0), export_path);
  }
  return 0;
}

int cmd_report(const std::string& labels_path, const std::string& output) {
  const LabelHistory h = read_label_sets(labels_path);
  std::ostringstream table;
  const std::size_t views = h.sets.empty() ? 0 : h.sets.front().views.size();
  table << "epoch";
  for (std::size_t j = 1; j < views; ++j) table << ",ari_0_" << j;
  table << ",mean_ari\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    table << h.epochs[e];
    double sum = 0.0;
    for (std::size_t j = 1; j < views; ++j) {
      const double a = consistency_ari(h.sets[e].views[0], h.sets[e].views[j]);
      sum += a;
      table << ',' << fmt::format("{:.6f}", a);
    }
    table << ',' << (views > 1 ? fmt::format("{:.6f}", sum / double(views - 1)) : "") << '\n';
  }
  std::cout << table.str();
  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw std::runtime_error("cannot write " + output);
    out << table.str();
  }
  return 0;
}

int cmd_synth(const std::string& output, std::size_t ids, std::size_t images, const std::string& style,
              std::uint64_t seed, std::size_t train, std::size_t query, std::size_t height, std::size_t width) {
  DomainStyle s;
  if (style == "A" || style == "source") s = DomainStyle::source();
  else if (style == "B" || style == "target") s = DomainStyle::target();
  else throw ConfigError("unknown style '" + style + "' (A or B)");
  if (train + query >= images) throw ConfigError("train + query must leave gallery images");
  const auto samples = synth_generate(ids, images, s, seed, {height, width});
  write_market_layout(output, split_per_identity(samples, train, query));
  spdlog::info("wrote {} images of style {} to {}", samples.size(), s.name, output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Unsupervised domain adaptation for person re-identification"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  Common common;
  auto* pre = app.add_subcommand("pretrain", "Supervised training on the labelled source domain");
  add_common(pre, common);
  pre->add_option("--epochs", common.epochs, "Override pretraining epochs");

  std::string checkpoint, ablation;
  auto* fine = app.add_subcommand("finetune", "Adapt a pretrained checkpoint to the unlabelled target domain");
  add_common(fine, common);
  fine->add_option("--epochs", common.epochs, "Override fine-tuning epochs");
  fine->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  fine->add_option("--ablation", ablation, "full, no-fm or baseline")
      ->check(CLI::IsMember({"full", "no-fm", "baseline"}));

  std::string dataset, export_path;
  bool global_only = false;
  auto* eval = app.add_subcommand("evaluate", "Retrieval metrics on the target query/gallery splits");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--dataset", dataset, "Market-style root overriding the configured target");
  eval->add_flag("--global-only", global_only, "Use the global feature only");
  eval->add_option("--export-embeddings", export_path, "Write query+gallery embeddings");

  std::string labels, report_out;
  auto* report = app.add_subcommand("report-consistency", "ARI between the global and part label sets per epoch");
  report->add_option("--labels", labels, "labels.csv written by finetune")->required();
  report->add_option("--output", report_out, "Also write the table here");

  std::string synth_out, style = "A";
  std::size_t ids = 32, images = 40, train = 30, query = 2, height = 64, width = 32;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth-gen", "Write a synthetic dataset in the Market layout");
  synth->add_option("--output", synth_out, "Dataset root")->required();
  synth->add_option("--style", style, "A (source) or B (target)");
  synth->add_option("--ids", ids);
  synth->add_option("--images", images, "Images per identity");
  synth->add_option("--train", train, "Training images per identity");
  synth->add_option("--query", query, "Query images per identity");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--height", height);
  synth->add_option("--width", width);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*pre) return cmd_pretrain(common);
    if (*fine) return cmd_finetune(common, checkpoint, ablation);
    if (*eval) return cmd_evaluate(common, checkpoint, dataset, global_only, export_path);
    if (*report) return cmd_report(labels, report_out);
    if (*synth) return cmd_synth(synth_out, ids, images, style, synth_seed, train, query, height, width);
  } catch (const std::invalid_argument& e) {  // ConfigError, InputError
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
