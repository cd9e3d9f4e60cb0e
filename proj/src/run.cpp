#include "lf2/run.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "json.hpp"
#include "lf2/errors.hpp"

namespace lf2 {
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

std::string fmt_double(double v) { return fmt::format("{:.9g}", v); }

}  // namespace

ImageSize image_size(const RunConfig& config) {
  return {config.train.model.encoder.input_height, config.train.model.encoder.input_width};
}

std::vector<Sample> load_source(const RunConfig& config) {
  if (!config.source_root.empty()) return load_dataset(config.source_root, Split::kTrain, image_size(config));
  return synth_generate(config.synthetic_ids, config.synthetic_images, DomainStyle::source(),
                        config.train.seed * 100 + 1, image_size(config));
}

SplitDataset load_target(const RunConfig& config) {
  if (!config.target_root.empty()) {
    SplitDataset d;
    d.train = load_dataset(config.target_root, Split::kTrain, image_size(config));
    d.query = load_dataset(config.target_root, Split::kQuery, image_size(config));
    d.gallery = load_dataset(config.target_root, Split::kGallery, image_size(config));
    // Target identities are unknown during adaptation.
    for (auto& s : d.train) s.identity = -1;
    return d;
  }
  if (config.synthetic_train + config.synthetic_query >= config.synthetic_images)
    throw ConfigError("synthetic split leaves no gallery images");
  return split_per_identity(synth_generate(config.synthetic_ids, config.synthetic_images, DomainStyle::target(),
                                           config.train.seed * 100 + 2, image_size(config)),
                            config.synthetic_train, config.synthetic_query);
}

Checkpoint make_checkpoint(const RunConfig& config, const std::string& stage, std::size_t epoch,
                           const ReidModel& student, const ReidModel* teacher, const FusionModule* fusion) {
  Checkpoint c;
  c.meta = {{"stage", stage},
            {"epoch", epoch},
            {"seed", config.train.seed},
            {"config_hash", config_hash(config)},
            {"ablation", ablation_name(config.train.ablation)},
            {"parts", config.train.model.parts},
            {"channels", config.train.model.encoder.channels()}};
  put_state(c, "student.", student.state());
  if (teacher) put_state(c, "teacher.", teacher->state());
  if (fusion) put_state(c, "fusion.", fusion->state());
  return c;
}

ReidModel model_from_checkpoint(const Checkpoint& checkpoint, const std::string& prefix, const RunConfig& config) {
  const ModelState state = take_state(checkpoint, prefix);
  const auto cls = state.find("classifier.weight");
  if (cls == state.end() || cls->second.rank() != 2)
    throw InputError("checkpoint has no " + prefix + " network");
  ModelConfig mc = config.train.model;
  mc.classes = cls->second.dim(0);
  ReidModel model(mc, config.train.seed);
  model.load_state(state);
  return model;
}

ReidModel inference_model(const Checkpoint& checkpoint, const RunConfig& config) {
  const bool has_teacher = checkpoint.arrays.count("teacher.classifier.weight") > 0;
  return model_from_checkpoint(checkpoint, has_teacher ? "teacher." : "student.", config);
}

void write_manifest(const fs::path& dir, const RunConfig& config, const std::string& stage,
                    const fs::path& config_path, const std::vector<std::string>& argv) {
  fs::create_directories(dir);
  const std::string snapshot = to_config_text(config);
  open_out(dir / ("config_" + stage + ".toml")) << snapshot;
  nlohmann::json m{{"stage", stage},
                   {"config_path", config_path.string()},
                   {"config_snapshot", snapshot},
                   {"config_hash", config_hash(config)},
                   {"output_dir", dir.string()},
                   {"seed", config.train.seed},
                   {"ablation", ablation_name(config.train.ablation)},
                   {"argv", argv}};
  open_out(dir / ("manifest_" + stage + ".json")) << m.dump(2) << "\n";
}

void write_loss_log(const fs::path& path, const std::vector<LossRecord>& log) {
  auto out = open_out(path);
  std::size_t parts = 0;
  for (const auto& r : log) parts = std::max(parts, r.parts.size());
  out << "stage,epoch,iteration,lr,cls,tri";
  for (std::size_t j = 1; j <= parts; ++j) out << ",part" << j;
  out << ",total\n";
  for (const auto& r : log) {
    out << r.stage << ',' << r.epoch << ',' << r.iteration << ',' << fmt_double(r.lr) << ',' << fmt_double(r.cls)
        << ',' << fmt_double(r.tri);
    for (std::size_t j = 0; j < parts; ++j) out << ',' << fmt_double(j < r.parts.size() ? r.parts[j] : 0.0);
    out << ',' << fmt_double(r.total) << '\n';
  }
}

void write_epoch_report(const fs::path& path, const std::vector<EpochReport>& reports) {
  auto out = open_out(path);
  std::size_t parts = 0;
  for (const auto& r : reports) parts = std::max({parts, r.parts.size(), r.ari.size()});
  out << "epoch,cls,tri";
  for (std::size_t j = 1; j <= parts; ++j) out << ",part" << j;
  out << ",total";
  for (std::size_t j = 1; j <= parts; ++j) out << ",ari_0_" << j;
  out << ",purity,clusters_min,clusters_max,clusters_mean,singletons\n";
  for (const auto& r : reports) {
    out << r.epoch << ',' << fmt_double(r.cls) << ',' << fmt_double(r.tri);
    for (std::size_t j = 0; j < parts; ++j) out << ',' << fmt_double(j < r.parts.size() ? r.parts[j] : 0.0);
    out << ',' << fmt_double(r.total);
    for (std::size_t j = 0; j < parts; ++j) out << ',' << (j < r.ari.size() ? fmt_double(r.ari[j]) : "");
    out << ',' << (std::isnan(r.purity) ? "" : fmt_double(r.purity));
    const ClusterSizeSummary s = r.sizes.empty() ? ClusterSizeSummary{} : r.sizes.front();
    out << ',' << s.min << ',' << s.max << ',' << fmt_double(s.mean) << ',' << s.singletons << '\n';
  }
}

void append_label_sets(const fs::path& path, std::size_t epoch, const PseudoLabelSets& labels) {
  const bool fresh = !fs::exists(path) || epoch == 0;
  auto out = open_out(path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) {
    out << "epoch,sample";
    for (std::size_t j = 0; j < labels.views.size(); ++j) out << ",view" << j;
    out << '\n';
  }
  for (std::size_t i = 0; i < labels.samples(); ++i) {
    out << epoch << ',' << i;
    for (const auto& v : labels.views) out << ',' << v[i];
    out << '\n';
  }
}

LabelHistory read_label_sets(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read label sets " + path.string());
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("epoch,sample,view0"))
    throw InputError(path.string() + " is not a label-set file");
  const std::size_t views = std::size_t(std::count(line.begin(), line.end(), ',')) - 1;
  LabelHistory h;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::vector<long> values;
    while (std::getline(fields, cell, ',')) {
      try {
        values.push_back(std::stol(cell));
      } catch (const std::exception&) {
        throw InputError(fmt::format("{}:{}: bad value '{}'", path.string(), row, cell));
      }
    }
    if (values.size() != views + 2) throw InputError(fmt::format("{}:{}: expected {} columns", path.string(), row, views + 2));
    const auto epoch = std::size_t(values[0]);
    if (h.epochs.empty() || h.epochs.back() != epoch) {
      h.epochs.push_back(epoch);
      h.sets.emplace_back();
      h.sets.back().views.resize(views);
    }
    for (std::size_t j = 0; j < views; ++j) h.sets.back().views[j].push_back(int(values[j + 2]));
  }
  return h;
}

}  // namespace lf2
