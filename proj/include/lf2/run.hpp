#pragma once

// Glue shared by the command-line tool and the acceptance suite: dataset
// resolution (directory or synthetic), checkpoint packing and run artifacts.

#include <filesystem>
#include <string>
#include <vector>

#include "lf2/checkpoint.hpp"
#include "lf2/clustering.hpp"
#include "lf2/config.hpp"
#include "lf2/data.hpp"
#include "lf2/training.hpp"

namespace lf2 {

ImageSize image_size(const RunConfig& config);

// Labelled source training set: `<source>/bounding_box_train`, or a synthetic
// style-A set when no source root is configured.
std::vector<Sample> load_source(const RunConfig& config);
// Target train/query/gallery: the three Market directories, or a synthetic
// style-B set split per identity.
SplitDataset load_target(const RunConfig& config);

// stage = "pretrain" stores the model under "student."; "finetune" also
// stores "teacher." and "fusion.".
Checkpoint make_checkpoint(const RunConfig& config, const std::string& stage, std::size_t epoch,
                           const ReidModel& student, const ReidModel* teacher = nullptr,
                           const FusionModule* fusion = nullptr);
// Rebuilds a network from `prefix` arrays. The classifier size comes from the
// checkpoint; InputError if the arrays do not fit the configured model.
ReidModel model_from_checkpoint(const Checkpoint& checkpoint, const std::string& prefix, const RunConfig& config);
// Teacher when present, else the student.
ReidModel inference_model(const Checkpoint& checkpoint, const RunConfig& config);

// manifest_<stage>.json and config_<stage>.toml (the resolved snapshot) in `dir`.
void write_manifest(const std::filesystem::path& dir, const RunConfig& config, const std::string& stage,
                    const std::filesystem::path& config_path, const std::vector<std::string>& argv);

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log);
void write_epoch_report(const std::filesystem::path& path, const std::vector<EpochReport>& reports);

// One row per (epoch, sample): epoch,sample,view0,...,viewK.
void append_label_sets(const std::filesystem::path& path, std::size_t epoch, const PseudoLabelSets& labels);
struct LabelHistory {
  std::vector<std::size_t> epochs;
  std::vector<PseudoLabelSets> sets;
};
LabelHistory read_label_sets(const std::filesystem::path& path);

}  // namespace lf2
