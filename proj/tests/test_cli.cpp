#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "lf2/checkpoint.hpp"
#include "lf2/config.hpp"
#include "lf2/evaluation.hpp"
#include "lf2/model.hpp"

using namespace lf2;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "lf2_test_cli";

constexpr const char* kTiny = R"(
[data]
synthetic_ids = 6
synthetic_images = 8
synthetic_train = 5
synthetic_query = 1
[model]
height = 32
width = 16
widths = [8, 8, 8, 8]
[pretrain]
epochs = 1
iterations = 2
decay_epochs = []
[finetune]
epochs = 2
iterations = 2
ema_momentum = 0.9
[cluster]
clusters = 4
restarts = 2
[sampler]
identities = 3
instances = 2
)";

int lf2(const std::string& args) {
  const std::string cmd = std::string(LF2_CLI_PATH) + " -q " + args + " > " + (kRoot / "stdout.txt").string() +
                          " 2> " + (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const fs::path& p) {
  const std::string s = slurp(p);
  return std::size_t(std::count(s.begin(), s.end(), '\n'));
}

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    std::ofstream(kRoot / "tiny.toml") << kTiny;
    unsetenv("LF2_OUTPUT_DIR");
    unsetenv("LF2_SEED");
  }
  std::string config = (kRoot / "tiny.toml").string();
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "usage and input errors exit with 2") {
  CHECK(lf2("") == 2);
  CHECK(lf2("train --config " + config) == 2);
  CHECK(lf2("pretrain --config /nonexistent.toml") == 2);
  CHECK(lf2("finetune --config " + config + " --checkpoint x --ablation fm") == 2);
  std::ofstream(kRoot / "bad.toml") << "[model]\ndepth = 3\n";
  CHECK(lf2("pretrain --config " + (kRoot / "bad.toml").string()) == 2);
  std::ofstream(kRoot / "nodata.toml") << "[data]\nsource = \"no_such_dataset\"\n";
  CHECK(lf2("pretrain --config " + (kRoot / "nodata.toml").string() + " --output " + (kRoot / "o").string()) == 2);
  CHECK(lf2("evaluate --config " + config + " --checkpoint " + (kRoot / "none.ckpt").string()) == 2);
  CHECK(lf2("report-consistency --labels " + (kRoot / "none.csv").string()) == 2);
}

TEST_CASE_FIXTURE(Fixture, "pretrain is reproducible and epochs 0 keeps the initialization") {
  const fs::path a = kRoot / "a", b = kRoot / "b", z = kRoot / "z";
  REQUIRE(lf2("pretrain --config " + config + " --seed 3 --output " + a.string()) == 0);
  REQUIRE(lf2("pretrain --config " + config + " --seed 3 --output " + b.string()) == 0);
  CHECK(slurp(a / "pretrain.ckpt") == slurp(b / "pretrain.ckpt"));
  CHECK(slurp(a / "pretrain_loss.csv") == slurp(b / "pretrain_loss.csv"));
  CHECK(lines(a / "pretrain_loss.csv") == 3);

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest_pretrain.json"));
  CHECK(manifest.at("seed") == 3);
  CHECK(manifest.at("stage") == "pretrain");
  CHECK(manifest.at("output_dir") == a.string());

  // Re-running from the snapshot reproduces the checkpoint.
  REQUIRE(lf2("pretrain --config " + (a / "config_pretrain.toml").string() + " --output " + b.string()) == 0);
  CHECK(slurp(a / "pretrain.ckpt") == slurp(b / "pretrain.ckpt"));

  REQUIRE(lf2("pretrain --config " + config + " --seed 3 --epochs 0 --output " + z.string()) == 0);
  const Checkpoint c = load_checkpoint(z / "pretrain.ckpt");
  RunConfig rc = load_run_config(config);
  ModelConfig mc = rc.train.model;
  mc.classes = 6;
  const ReidModel init(mc, 3);
  CHECK(take_state(c, "student.") == init.state());
}

TEST_CASE_FIXTURE(Fixture, "environment overrides apply and flags win") {
  setenv("LF2_OUTPUT_DIR", (kRoot / "env").c_str(), 1);
  setenv("LF2_SEED", "7", 1);
  REQUIRE(lf2("pretrain --config " + config + " --epochs 0") == 0);
  const auto m = nlohmann::json::parse(slurp(kRoot / "env" / "manifest_pretrain.json"));
  CHECK(m.at("seed") == 7);
  REQUIRE(lf2("pretrain --config " + config + " --epochs 0 --seed 8") == 0);
  CHECK(nlohmann::json::parse(slurp(kRoot / "env" / "manifest_pretrain.json")).at("seed") == 8);
  setenv("LF2_SEED", "seven", 1);
  CHECK(lf2("pretrain --config " + config + " --epochs 0") == 2);
  unsetenv("LF2_SEED");
  unsetenv("LF2_OUTPUT_DIR");
}

TEST_CASE_FIXTURE(Fixture, "finetune, evaluate and consistency report") {
  const fs::path pre = kRoot / "pre", fine = kRoot / "fine";
  REQUIRE(lf2("pretrain --config " + config + " --output " + pre.string()) == 0);
  const std::string ckpt = (pre / "pretrain.ckpt").string();
  for (const std::string ablation : {"full", "no-fm", "baseline"}) {
    CAPTURE(ablation);
    const fs::path out = fine / ablation;
    REQUIRE(lf2("finetune --config " + config + " --checkpoint " + ckpt + " --ablation " + ablation +
                " --output " + out.string()) == 0);
    CHECK(lines(out / "report.csv") == 3);
    CHECK(fs::exists(out / "finetune.ckpt"));
    CHECK(fs::exists(out / "manifest_finetune.json"));
    CHECK(lines(out / "finetune_loss.csv") == 5);
  }
  const fs::path full = fine / "full";
  REQUIRE(lf2("report-consistency --labels " + (full / "labels.csv").string() + " --output " +
              (kRoot / "ari.csv").string()) == 0);
  CHECK(lines(kRoot / "ari.csv") == 3);
  CHECK(slurp(kRoot / "ari.csv").starts_with("epoch,ari_0_1,ari_0_2,mean_ari"));

  const std::string fckpt = (full / "finetune.ckpt").string();
  REQUIRE(lf2("evaluate --config " + config + " --checkpoint " + fckpt + " --output " + (kRoot / "e").string() +
              " --export-embeddings " + (kRoot / "emb.bin").string()) == 0);
  const auto m = nlohmann::json::parse(slurp(kRoot / "e" / "metrics.json"));
  for (const char* k : {"map", "cmc1", "cmc5", "cmc10"}) {
    CHECK(m.at(k).get<double>() >= 0.0);
    CHECK(m.at(k).get<double>() <= 1.0);
  }
  CHECK(m.at("dimension") == 24);
  // 6 identities x (1 query + 2 gallery images).
  CHECK(import_embeddings(kRoot / "emb.bin").features.dim(0) == 18);
  REQUIRE(lf2("evaluate --config " + config + " --checkpoint " + fckpt + " --global-only --output " +
              (kRoot / "g").string()) == 0);
  CHECK(nlohmann::json::parse(slurp(kRoot / "g" / "metrics.json")).at("dimension") == 8);

  // A checkpoint from a differently shaped model is incompatible.
  std::string wide = kTiny;
  wide.replace(wide.find("[8, 8, 8, 8]"), 12, "[8, 8, 16, 16]");
  std::ofstream(kRoot / "wide.toml") << wide;
  CHECK(lf2("finetune --config " + (kRoot / "wide.toml").string() + " --checkpoint " + ckpt + " --output " +
            (kRoot / "w").string()) == 2);
}

TEST_CASE_FIXTURE(Fixture, "synth-gen writes a loadable Market layout") {
  const fs::path out = kRoot / "synth";
  REQUIRE(lf2("synth-gen --output " + out.string() + " --style B --ids 4 --images 5 --train 3 --query 1") == 0);
  std::size_t train = 0;
  for (const auto& e : fs::directory_iterator(out / "bounding_box_train")) train += e.is_regular_file();
  CHECK(train == 12);
  std::string text = kTiny;
  text.replace(text.find("[data]"), 6, "[data]\nsource = \"synth\"\ntarget = \"synth\"");
  std::ofstream(kRoot / "real.toml") << text;
  CHECK(lf2("pretrain --config " + (kRoot / "real.toml").string() + " --output " + (kRoot / "r").string()) == 0);
  CHECK(lf2("synth-gen --output " + out.string() + " --style C") == 2);
}
