#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "lf2/checkpoint.hpp"
#include "lf2/config.hpp"
#include "lf2/errors.hpp"
#include "lf2/run.hpp"
#include "test_util.hpp"

using namespace lf2;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lf2_test_config_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("defaults carry the full-scale recipe") {
  const RunConfig c = parse_run_config("");
  CHECK(c.train.pretrain.epochs == 80);
  CHECK(c.train.pretrain.decay_epochs == std::vector<std::size_t>{40, 70});
  CHECK(c.train.finetune.iterations == 400);
  CHECK(c.train.ema_momentum == 0.999);
  CHECK(c.train.weight_decay == 5e-4);
  CHECK(c.train.reduction == 4);
  CHECK(c.train.model.parts == 2);
  CHECK(c.train.cluster.clusters == 500);
  CHECK(c.train.sampler.batch_size() == 64);
  CHECK(c.train.weights.alpha == 1.0);
  CHECK(c.train.weights.lambda == 0.5);
  CHECK(c.train.weights.gamma == 0.5);
}

TEST_CASE("parsing values, comments, quotes and lists") {
  const RunConfig c = parse_run_config(R"(
[model]
widths = [8, 16, 32, 32]   # trailing comment
[finetune]
ema_momentum = 0.99
ablation = "no-fm"
[cluster]
normalize = false
[run]
output_dir = 'out dir'
seed = 42
)");
  CHECK(c.train.model.encoder.widths == std::vector<std::size_t>{8, 16, 32, 32});
  CHECK(c.train.ema_momentum == 0.99);
  CHECK(c.train.ablation == Ablation::kNoFusion);
  CHECK_FALSE(c.train.cluster.normalize);
  CHECK(c.output_dir == "out dir");
  CHECK(c.train.seed == 42);
}

TEST_CASE("bad configs are rejected") {
  CHECK_THROWS_AS(parse_run_config("[model]\ndepth = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[nope]\na = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("seed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[pretrain]\nepochs = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[pretrain]\nepochs = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[model]\nwidths = 8, 16\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[cluster]\nnormalize = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[finetune]\nablation = fm\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/lf2.toml"), ConfigError);
}

TEST_CASE("snapshot round trip") {
  RunConfig c = parse_run_config("[finetune]\nlr = 0.000123456789\n[model]\nwidths = [4, 8]\n");
  c.train.weights.gamma = 1.0 / 3.0;
  const std::string text = to_config_text(c);
  const RunConfig back = parse_run_config(text);
  CHECK(to_config_text(back) == text);
  CHECK(back.train.weights.gamma == c.train.weights.gamma);
  CHECK(back.train.finetune.lr == c.train.finetune.lr);
  CHECK(config_hash(back) == config_hash(c));
  c.train.seed += 1;
  CHECK(config_hash(back) != config_hash(c));
}

TEST_CASE("shipped desk config parses and validates") {
  const RunConfig c = load_run_config(fs::path(LF2_SOURCE_DIR) / "configs" / "desk.toml");
  CHECK_NOTHROW(c.train.validate());
  CHECK(c.train.finetune.epochs == 10);
  CHECK(c.train.finetune.iterations == 50);
  CHECK(c.train.sampler.batch_size() == 32);
  CHECK(c.source_root.empty());
}

TEST_CASE("relative dataset roots resolve against the config file") {
  const fs::path dir = scratch("roots");
  std::ofstream(dir / "run.toml") << "[data]\nsource = \"market\"\ntarget = \"/abs/duke\"\n";
  const RunConfig c = load_run_config(dir / "run.toml");
  CHECK(c.source_root == dir / "market");
  CHECK(c.target_root == "/abs/duke");
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(3);
  Checkpoint c;
  c.meta = {{"stage", "pretrain"}, {"epoch", 7}};
  c.arrays["a.weight"] = testing::random_tensor({2, 3, 4}, rng);
  c.arrays["b"] = testing::random_tensor({5}, rng);
  c.arrays["scalar"] = Tensor({1}, 0.1);
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "x.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "x.ckpt");
  CHECK(back.meta == c.meta);
  REQUIRE(back.arrays.size() == 3);
  for (const auto& [name, t] : c.arrays) {
    CHECK(back.arrays.at(name).shape() == t.shape());
    CHECK(back.arrays.at(name) == t);
  }

  SUBCASE("prefix selection") {
    Checkpoint p;
    put_state(p, "student.", c.arrays);
    put_state(p, "teacher.", {{"only", Tensor({2}, 1.0)}});
    CHECK(take_state(p, "student.").size() == 3);
    CHECK(take_state(p, "teacher.").count("only") == 1);
    CHECK(take_state(p, "fusion.").empty());
  }
  SUBCASE("corrupt files") {
    std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), InputError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), InputError);
    const auto size = fs::file_size(dir / "x.ckpt");
    fs::copy_file(dir / "x.ckpt", dir / "cut.ckpt");
    fs::resize_file(dir / "cut.ckpt", size - 9);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), InputError);
  }
  fs::remove_all(dir);
}

TEST_CASE("models survive a checkpoint and reject foreign shapes") {
  RunConfig config = parse_run_config("[model]\nheight = 32\nwidth = 16\nwidths = [8, 8, 8, 8]\n");
  ModelConfig mc = config.train.model;
  mc.classes = 5;
  const ReidModel model(mc, 17);
  const Checkpoint c = make_checkpoint(config, "pretrain", 0, model);
  CHECK(c.meta.at("config_hash") == config_hash(config));
  const ReidModel back = model_from_checkpoint(c, "student.", config);
  CHECK(back.state() == model.state());
  CHECK(inference_model(c, config).state() == model.state());
  CHECK_THROWS_AS(model_from_checkpoint(c, "teacher.", config), InputError);

  RunConfig wider = parse_run_config("[model]\nheight = 32\nwidth = 16\nwidths = [8, 8, 16, 16]\n");
  CHECK_THROWS_AS(model_from_checkpoint(c, "student.", wider), InputError);
}

TEST_CASE("label-set log round trip") {
  const fs::path dir = scratch("labels");
  PseudoLabelSets a{{{0, 1, 1, 2}, {1, 1, 0, 0}, {2, 2, 2, 2}}, {3, 2, 1}};
  PseudoLabelSets b{{{3, 3, 1, 0}, {0, 1, 2, 0}, {1, 0, 0, 1}}, {3, 3, 2}};
  append_label_sets(dir / "labels.csv", 0, a);
  append_label_sets(dir / "labels.csv", 1, b);
  const LabelHistory h = read_label_sets(dir / "labels.csv");
  CHECK(h.epochs == std::vector<std::size_t>{0, 1});
  CHECK(h.sets[0].views == a.views);
  CHECK(h.sets[1].views == b.views);
  std::ofstream(dir / "junk.csv") << "epoch,sample,view0\n0,0,x\n";
  CHECK_THROWS_AS(read_label_sets(dir / "junk.csv"), InputError);
  fs::remove_all(dir);
}
