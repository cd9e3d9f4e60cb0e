#include "lf2/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "lf2/errors.hpp"

namespace lf2 {
namespace pt = boost::property_tree;

namespace {

std::string clean(std::string v) {
  const auto hash = v.find('#');
  if (hash != std::string::npos) v.erase(hash);
  boost::algorithm::trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return v;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  if constexpr (std::is_unsigned_v<T>)
    if (text.starts_with('-')) throw ConfigError("config key " + key + ": must be non-negative, got '" + text + "'");
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("config key " + key + ": cannot parse '" + text + "'");
  return value;
}

std::vector<std::size_t> parse_list(const std::string& key, std::string text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']')
    throw ConfigError("config key " + key + ": expected a [a, b, ...] list, got '" + text + "'");
  text = text.substr(1, text.size() - 2);
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    boost::algorithm::trim(item);
    if (!item.empty()) out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + text + "'");
}

// One setter and one getter per key, so parsing and the snapshot share a
// single table.
struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field num(std::function<T&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_number<T>(k, v); },
          [ref](const RunConfig& c) { return fmt::format("{}", ref(const_cast<RunConfig&>(c))); }};
}

Field list(std::function<std::vector<std::size_t>&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_list(k, v); },
          [ref](const RunConfig& c) { return fmt::format("[{}]", fmt::join(ref(const_cast<RunConfig&>(c)), ", ")); }};
}

Field flag(std::function<bool&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_bool(k, v); },
          [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

Field path(std::function<std::filesystem::path&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string&, const std::string& v) { ref(c) = v; },
          [ref](const RunConfig& c) { return "\"" + ref(const_cast<RunConfig&>(c)).string() + "\""; }};
}

const std::map<std::string, std::map<std::string, Field>>& fields() {
  using S = std::size_t;
  using D = double;
  static const std::map<std::string, std::map<std::string, Field>> table{
      {"data",
       {{"source", path([](RunConfig& c) -> auto& { return c.source_root; })},
        {"target", path([](RunConfig& c) -> auto& { return c.target_root; })},
        {"synthetic_ids", num<S>([](RunConfig& c) -> auto& { return c.synthetic_ids; })},
        {"synthetic_images", num<S>([](RunConfig& c) -> auto& { return c.synthetic_images; })},
        {"synthetic_train", num<S>([](RunConfig& c) -> auto& { return c.synthetic_train; })},
        {"synthetic_query", num<S>([](RunConfig& c) -> auto& { return c.synthetic_query; })}}},
      {"run",
       {{"seed", num<std::uint64_t>([](RunConfig& c) -> auto& { return c.train.seed; })},
        {"output_dir", path([](RunConfig& c) -> auto& { return c.output_dir; })}}},
      {"model",
       {{"height", num<S>([](RunConfig& c) -> auto& { return c.train.model.encoder.input_height; })},
        {"width", num<S>([](RunConfig& c) -> auto& { return c.train.model.encoder.input_width; })},
        {"widths", list([](RunConfig& c) -> auto& { return c.train.model.encoder.widths; })},
        {"parts", num<S>([](RunConfig& c) -> auto& { return c.train.model.parts; })},
        {"reduction", num<S>([](RunConfig& c) -> auto& { return c.train.reduction; })}}},
      {"pretrain",
       {{"epochs", num<S>([](RunConfig& c) -> auto& { return c.train.pretrain.epochs; })},
        {"iterations", num<S>([](RunConfig& c) -> auto& { return c.train.pretrain.iterations; })},
        {"lr", num<D>([](RunConfig& c) -> auto& { return c.train.pretrain.lr; })},
        {"decay_epochs", list([](RunConfig& c) -> auto& { return c.train.pretrain.decay_epochs; })},
        {"decay_factor", num<D>([](RunConfig& c) -> auto& { return c.train.pretrain.decay_factor; })}}},
      {"finetune",
       {{"epochs", num<S>([](RunConfig& c) -> auto& { return c.train.finetune.epochs; })},
        {"iterations", num<S>([](RunConfig& c) -> auto& { return c.train.finetune.iterations; })},
        {"lr", num<D>([](RunConfig& c) -> auto& { return c.train.finetune.lr; })},
        {"decay_epochs", list([](RunConfig& c) -> auto& { return c.train.finetune.decay_epochs; })},
        {"decay_factor", num<D>([](RunConfig& c) -> auto& { return c.train.finetune.decay_factor; })},
        {"ema_momentum", num<D>([](RunConfig& c) -> auto& { return c.train.ema_momentum; })},
        {"ablation",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.train.ablation = parse_ablation(v); },
          [](const RunConfig& c) { return "\"" + ablation_name(c.train.ablation) + "\""; }}}}},
      {"optimizer", {{"weight_decay", num<D>([](RunConfig& c) -> auto& { return c.train.weight_decay; })}}},
      {"loss",
       {{"alpha", num<D>([](RunConfig& c) -> auto& { return c.train.weights.alpha; })},
        {"lambda", num<D>([](RunConfig& c) -> auto& { return c.train.weights.lambda; })},
        {"gamma", num<D>([](RunConfig& c) -> auto& { return c.train.weights.gamma; })},
        {"margin", num<D>([](RunConfig& c) -> auto& { return c.train.weights.margin; })}}},
      {"cluster",
       {{"clusters", num<S>([](RunConfig& c) -> auto& { return c.train.cluster.clusters; })},
        {"max_iterations", num<S>([](RunConfig& c) -> auto& { return c.train.cluster.max_iterations; })},
        {"restarts", num<S>([](RunConfig& c) -> auto& { return c.train.cluster.restarts; })},
        {"normalize", flag([](RunConfig& c) -> auto& { return c.train.cluster.normalize; })}}},
      {"sampler",
       {{"identities", num<S>([](RunConfig& c) -> auto& { return c.train.sampler.identities; })},
        {"instances", num<S>([](RunConfig& c) -> auto& { return c.train.sampler.instances; })}}},
      {"augment",
       {{"flip_probability", num<D>([](RunConfig& c) -> auto& { return c.train.augment.flip_probability; })},
        {"pad", num<S>([](RunConfig& c) -> auto& { return c.train.augment.pad; })},
        {"erase_probability", num<D>([](RunConfig& c) -> auto& { return c.train.augment.erase_probability; })},
        {"erase_area_min", num<D>([](RunConfig& c) -> auto& { return c.train.augment.erase_area_min; })},
        {"erase_area_max", num<D>([](RunConfig& c) -> auto& { return c.train.augment.erase_area_max; })},
        {"erase_aspect_min", num<D>([](RunConfig& c) -> auto& { return c.train.augment.erase_aspect_min; })},
        {"erase_aspect_max", num<D>([](RunConfig& c) -> auto& { return c.train.augment.erase_aspect_max; })}}},
  };
  return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig config;
  for (const auto& [section, entries] : tree) {
    const auto sec = fields().find(section);
    if (sec == fields().end() || entries.empty())
      throw ConfigError(origin + ": unknown section or top-level key '" + section + "'");
    for (const auto& [key, value] : entries) {
      const auto field = sec->second.find(key);
      if (field == sec->second.end()) throw ConfigError(origin + ": unknown key " + section + "." + key);
      field->second.set(config, section + "." + key, clean(value.data()));
    }
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig config = parse_run_config(buffer.str(), path.string());
  const auto base = path.parent_path();
  // Relative dataset roots resolve against the config file's directory.
  for (auto* root : {&config.source_root, &config.target_root})
    if (!root->empty() && root->is_relative()) *root = base / *root;
  return config;
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [section, entries] : fields()) {
    out += "[" + section + "]\n";
    for (const auto& [key, field] : entries) out += key + " = " + field.get(config) + "\n";
    out += "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  // Where the outputs go does not change them.
  RunConfig keyed = config;
  keyed.output_dir.clear();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_config_text(keyed)) h = (h ^ c) * 1099511628211ull;
  return fmt::format("{:016x}", h);
}

}  // namespace lf2
