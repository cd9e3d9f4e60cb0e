#include "lf2/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <regex>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "lf2/errors.hpp"

namespace lf2 {
namespace fs = std::filesystem;

namespace {

using Rgb = std::array<double, 3>;

cv::Mat to_mat(const Tensor& image) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  cv::Mat m(int(h), int(w), CV_64FC3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto& px = m.at<cv::Vec3d>(int(y), int(x));
      for (std::size_t c = 0; c < 3; ++c) px[int(c)] = image.at(c, y, x);
    }
  return m;
}

Tensor from_mat(const cv::Mat& m) {
  Tensor out({3, std::size_t(m.rows), std::size_t(m.cols)});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3d>(y, x);
      for (int c = 0; c < 3; ++c) out.at(std::size_t(c), std::size_t(y), std::size_t(x)) = px[c];
    }
  return out;
}

void check_image(const Tensor& image, const char* where) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw InputError(std::string(where) + ": expected a 3 x H x W image, got " + shape_string(image.shape()));
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(std::uint32_t(p));
    words.push_back(std::uint32_t(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s, hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (int(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

// Rotation about the grey axis, then desaturation and brightness scaling.
Rgb restyle(const Rgb& v, const DomainStyle& style) {
  const double k = 1.0 / std::sqrt(3.0);
  const double ct = std::cos(style.hue_rotation), st = std::sin(style.hue_rotation);
  const double kv = k * (v[0] + v[1] + v[2]);
  const Rgb cross{k * (v[2] - v[1]), k * (v[0] - v[2]), k * (v[1] - v[0])};
  Rgb out{};
  for (int c = 0; c < 3; ++c) out[c] = v[c] * ct + cross[c] * st + k * kv * (1.0 - ct);
  const double grey = (out[0] + out[1] + out[2]) / 3.0;
  for (double& ch : out) ch = std::clamp((grey + style.saturation * (ch - grey)) * style.brightness, 0.0, 1.0);
  return out;
}

struct Signature {
  Rgb torso, legs, pattern_colour, skin, hair, shoes, bag_colour;
  double scale, width;
  int pattern;  // 0 plain, 1 horizontal stripes, 2 vertical band
  bool shorts, bag;
};

Signature draw_signature(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Signature s;
  s.torso = hsv_to_rgb(u(rng), 0.5 + 0.5 * u(rng), 0.45 + 0.55 * u(rng));
  s.legs = hsv_to_rgb(u(rng), 0.3 + 0.7 * u(rng), 0.2 + 0.7 * u(rng));
  s.pattern_colour = hsv_to_rgb(u(rng), 0.6 * u(rng), 0.2 + 0.8 * u(rng));
  s.skin = hsv_to_rgb(0.05 + 0.05 * u(rng), 0.3 + 0.3 * u(rng), 0.4 + 0.5 * u(rng));
  s.scale = 0.75 + 0.2 * u(rng);
  s.width = 0.4 + 0.2 * u(rng);
  s.pattern = int(u(rng) * 3.0) % 3;
  s.hair = hsv_to_rgb(0.02 + 0.1 * u(rng), 0.2 + 0.6 * u(rng), 0.05 + 0.6 * u(rng));
  s.shoes = hsv_to_rgb(u(rng), u(rng), 0.1 + 0.8 * u(rng));
  s.bag_colour = hsv_to_rgb(u(rng), 0.3 + 0.7 * u(rng), 0.2 + 0.7 * u(rng));
  s.shorts = u(rng) < 0.4;
  s.bag = u(rng) < 0.5;
  return s;
}

void paint(Tensor& img, double y0, double y1, double x0, double x1, const Rgb& colour) {
  const auto h = double(img.dim(1)), w = double(img.dim(2));
  const auto ya = std::size_t(std::clamp(std::lround(y0), 0L, long(h)));
  const auto yb = std::size_t(std::clamp(std::lround(y1), 0L, long(h)));
  const auto xa = std::size_t(std::clamp(std::lround(x0), 0L, long(w)));
  const auto xb = std::size_t(std::clamp(std::lround(x1), 0L, long(w)));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = ya; y < yb; ++y)
      for (std::size_t x = xa; x < xb; ++x) img.at(c, y, x) = colour[c];
}

Tensor render(const Signature& sig, const DomainStyle& style, const std::array<Rgb, 16>& casts, std::size_t camera,
              std::mt19937_64& rng, ImageSize size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto h = double(size.height), w = double(size.width);
  Tensor img({3, size.height, size.width}, style.background_level);

  const int blobs = int(std::lround(style.background_clutter * 8.0 * (0.5 + u(rng))));
  for (int b = 0; b < blobs; ++b) {
    const Rgb colour = hsv_to_rgb(u(rng), u(rng), 0.2 + 0.8 * u(rng));
    const double by = u(rng) * h, bx = u(rng) * w;
    paint(img, by, by + (0.1 + 0.3 * u(rng)) * h, bx, bx + (0.2 + 0.5 * u(rng)) * w, colour);
  }

  const double scale = sig.scale * (0.95 + 0.1 * u(rng));
  const double person_h = scale * h, person_w = sig.width * w;
  const double dx = (u(rng) - 0.5) * 0.2 * w, dy = (u(rng) - 0.5) * 0.1 * h;
  const double top = (h - person_h) / 2.0 + dy, cx = w / 2.0 + dx;
  const double light = 0.85 + 0.3 * u(rng);
  const auto lit = [&](const Rgb& c) {
    Rgb out = restyle(c, style);
    for (double& ch : out) ch = std::clamp(ch * light, 0.0, 1.0);
    return out;
  };

  const double head = 0.16 * person_h;
  paint(img, top, top + head, cx - 0.2 * person_w, cx + 0.2 * person_w, lit(sig.skin));
  paint(img, top, top + 0.35 * head, cx - 0.22 * person_w, cx + 0.22 * person_w, lit(sig.hair));
  const double torso_top = top + head, torso_bottom = top + 0.55 * person_h;
  paint(img, torso_top, torso_bottom, cx - person_w / 2.0, cx + person_w / 2.0, lit(sig.torso));
  if (sig.pattern == 1) {
    const double band = (torso_bottom - torso_top) / 6.0;
    for (int s = 1; s < 6; s += 2)
      paint(img, torso_top + s * band, torso_top + (s + 1) * band, cx - person_w / 2.0, cx + person_w / 2.0,
            lit(sig.pattern_colour));
  } else if (sig.pattern == 2) {
    paint(img, torso_top, torso_bottom, cx - person_w / 8.0, cx + person_w / 8.0, lit(sig.pattern_colour));
  }
  const double leg_w = 0.38 * person_w, bottom = top + person_h;
  const double hem = sig.shorts ? torso_bottom + 0.4 * (bottom - torso_bottom) : bottom;
  const double ankle = bottom - 0.08 * person_h;
  for (const double x0 : {cx - 0.45 * person_w, cx + 0.45 * person_w - leg_w}) {
    paint(img, torso_bottom, hem, x0, x0 + leg_w, lit(sig.legs));
    if (sig.shorts) paint(img, hem, ankle, x0, x0 + leg_w, lit(sig.skin));
    paint(img, ankle, bottom, x0, x0 + leg_w, lit(sig.shoes));
  }
  if (sig.bag)
    paint(img, torso_bottom - 0.1 * person_h, torso_bottom + 0.15 * person_h, cx + 0.4 * person_w,
          cx + 0.75 * person_w, lit(sig.bag_colour));

  std::normal_distribution<double> noise(0.0, style.noise);
  const Rgb& cast = casts[camera % casts.size()];
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < size.height; ++y)
      for (std::size_t x = 0; x < size.width; ++x) {
        double& v = img.at(c, y, x);
        v = std::clamp(v * cast[c] + noise(rng), 0.0, 1.0);
      }
  return img;
}

}  // namespace

std::string split_directory(Split split) {
  switch (split) {
    case Split::kTrain: return "bounding_box_train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "bounding_box_test";
  }
  return {};
}

std::optional<ParsedName> parse_market_name(const std::string& filename) {
  static const std::regex pattern(R"(^(\d+)_c(\d+)([_s][^/]*)?\.(jpg|jpeg|png)$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(filename, m, pattern)) return std::nullopt;
  try {
    return ParsedName{std::stoi(m[1].str()), std::stoi(m[2].str())};
  } catch (const std::out_of_range&) {
    return std::nullopt;
  }
}

Tensor read_image(const fs::path& path, ImageSize size) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw InputError("cannot decode image " + path.string());
  cv::Mat rgb, resized, scaled;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  cv::resize(rgb, resized, cv::Size(int(size.width), int(size.height)), 0, 0, cv::INTER_LINEAR);
  resized.convertTo(scaled, CV_64FC3, 1.0 / 255.0);
  return from_mat(scaled);
}

void write_image(const fs::path& path, const Tensor& image) {
  check_image(image, "write_image");
  cv::Mat bytes, bgr;
  to_mat(image).convertTo(bytes, CV_8UC3, 255.0);
  cv::cvtColor(bytes, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write image " + path.string());
}

std::vector<Sample> load_dataset(const fs::path& root, Split split, ImageSize size) {
  const fs::path dir = root / split_directory(split);
  if (!fs::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<Sample> out;
  std::map<int, int> remap;
  for (const auto& file : files) {
    const auto parsed = parse_market_name(file.filename().string());
    if (!parsed) {
      spdlog::warn("skipping {}: name does not match <pid>_c<cam>_<rest>.jpg", file.string());
      continue;
    }
    Sample s;
    s.image = read_image(file, size);
    s.key = parsed->person;
    s.camera = parsed->camera;
    s.identity = remap.emplace(parsed->person, int(remap.size())).first->second;
    s.source = file.string();
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InputError("no usable images in " + dir.string());
  return out;
}

DomainStyle DomainStyle::source() { return DomainStyle{}; }

DomainStyle DomainStyle::target() {
  DomainStyle s;
  s.name = "B";
  s.hue_rotation = 2.0;
  s.saturation = 0.75;
  s.brightness = 0.85;
  s.background_level = 0.35;
  s.background_clutter = 0.4;
  s.camera_cast = 0.15;
  s.noise = 0.03;
  return s;
}

std::vector<Sample> synth_generate(std::size_t n_ids, std::size_t imgs_per_id, const DomainStyle& style,
                                   std::uint64_t seed, ImageSize size) {
  if (n_ids < 2) throw InputError("synth_generate: need at least two identities");
  if (style.cameras == 0) throw InputError("synth_generate: style has no cameras");
  const std::uint64_t style_key = fnv1a(style.name);

  std::array<Rgb, 16> casts{};
  auto cast_rng = seeded({seed, style_key, 0xCA57});
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  for (auto& cast : casts)
    for (double& g : cast) g = 1.0 + style.camera_cast * sym(cast_rng);

  auto id_rng = seeded({seed, 0x1D});
  std::vector<Signature> signatures;
  for (std::size_t i = 0; i < n_ids; ++i) signatures.push_back(draw_signature(id_rng));

  std::vector<Sample> out;
  out.reserve(n_ids * imgs_per_id);
  for (std::size_t i = 0; i < n_ids; ++i)
    for (std::size_t k = 0; k < imgs_per_id; ++k) {
      auto rng = seeded({seed, style_key, i, k});
      Sample s;
      const std::size_t camera = k % style.cameras;
      s.image = render(signatures[i], style, casts, camera, rng, size);
      s.identity = s.key = int(i);
      s.camera = int(camera);
      s.source = "synth:" + style.name + ":" + std::to_string(i) + ":" + std::to_string(k);
      out.push_back(std::move(s));
    }
  return out;
}

SplitDataset split_per_identity(const std::vector<Sample>& samples, std::size_t train, std::size_t query) {
  SplitDataset out;
  std::map<int, std::size_t> seen;
  std::map<int, int> train_ids;
  for (const auto& s : samples) {
    const std::size_t n = seen[s.key]++;
    if (n < train) {
      Sample t = s;
      t.identity = train_ids.emplace(s.key, int(train_ids.size())).first->second;
      out.train.push_back(std::move(t));
    } else if (n < train + query) {
      out.query.push_back(s);
    } else {
      out.gallery.push_back(s);
    }
  }
  return out;
}

void write_market_layout(const fs::path& root, const SplitDataset& data) {
  const std::pair<Split, const std::vector<Sample>*> parts[] = {
      {Split::kTrain, &data.train}, {Split::kQuery, &data.query}, {Split::kGallery, &data.gallery}};
  for (const auto& [split, samples] : parts) {
    const fs::path dir = root / split_directory(split);
    fs::create_directories(dir);
    std::map<int, int> counter;
    for (const auto& s : *samples) {
      char name[64];
      std::snprintf(name, sizeof name, "%04d_c%d_s%06d.png", s.key + 1, s.camera.value_or(0) + 1,
                    counter[s.key]++);
      write_image(dir / name, s.image);
    }
  }
}

PkSampler::PkSampler(std::span<const int> labels, const SamplerConfig& config)
    : config_(config), rng_(config.seed) {
  if (config.identities < 2 || config.instances < 2)
    throw ConfigError("sampler needs at least 2 identities and 2 instances per batch");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) by_label[labels[i]].push_back(i);
  for (auto& [label, idx] : by_label) groups_.push_back(std::move(idx));
  if (groups_.size() < config.identities)
    throw ConfigError("sampler needs " + std::to_string(config.identities) + " identities, only " +
                      std::to_string(groups_.size()) + " available");
}

std::vector<std::size_t> PkSampler::next() {
  std::vector<std::size_t> order(groups_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < config_.identities; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng_)]);
  }
  std::vector<std::size_t> batch;
  batch.reserve(config_.batch_size());
  for (std::size_t i = 0; i < config_.identities; ++i) {
    std::vector<std::size_t> members = groups_[order[i]];
    if (members.size() >= config_.instances) {
      for (std::size_t k = 0; k < config_.instances; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, members.size() - 1);
        std::swap(members[k], members[pick(rng_)]);
        batch.push_back(members[k]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t k = 0; k < config_.instances; ++k) batch.push_back(members[pick(rng_)]);
    }
  }
  return batch;
}

Tensor flip_horizontal(const Tensor& image) {
  check_image(image, "flip_horizontal");
  Tensor out(image.shape());
  const std::size_t h = image.dim(1), w = image.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
  return out;
}

Tensor resize_image(const Tensor& image, ImageSize size) {
  check_image(image, "resize_image");
  if (image.dim(1) == size.height && image.dim(2) == size.width) return image;
  cv::Mat resized;
  cv::resize(to_mat(image), resized, cv::Size(int(size.width), int(size.height)), 0, 0, cv::INTER_LINEAR);
  return from_mat(resized);
}

Tensor augment(const Tensor& image, Phase phase, std::mt19937_64& rng, const AugmentOptions& options,
               std::optional<ImageSize> size) {
  check_image(image, "augment");
  Tensor out = size ? resize_image(image, *size) : image;
  if (phase == Phase::kEval) return out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t h = out.dim(1), w = out.dim(2);

  const bool flip = options.force_flip ? *options.force_flip : u(rng) < options.flip_probability;
  if (flip) out = flip_horizontal(out);

  if (options.pad > 0) {
    std::uniform_int_distribution<std::size_t> off(0, 2 * options.pad);
    const std::size_t oy = off(rng), ox = off(rng);
    Tensor cropped(out.shape(), 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sy = y + oy, sx = x + ox;
          if (sy < options.pad || sx < options.pad || sy - options.pad >= h || sx - options.pad >= w) continue;
          cropped.at(c, y, x) = out.at(c, sy - options.pad, sx - options.pad);
        }
    out = std::move(cropped);
  }

  if (phase == Phase::kTargetFinetune && u(rng) < options.erase_probability) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double area = double(h * w) * (options.erase_area_min +
                                           (options.erase_area_max - options.erase_area_min) * u(rng));
      const double aspect = options.erase_aspect_min + (options.erase_aspect_max - options.erase_aspect_min) * u(rng);
      const auto eh = std::size_t(std::lround(std::sqrt(area * aspect)));
      const auto ew = std::size_t(std::lround(std::sqrt(area / aspect)));
      if (eh == 0 || ew == 0 || eh >= h || ew >= w) continue;
      const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - eh)(rng);
      const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - ew)(rng);
      for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < h * w; ++i) mean += out[c * h * w + i];
        mean /= double(h * w);
        for (std::size_t y = y0; y < y0 + eh; ++y)
          for (std::size_t x = x0; x < x0 + ew; ++x) out.at(c, y, x) = mean;
      }
      break;
    }
  }
  return out;
}

Tensor stack_images(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("stack_images: empty selection");
  const Shape one = samples.at(indices[0]).image.shape();
  Tensor out({indices.size(), one[0], one[1], one[2]});
  const std::size_t stride = shape_size(one);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = samples.at(indices[i]).image;
    if (img.shape() != one) throw InputError("stack_images: mixed image sizes");
    std::copy_n(img.data(), stride, out.data() + i * stride);
  }
  return out;
}

Tensor stack_images(const std::vector<Sample>& samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack_images(samples, all);
}

}  // namespace lf2
