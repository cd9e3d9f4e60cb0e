#include "lf2/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lf2/errors.hpp"

namespace lf2 {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'F', '2', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), std::streamsize(s.size()));
}

struct Reader {
  std::ifstream in;
  std::string path;

  void raw(void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), std::streamsize(n));
    if (!in) throw InputError("checkpoint " + path + " is truncated");
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    raw(&v, sizeof v);
    return v;
  }
  std::string string(std::uint64_t limit) {
    const std::uint64_t n = u64();
    if (n > limit) throw InputError("checkpoint " + path + " has a corrupt length field");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  put_string(out, checkpoint.meta.dump());
  put_u64(out, checkpoint.arrays.size());
  for (const auto& [name, t] : checkpoint.arrays) {
    put_string(out, name);
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r{std::ifstream(path, std::ios::binary), path.string()};
  if (!r.in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw InputError(path.string() + " is not a checkpoint");
  Checkpoint c;
  try {
    c.meta = nlohmann::json::parse(r.string(1u << 26));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint " + path.string() + " has unreadable metadata: " + e.what());
  }
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string(4096);
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw InputError("checkpoint " + path.string() + " has a corrupt rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape_size(shape) > (std::uint64_t(1) << 32))
      throw InputError("checkpoint " + path.string() + " has a corrupt shape for " + name);
    Tensor t(shape);
    r.raw(t.data(), t.size() * sizeof(double));
    c.arrays.emplace(std::move(name), std::move(t));
  }
  return c;
}

void put_state(Checkpoint& checkpoint, const std::string& prefix, const ModelState& state) {
  for (const auto& [name, t] : state) checkpoint.arrays[prefix + name] = t;
}

ModelState take_state(const Checkpoint& checkpoint, const std::string& prefix) {
  ModelState out;
  for (const auto& [name, t] : checkpoint.arrays)
    if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), t);
  return out;
}

}  // namespace lf2
