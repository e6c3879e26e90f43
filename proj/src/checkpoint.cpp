#include "fss/nn/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fss {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                     const std::map<std::string, TensorD>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  const std::string mj = manifest.dump();
  write_pod<uint64_t>(os, mj.size());
  os.write(mj.data(), static_cast<std::streamsize>(mj.size()));
  write_pod<uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (Index d = 0; d < t.rank(); ++d) write_pod<uint64_t>(os, t.dim(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw FormatError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw FormatError("checkpoint: bad magic in " + path);
  Checkpoint ck;
  const auto mlen = read_pod<uint64_t>(is);
  ck.manifest_json.resize(mlen);
  is.read(ck.manifest_json.data(), static_cast<std::streamsize>(mlen));
  const auto count = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < count; ++i) {
    const auto nlen = read_pod<uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const auto rank = read_pod<uint8_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(read_pod<uint64_t>(is));
    TensorD t{shape};
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated tensor " + name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

std::map<std::string, TensorD> snapshot_state(const Module& m) {
  std::map<std::string, TensorD> out;
  for (const auto& [name, p] : m.named_parameters()) out[name] = p->value;
  for (const auto& [name, b] : m.named_buffers()) out[name] = *b;
  return out;
}

size_t load_state(Module& m, const std::map<std::string, TensorD>& tensors,
                  const std::string& prefix, bool strict) {
  size_t applied = 0;
  auto lookup = [&](const std::string& name) -> const TensorD* {
    auto it = tensors.find(prefix + name);
    return it == tensors.end() ? nullptr : &it->second;
  };
  auto apply = [&](const std::string& name, TensorD& dst) {
    const TensorD* src = lookup(name);
    if (!src) {
      if (strict) throw FormatError("checkpoint: missing tensor '" + prefix + name + "'");
      return;
    }
    if (src->shape() != dst.shape())
      throw FormatError("checkpoint: shape mismatch for '" + prefix + name + "'");
    dst = *src;
    ++applied;
  };
  for (const auto& [name, p] : m.named_parameters()) apply(name, p->value);
  for (const auto& [name, b] : m.named_buffers()) apply(name, *b);
  return applied;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t state_checksum(const Module& m) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, p] : m.named_parameters()) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(p->value.data(), static_cast<size_t>(p->value.size()) * sizeof(double), h);
  }
  for (const auto& [name, b] : m.named_buffers()) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(b->data(), static_cast<size_t>(b->size()) * sizeof(double), h);
  }
  return h;
}

}  // namespace fss
