#pragma once
// Checkpoint container.
//
//   "PFCK"            4 bytes magic
//   u32 version       currently 1
//   u64 config digest FNV-1a of the canonical model config text
//   u32 entry count
//   entries:          u32 name length, name bytes, u8 kind (0 parameter,
//                     1 buffer), u32 rank, u64 dims[rank], f32 values
//   u32 counter count
//   counters:         u32 name length, name bytes, u64 value
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathfinder/config.hpp"
#include "pathfinder/network.hpp"

namespace pathfinder::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
inline constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::uint8_t kind = 0;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

struct Contents {
  std::uint64_t config_digest = 0;
  std::map<std::string, Entry> entries;
  std::map<std::string, std::uint64_t> counters;
};

namespace detail {
template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
inline void put_string(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1U << 20)) throw std::runtime_error("checkpoint: corrupt name length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}
}  // namespace detail

inline void write(const std::string& path, const Contents& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, 4);
  detail::put(out, kVersion);
  detail::put(out, c.config_digest);
  detail::put(out, static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& [name, e] : c.entries) {
    detail::put_string(out, name);
    detail::put(out, e.kind);
    detail::put(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) detail::put(out, d);
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 4));
  }
  detail::put(out, static_cast<std::uint32_t>(c.counters.size()));
  for (const auto& [name, v] : c.counters) {
    detail::put_string(out, name);
    detail::put(out, v);
  }
  if (!out) throw std::runtime_error("short write to checkpoint " + path);
}

inline Contents read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + ": not a checkpoint file");
  if (detail::get<std::uint32_t>(in) != kVersion) throw std::runtime_error(path + ": unsupported checkpoint version");
  Contents c;
  c.config_digest = detail::get<std::uint64_t>(in);
  const auto n = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = detail::get_string(in);
    Entry e;
    e.kind = detail::get<std::uint8_t>(in);
    const auto rank = detail::get<std::uint32_t>(in);
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.dims.push_back(detail::get<std::uint64_t>(in));
      count *= e.dims.back();
    }
    if (count > (1ULL << 32)) throw std::runtime_error(path + ": corrupt entry size");
    e.values.resize(count);
    in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(count * 4));
    if (!in) throw std::runtime_error(path + ": truncated entry " + name);
    c.entries.emplace(std::move(name), std::move(e));
  }
  const auto m = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < m; ++i) {
    auto name = detail::get_string(in);
    c.counters[name] = detail::get<std::uint64_t>(in);
  }
  return c;
}

/// Everything needed to resume: parameters, batch-norm statistics, and the
/// optimizer moments and step counts.
template <class Real>
Registry<Real> full_registry(PathfinderModel<Real>& model, Trainer<Real>* trainer) {
  auto reg = model.registry();
  if (trainer) {
    trainer->camera_optimizer().collect_state("optim.camera", reg);
    trainer->lidar_optimizer().collect_state("optim.lidar", reg);
  }
  return reg;
}

template <class Real>
void save(const std::string& path, PathfinderModel<Real>& model, Trainer<Real>* trainer = nullptr,
          std::size_t epochs_done = 0) {
  Contents c;
  c.config_digest = config::digest(config::to_text(model.config));
  const auto reg = full_registry(model, trainer);
  for (const auto& p : reg.params) {
    Entry e;
    e.kind = 0;
    for (auto d : p.tensor.shape()) e.dims.push_back(d);
    e.values.assign(p.tensor.data().begin(), p.tensor.data().end());
    c.entries[p.name] = std::move(e);
  }
  for (const auto& b : reg.buffers) {
    Entry e;
    e.kind = 1;
    e.dims = {b.data->size()};
    e.values.assign(b.data->begin(), b.data->end());
    c.entries[b.name] = std::move(e);
  }
  c.counters["epochs_done"] = epochs_done;
  if (trainer) {
    c.counters["optim.camera.steps"] = trainer->camera_optimizer().step_count();
    c.counters["optim.lidar.steps"] = trainer->lidar_optimizer().step_count();
  }
  write(path, c);
}

/// Loads into an already constructed model (and optimizers). Returns the
/// number of completed epochs stored in the file.
template <class Real>
std::size_t load(const std::string& path, PathfinderModel<Real>& model, Trainer<Real>* trainer = nullptr) {
  const auto c = read(path);
  if (c.config_digest != config::digest(config::to_text(model.config)))
    throw std::runtime_error(path + ": checkpoint was written for a different model configuration");
  auto reg = full_registry(model, trainer);
  auto fetch = [&](const std::string& name, std::size_t count) -> const Entry& {
    const auto it = c.entries.find(name);
    if (it == c.entries.end()) throw std::runtime_error(path + ": missing entry " + name);
    if (it->second.values.size() != count) throw std::runtime_error(path + ": size mismatch for " + name);
    return it->second;
  };
  for (auto& p : reg.params) {
    const auto& e = fetch(p.name, p.tensor.numel());
    std::copy(e.values.begin(), e.values.end(), p.tensor.data().begin());
  }
  for (auto& b : reg.buffers) {
    const auto& e = fetch(b.name, b.data->size());
    std::copy(e.values.begin(), e.values.end(), b.data->begin());
  }
  if (trainer) {
    trainer->camera_optimizer().set_step_count(c.counters.at("optim.camera.steps"));
    trainer->lidar_optimizer().set_step_count(c.counters.at("optim.lidar.steps"));
  }
  const auto it = c.counters.find("epochs_done");
  return it == c.counters.end() ? 0 : static_cast<std::size_t>(it->second);
}

}  // namespace pathfinder::checkpoint
