#pragma once
// Key-value configuration text:
//
//   # comment
//   height = 64
//   widths = 8,16,32,64
//
// Unknown keys are errors so typos do not silently fall back to defaults.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pathfinder/network.hpp"

namespace pathfinder::config {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline KeyValues parse_text(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

namespace detail {
inline std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument("config: " + key + " must be a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}
inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config: " + key + " must be a number, got '" + v + "'");
  return x;
}
inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " must be true/false, got '" + v + "'");
}
}  // namespace detail

inline const std::set<std::string>& model_keys() {
  static const std::set<std::string> k{"height", "width",     "classes", "widths",        "vit_depth",
                                       "vit_heads", "binarize", "use_agb", "image_channels", "raster_channels"};
  return k;
}

inline const std::set<std::string>& train_keys() {
  static const std::set<std::string> k{"epochs",   "batch_size",   "lr_camera", "lr_lidar",
                                       "momentum", "weight_decay", "lambda",    "seed"};
  return k;
}

/// Applies recognized keys on top of `base`; other model/train keys are
/// rejected unless listed in either key set.
inline PathfinderConfig model_config(const KeyValues& kv, PathfinderConfig c = {}) {
  for (const auto& [k, v] : kv) {
    if (!model_keys().count(k) && !train_keys().count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
    if (k == "height") c.height = detail::to_size(k, v);
    if (k == "width") c.width = detail::to_size(k, v);
    if (k == "classes") c.classes = detail::to_size(k, v);
    if (k == "vit_depth") c.vit_depth = detail::to_size(k, v);
    if (k == "vit_heads") c.vit_heads = detail::to_size(k, v);
    if (k == "binarize") c.binarize = detail::to_bool(k, v);
    if (k == "use_agb") c.use_agb = detail::to_bool(k, v);
    if (k == "image_channels") c.image_channels = detail::to_size(k, v);
    if (k == "raster_channels") c.raster_channels = detail::to_size(k, v);
    if (k == "widths") {
      std::istringstream in(v);
      std::string part;
      std::size_t i = 0;
      while (std::getline(in, part, ',')) {
        if (i >= 4) throw std::invalid_argument("config: widths takes four values");
        c.widths[i++] = detail::to_size(k, trim(part));
      }
      if (i != 4) throw std::invalid_argument("config: widths takes four values");
    }
  }
  c.validate();
  return c;
}

inline TrainSettings train_settings(const KeyValues& kv, TrainSettings t = {}) {
  for (const auto& [k, v] : kv) {
    if (!model_keys().count(k) && !train_keys().count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
    if (k == "epochs") t.epochs = detail::to_size(k, v);
    if (k == "batch_size") t.batch_size = detail::to_size(k, v);
    if (k == "lr_camera") t.lr_camera = detail::to_double(k, v);
    if (k == "lr_lidar") t.lr_lidar = detail::to_double(k, v);
    if (k == "momentum") t.momentum = detail::to_double(k, v);
    if (k == "weight_decay") t.weight_decay = detail::to_double(k, v);
    if (k == "lambda") t.lambda = detail::to_double(k, v);
    if (k == "seed") t.seed = detail::to_size(k, v);
  }
  if (t.epochs == 0 || t.batch_size == 0) throw std::invalid_argument("config: epochs and batch_size must be positive");
  return t;
}

/// Canonical text of a model configuration; its digest guards checkpoints.
inline std::string to_text(const PathfinderConfig& c) {
  std::ostringstream os;
  os << "height = " << c.height << "\nwidth = " << c.width << "\nclasses = " << c.classes << "\nwidths = "
     << c.widths[0] << ',' << c.widths[1] << ',' << c.widths[2] << ',' << c.widths[3] << "\nvit_depth = "
     << c.vit_depth << "\nvit_heads = " << c.vit_heads << "\nbinarize = " << (c.binarize ? "true" : "false")
     << "\nuse_agb = " << (c.use_agb ? "true" : "false") << "\nimage_channels = " << c.image_channels
     << "\nraster_channels = " << c.raster_channels << '\n';
  return os.str();
}

inline std::string to_text(const TrainSettings& t) {
  std::ostringstream os;
  os << std::setprecision(17) << "epochs = " << t.epochs << "\nbatch_size = " << t.batch_size
     << "\nlr_camera = " << t.lr_camera << "\nlr_lidar = " << t.lr_lidar << "\nmomentum = " << t.momentum
     << "\nweight_decay = " << t.weight_decay << "\nlambda = " << t.lambda << "\nseed = " << t.seed << '\n';
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t digest(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace pathfinder::config
