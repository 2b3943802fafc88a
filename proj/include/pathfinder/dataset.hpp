#pragma once
// Synthetic road scenes and the on-disk sample layout.
//
// A sample directory holds
//   image.ppm      RGB camera image
//   label.pgm      dense class ids (0 background, 1 road), raw values
//   cloud_<k>.txt  LiDAR frame k in its own coordinates (see geom.hpp)
//   poses.txt      frame k → reference transforms
//   calib.txt      camera intrinsics and reference → camera extrinsics
//   meta.txt       key = value facts about the sample (void fraction, shadow)
//
// The scene is seen from a nadir camera; the reference LiDAR frame has z up
// and the ground at z = 0. Every non-void pixel receives exactly one point at
// its back-projected center, so the rasterized cloud reproduces the void
// pattern exactly.

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathfinder/config.hpp"
#include "pathfinder/geom.hpp"
#include "pathfinder/image_io.hpp"
#include "pathfinder/network.hpp"
#include "pathfinder/rng.hpp"

namespace pathfinder::data {

namespace fs = std::filesystem;

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kRoad = 1;

struct SyntheticOptions {
  std::size_t size = 64;         // image is size × size
  double altitude = 50.0;        // camera height above ground, meters
  double void_min = 0.3;         // void fraction drawn uniformly from [void_min, void_max]
  double void_max = 0.7;
  std::size_t frames = 3;        // LiDAR sweeps per sample
  double shadow_probability = 0.5;

  void validate() const {
    if (size < 16) throw std::invalid_argument("synthetic: size must be at least 16");
    if (!(void_min >= 0 && void_min <= void_max && void_max < 1))
      throw std::invalid_argument("synthetic: void fraction range must satisfy 0 ≤ min ≤ max < 1");
    if (frames == 0) throw std::invalid_argument("synthetic: at least one LiDAR frame");
    if (!(altitude > 20)) throw std::invalid_argument("synthetic: altitude must exceed 20 m");
  }
};

/// Everything drawn for one scene, before it is written out.
struct Scene {
  std::size_t size = 0;
  std::vector<std::uint8_t> labels;   // [H, W]
  std::vector<double> surface;        // [H, W] surface height above ground, meters
  std::vector<float> intensity;       // [H, W] LiDAR return intensity
  std::vector<float> rgb;             // [H, W, 3] in [0, 1]
  std::vector<std::uint8_t> occupied; // [H, W] 1 where the LiDAR sees a point
  std::vector<std::uint8_t> shadowed; // [H, W] 1 where the image is darkened
  double void_fraction = 0;
  bool shadow = false;
};

namespace detail {

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Two-octave value noise on an n×n grid, roughly in [0, 1].
inline std::vector<double> value_noise(Rng& rng, std::size_t n) {
  std::vector<double> out(n * n, 0.0);
  double amp = 1.0;
  for (std::size_t cells : {4U, 8U}) {
    const std::size_t g = cells + 1;
    std::vector<double> grid(g * g);
    for (auto& v : grid) v = rng.uniform();
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double gx = (static_cast<double>(x) + 0.5) / static_cast<double>(n) * static_cast<double>(cells);
        const double gy = (static_cast<double>(y) + 0.5) / static_cast<double>(n) * static_cast<double>(cells);
        const auto x0 = std::min(static_cast<std::size_t>(gx), cells - 1);
        const auto y0 = std::min(static_cast<std::size_t>(gy), cells - 1);
        double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
        fx = fx * fx * (3 - 2 * fx);
        fy = fy * fy * (3 - 2 * fy);
        const double a = grid[y0 * g + x0], b = grid[y0 * g + x0 + 1];
        const double c = grid[(y0 + 1) * g + x0], d = grid[(y0 + 1) * g + x0 + 1];
        out[y * n + x] += amp * ((a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy);
      }
    }
    amp *= 0.5;
  }
  return out;
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

/// A point on the image border, chosen on side 0..3 (top, right, bottom, left).
inline std::pair<double, double> border_point(Rng& rng, int side, double n) {
  const double t = rng.uniform(0.1, 0.9) * n;
  switch (side) {
    case 0: return {t, -2.0};
    case 1: return {n + 2.0, t};
    case 2: return {t, n + 2.0};
    default: return {-2.0, t};
  }
}

inline void paint_roads(Rng& rng, Scene& s) {
  const double n = static_cast<double>(s.size);
  const int roads = 1 + static_cast<int>(rng.below(3));
  for (int r = 0; r < roads; ++r) {
    const int side_a = static_cast<int>(rng.below(4));
    const int side_b = (side_a + 1 + static_cast<int>(rng.below(3))) % 4;
    const auto [x0, y0] = border_point(rng, side_a, n);
    const auto [x2, y2] = border_point(rng, side_b, n);
    // Control point pulls the ribbon into a gentle curve.
    const double x1 = (x0 + x2) / 2 + rng.uniform(-0.25, 0.25) * n;
    const double y1 = (y0 + y2) / 2 + rng.uniform(-0.25, 0.25) * n;
    const double half_width = rng.uniform(4.0, 9.0) / 2;
    constexpr int kSteps = 48;
    std::vector<std::pair<double, double>> curve;
    for (int i = 0; i <= kSteps; ++i) {
      const double t = static_cast<double>(i) / kSteps;
      curve.emplace_back((1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * x1 + t * t * x2,
                         (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * y1 + t * t * y2);
    }
    for (std::size_t y = 0; y < s.size; ++y) {
      for (std::size_t x = 0; x < s.size; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        for (int i = 0; i < kSteps; ++i) {
          if (segment_distance(px, py, curve[i].first, curve[i].second, curve[i + 1].first, curve[i + 1].second) <=
              half_width) {
            s.labels[y * s.size + x] = kRoad;
            break;
          }
        }
      }
    }
  }
}

enum class Surface : std::uint8_t { kGrass, kSoil, kRoad, kRoof, kTree };

struct Objects {
  std::vector<Surface> kind;
  std::vector<int> roof_style;  // per pixel, index into roof palette
};

/// Buildings and trees on non-road ground. Each occupies a footprint that
/// must not touch a road pixel.
inline Objects place_objects(Rng& rng, Scene& s) {
  const std::size_t n = s.size;
  Objects o;
  o.kind.assign(n * n, Surface::kGrass);
  o.roof_style.assign(n * n, 0);
  const auto soil = value_noise(rng, n);
  for (std::size_t i = 0; i < n * n; ++i) {
    if (s.labels[i] == kRoad) {
      o.kind[i] = Surface::kRoad;
    } else if (soil[i] > 1.05) {
      o.kind[i] = Surface::kSoil;
    }
  }
  auto free_box = [&](long x0, long y0, long x1, long y1) {
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        if (x < 0 || y < 0 || x >= static_cast<long>(n) || y >= static_cast<long>(n)) continue;
        const auto k = o.kind[static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)];
        if (k == Surface::kRoad || k == Surface::kRoof || k == Surface::kTree) return false;
      }
    return true;
  };
  const std::size_t buildings = 2 + rng.below(4);
  for (std::size_t b = 0, attempts = 0; b < buildings && attempts < 60; ++attempts) {
    const long w = 5 + static_cast<long>(rng.below(8)), h = 5 + static_cast<long>(rng.below(8));
    const long x0 = static_cast<long>(rng.below(n)) - w / 2, y0 = static_cast<long>(rng.below(n)) - h / 2;
    if (!free_box(x0 - 1, y0 - 1, x0 + w, y0 + h)) continue;
    const double height = rng.uniform(4.0, 15.0);
    const int style = static_cast<int>(rng.below(3));  // 0 gray, 1 red, 2 brown
    for (long y = y0; y < y0 + h; ++y)
      for (long x = x0; x < x0 + w; ++x) {
        if (x < 0 || y < 0 || x >= static_cast<long>(n) || y >= static_cast<long>(n)) continue;
        const auto i = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
        o.kind[i] = Surface::kRoof;
        o.roof_style[i] = style;
        s.surface[i] = height;
      }
    ++b;
  }
  const std::size_t trees = 3 + rng.below(8);
  for (std::size_t t = 0, attempts = 0; t < trees && attempts < 80; ++attempts) {
    const double r = rng.uniform(1.5, 3.5);
    const double cx = rng.uniform(0, static_cast<double>(n)), cy = rng.uniform(0, static_cast<double>(n));
    const long lo_x = static_cast<long>(std::floor(cx - r)), hi_x = static_cast<long>(std::ceil(cx + r));
    const long lo_y = static_cast<long>(std::floor(cy - r)), hi_y = static_cast<long>(std::ceil(cy + r));
    if (!free_box(lo_x - 1, lo_y - 1, hi_x + 1, hi_y + 1)) continue;
    const double crown = rng.uniform(3.0, 8.0);
    for (long y = lo_y; y <= hi_y; ++y)
      for (long x = lo_x; x <= hi_x; ++x) {
        if (x < 0 || y < 0 || x >= static_cast<long>(n) || y >= static_cast<long>(n)) continue;
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r * r) continue;
        const auto i = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
        o.kind[i] = Surface::kTree;
        s.surface[i] = crown * (1 - 0.4 * d2 / (r * r));
      }
    ++t;
  }
  return o;
}

/// Shadow patches: cast shadows of tall objects along one sun direction plus
/// a few elliptical blotches centered on road pixels.
inline void paint_shadows(Rng& rng, Scene& s, const Objects& o) {
  const std::size_t n = s.size;
  const double sun = rng.uniform(0, 2 * std::numbers::pi);
  const double sx = std::cos(sun), sy = std::sin(sun);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double h = s.surface[y * n + x];
      if (h <= 0 || (o.kind[y * n + x] != Surface::kRoof && o.kind[y * n + x] != Surface::kTree)) continue;
      const double len = 0.5 * h;
      for (double t = 0.5; t <= len; t += 0.5) {
        const long px = static_cast<long>(std::floor(static_cast<double>(x) + 0.5 + sx * t));
        const long py = static_cast<long>(std::floor(static_cast<double>(y) + 0.5 + sy * t));
        if (px < 0 || py < 0 || px >= static_cast<long>(n) || py >= static_cast<long>(n)) continue;
        const auto j = static_cast<std::size_t>(py) * n + static_cast<std::size_t>(px);
        if (s.surface[j] < h) s.shadowed[j] = 1;
      }
    }
  std::vector<std::size_t> road;
  for (std::size_t i = 0; i < n * n; ++i)
    if (s.labels[i] == kRoad) road.push_back(i);
  const std::size_t blotches = road.empty() ? 0 : 1 + rng.below(3);
  for (std::size_t b = 0; b < blotches; ++b) {
    const auto c = road[rng.below(road.size())];
    const double cx = static_cast<double>(c % n) + 0.5, cy = static_cast<double>(c / n) + 0.5;
    const double ra = rng.uniform(4, 10), rb = rng.uniform(2, 6), th = rng.uniform(0, std::numbers::pi);
    const double ct = std::cos(th), st = std::sin(th);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const double u = (dx * ct + dy * st) / ra, v = (-dx * st + dy * ct) / rb;
        if (u * u + v * v <= 1) s.shadowed[y * n + x] = 1;
      }
  }
}

inline void paint_image(Rng& rng, Scene& s, const Objects& o) {
  const std::size_t n = s.size;
  struct Rgb {
    double r, g, b;
  };
  const double tint = rng.uniform(-0.05, 0.05);
  const Rgb asphalt{0.42 + tint, 0.42 + tint, 0.44 + tint};
  const Rgb grass{0.30, 0.50 + tint, 0.24};
  const Rgb soil{0.55, 0.47, 0.36};
  const Rgb roofs[3] = {{0.50, 0.50, 0.52}, {0.62, 0.28, 0.22}, {0.48, 0.36, 0.26}};
  const Rgb tree{0.14, 0.34, 0.12};
  const auto texture = value_noise(rng, n);
  const double dark = rng.uniform(0.35, 0.5);
  s.rgb.assign(n * n * 3, 0.0F);
  for (std::size_t i = 0; i < n * n; ++i) {
    Rgb c{};
    switch (o.kind[i]) {
      case Surface::kGrass: c = grass; break;
      case Surface::kSoil: c = soil; break;
      case Surface::kRoad: c = asphalt; break;
      case Surface::kRoof: c = roofs[o.roof_style[i]]; break;
      case Surface::kTree: c = tree; break;
    }
    const double tex = 0.12 * (texture[i] - 0.75);
    const double shade = s.shadowed[i] ? dark : 1.0;
    const double ch[3] = {c.r, c.g, c.b};
    for (std::size_t k = 0; k < 3; ++k)
      s.rgb[i * 3 + k] = static_cast<float>(std::clamp((ch[k] + tex + rng.normal(0, 0.03)) * shade, 0.0, 1.0));
  }
}

inline void assign_intensity(Rng& rng, Scene& s, const Objects& o) {
  s.intensity.assign(s.size * s.size, 0.0F);
  for (std::size_t i = 0; i < s.intensity.size(); ++i) {
    double mean = 0.4, sd = 0.1;
    switch (o.kind[i]) {
      case Surface::kRoad: mean = 0.22; sd = 0.08; break;
      case Surface::kGrass: mean = 0.42; sd = 0.11; break;
      case Surface::kSoil: mean = 0.30; sd = 0.09; break;
      case Surface::kRoof: mean = 0.34; sd = 0.12; break;
      case Surface::kTree: mean = 0.50; sd = 0.14; break;
    }
    s.intensity[i] = static_cast<float>(std::clamp(rng.normal(mean, sd), 0.0, 1.0));
  }
}

/// Marks exactly round(fraction·N) pixels void: those with the lowest values
/// of a smooth noise field, ties broken by pixel index.
inline void carve_void(Rng& rng, Scene& s, double fraction) {
  const std::size_t n = s.size, total = n * n;
  const auto field = value_noise(rng, n);
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
  const auto voids = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  s.occupied.assign(total, 1);
  for (std::size_t k = 0; k < voids; ++k) s.occupied[order[k]] = 0;
  s.void_fraction = static_cast<double>(voids) / static_cast<double>(total);
}

}  // namespace detail

/// Deterministic scene for (seed, index).
inline Scene generate_scene(std::uint64_t seed, std::size_t index, const SyntheticOptions& opts) {
  opts.validate();
  Rng rng(detail::mix(seed ^ detail::mix(index)));
  Scene s;
  s.size = opts.size;
  s.labels.assign(opts.size * opts.size, kBackground);
  s.surface.assign(opts.size * opts.size, 0.0);
  s.shadowed.assign(opts.size * opts.size, 0);
  detail::paint_roads(rng, s);
  const auto objects = detail::place_objects(rng, s);
  s.shadow = rng.chance(opts.shadow_probability);
  if (s.shadow) detail::paint_shadows(rng, s, objects);
  detail::paint_image(rng, s, objects);
  detail::assign_intensity(rng, s, objects);
  detail::carve_void(rng, s, rng.uniform(opts.void_min, opts.void_max));
  return s;
}

/// Nadir pinhole with square pixels covering the scene.
inline geom::CalibratedCamera nadir_camera(const SyntheticOptions& opts) {
  geom::CalibratedCamera cam;
  const double s = static_cast<double>(opts.size);
  cam.fx = cam.fy = s;
  cam.cx = cam.cy = s / 2;
  cam.lidar_to_camera.rotation = Eigen::Vector3d(1, -1, -1).asDiagonal();
  cam.lidar_to_camera.translation = Eigen::Vector3d(0, 0, opts.altitude);
  return cam;
}

/// Writes one sample directory. Points are split across frames round-robin
/// after a shuffle; frame k stores T_k⁻¹·p.
inline void write_scene(const fs::path& dir, const Scene& s, std::uint64_t seed, std::size_t index,
                        const SyntheticOptions& opts) {
  fs::create_directories(dir);
  const std::size_t n = s.size;
  io::Image img = io::make_image(n, n, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(s.rgb[i] * 255.0F));
  io::write_image((dir / "image.ppm").string(), img);
  io::Image lab = io::make_image(n, n, 1);
  lab.pixels = s.labels;
  io::write_image((dir / "label.pgm").string(), lab);

  const auto cam = nadir_camera(opts);
  geom::write_calibration((dir / "calib.txt").string(), cam);

  Rng rng(detail::mix(detail::mix(seed) ^ (index + 0x51ed2701ULL)));
  std::vector<geom::Rigid> poses(opts.frames);
  for (std::size_t k = 1; k < opts.frames; ++k) {
    const double yaw = rng.uniform(-3.0, 3.0) * std::numbers::pi / 180.0;
    poses[k].rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    poses[k].translation = Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.2, 0.2));
  }
  geom::write_poses((dir / "poses.txt").string(), poses);

  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < n * n; ++i)
    if (s.occupied[i]) pixels.push_back(i);
  rng.shuffle(pixels.begin(), pixels.end());
  std::vector<geom::PointCloud> frames(opts.frames);
  const double f = cam.fx, c = cam.cx, alt = opts.altitude;
  for (std::size_t j = 0; j < pixels.size(); ++j) {
    const std::size_t i = pixels[j];
    const double z = s.surface[i];
    const double range = alt - z;
    const double u = static_cast<double>(i % n) + 0.5, v = static_cast<double>(i / n) + 0.5;
    const Eigen::Vector3d p_ref((u - c) * range / f, -(v - c) * range / f, z);
    const std::size_t k = j % opts.frames;
    frames[k].points.push_back({poses[k].inverse().apply(p_ref), s.intensity[i], s.labels[i]});
  }
  for (std::size_t k = 0; k < opts.frames; ++k)
    geom::write_cloud((dir / ("cloud_" + std::to_string(k) + ".txt")).string(), frames[k]);

  std::ofstream meta(dir / "meta.txt");
  meta << std::fixed << std::setprecision(6) << "void_fraction = " << s.void_fraction << "\nshadow = " << s.shadow
       << "\nframes = " << opts.frames << "\nseed = " << seed << "\nindex = " << index << '\n';
  if (!meta) throw std::runtime_error("cannot write " + (dir / "meta.txt").string());
}

inline std::string sample_name(std::size_t index) {
  std::ostringstream os;
  os << "sample_" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

/// Generates `count` samples under `root`. Samples are independent, so the
/// result does not depend on generation order.
inline void generate_dataset(const fs::path& root, std::size_t count, std::uint64_t seed,
                             const SyntheticOptions& opts = {}) {
  if (count == 0) throw std::invalid_argument("generate_dataset: count must be at least 1");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw std::runtime_error("cannot create output directory " + root.string());
  for (std::size_t i = 0; i < count; ++i)
    write_scene(root / sample_name(i), generate_scene(seed, i, opts), seed, i, opts);
}

/// Reads a sample directory and builds network inputs: accumulated cloud,
/// its raster and void mask, and both label maps.
inline Sample load_sample(const fs::path& dir) {
  const auto meta = config::read_file((dir / "meta.txt").string());
  const auto frames = static_cast<std::size_t>(std::stoul(meta.at("frames")));
  const auto img = io::read_image((dir / "image.ppm").string());
  const auto lab = io::read_image((dir / "label.pgm").string());
  if (img.channels != 3 || lab.channels != 1 || img.width != lab.width || img.height != lab.height)
    throw std::runtime_error(dir.string() + ": image and label sizes disagree");
  const auto poses = geom::read_poses((dir / "poses.txt").string());
  if (poses.size() != frames) throw std::runtime_error(dir.string() + ": pose count does not match meta");
  std::vector<geom::PointCloud> clouds;
  for (std::size_t k = 0; k < frames; ++k)
    clouds.push_back(geom::read_cloud((dir / ("cloud_" + std::to_string(k) + ".txt")).string()));
  const auto cam = geom::read_calibration((dir / "calib.txt").string());
  const auto cloud = geom::accumulate(clouds, poses);
  const std::size_t h = img.height, w = img.width, plane = h * w;
  const auto raster = geom::project_rasterize(cloud, cam, h, w);
  const auto point_labels = geom::labels_to_raster(cloud, cam, h, w);

  Sample s;
  s.name = dir.filename().string();
  s.height = h;
  s.width = w;
  s.image.resize(3 * plane);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) s.image[c * plane + i] = static_cast<float>(img.pixels[i * 3 + c]) / 255.0F;
  s.raster = raster.channels;
  s.void_mask = raster.void_mask;
  s.labels_img = lab.pixels;
  s.labels_pcd = point_labels.labels;
  s.shadow = meta.count("shadow") && meta.at("shadow") == "1";
  return s;
}

inline std::vector<fs::path> list_samples(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no samples under " + root.string());
  return dirs;
}

inline std::vector<Sample> load_dataset(const fs::path& root) {
  std::vector<Sample> out;
  for (const auto& d : list_samples(root)) out.push_back(load_sample(d));
  return out;
}

struct Split {
  std::vector<std::size_t> train, test;
};

/// Deterministic split: the last ⌈n·test_fraction⌉ samples are held out.
inline Split split_indices(std::size_t n, double test_fraction) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw std::invalid_argument("split: test fraction must be in (0, 1)");
  const auto t = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * test_fraction));
  if (t == 0 || t >= n) throw std::invalid_argument("split: need at least one train and one test sample");
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < n - t ? s.train : s.test).push_back(i);
  return s;
}

}  // namespace pathfinder::data
