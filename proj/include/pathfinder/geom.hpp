#pragma once
// Point clouds: multi-frame accumulation, pinhole projection into the camera
// image, and rasterization to image-aligned channels plus a void mask.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pathfinder::geom {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr int kNoLabel = -1;

struct Point {
  Eigen::Vector3d position;
  float intensity = 0.0F;
  int label = kNoLabel;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool labeled() const {
    return !points.empty() && std::all_of(points.begin(), points.end(), [](const Point& p) { return p.label >= 0; });
  }
};

/// Rigid transform x ↦ R·x + t.
struct Rigid {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Rigid identity() { return {}; }
  static Rigid from_matrix(const Eigen::Matrix4d& m) { return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()}; }
  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  Rigid inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
  Rigid operator*(const Rigid& o) const { return {rotation * o.rotation, rotation * o.translation + translation}; }

  /// Throws unless R is orthonormal with det +1 to 1e-6.
  void validate(const char* what) const {
    const double orth = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
    if (!(orth <= 1e-6) || std::abs(rotation.determinant() - 1.0) > 1e-6 || !translation.allFinite())
      throw std::invalid_argument(std::string(what) + ": not a rigid transform (|RᵀR − I| = " + std::to_string(orth) + ")");
  }
};

struct CalibratedCamera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Rigid lidar_to_camera;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
    lidar_to_camera.validate("camera extrinsics");
  }
};

/// Union of the frames, each mapped by its pose into the common reference
/// frame: p_ref = T_k · p_k.
inline PointCloud accumulate(const std::vector<PointCloud>& frames, const std::vector<Rigid>& poses) {
  if (frames.size() != poses.size())
    throw std::invalid_argument("accumulate: " + std::to_string(frames.size()) + " frames but " +
                                std::to_string(poses.size()) + " poses");
  PointCloud out;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    poses[k].validate("accumulate pose");
    for (const auto& p : frames[k].points) {
      if (!p.position.allFinite()) throw std::invalid_argument("accumulate: non-finite point coordinate");
      out.points.push_back({poses[k].apply(p.position), p.intensity, p.label});
    }
  }
  return out;
}

struct RasterOptions {
  double max_range = 120.0;    // depth normalization, meters
  double height_scale = 30.0;  // height-above-min normalization, meters
};

/// Channel order of the rasterized point cloud.
enum RasterChannel : std::size_t { kDepth = 0, kIntensity = 1, kHeight = 2, kOccupancy = 3, kRasterChannels = 4 };

struct RasterizedCloud {
  std::size_t height = 0, width = 0;
  std::vector<float> channels;         // [4, H, W]
  std::vector<std::uint8_t> void_mask;  // [H, W]; 1 where a point landed, 0 in the void
  std::vector<std::int64_t> winner;     // [H, W]; index of the retained point or −1

  float at(std::size_t c, std::size_t y, std::size_t x) const { return channels[(c * height + y) * width + x]; }
  double void_fraction() const {
    return static_cast<double>(std::count(void_mask.begin(), void_mask.end(), 0)) /
           static_cast<double>(void_mask.size());
  }
};

struct PixelHit {
  std::int64_t index;
  std::size_t pixel;
  double depth;
};

/// Projects every point with z > 0 in camera coordinates; returns the hits
/// that land inside the H×W image. u = fx·x/z + cx, v = fy·y/z + cy and the
/// pixel is (⌊v⌋, ⌊u⌋).
inline std::vector<PixelHit> project_points(const PointCloud& cloud, const CalibratedCamera& cam, std::size_t height,
                                            std::size_t width) {
  cam.validate();
  std::vector<PixelHit> hits;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto pc = cam.lidar_to_camera.apply(cloud.points[i].position);
    if (!(pc.z() > 0)) continue;
    const double u = cam.fx * pc.x() / pc.z() + cam.cx;
    const double v = cam.fy * pc.y() / pc.z() + cam.cy;
    if (!(u >= 0 && v >= 0 && u < static_cast<double>(width) && v < static_cast<double>(height))) continue;
    const auto px = static_cast<std::size_t>(std::floor(u)), py = static_cast<std::size_t>(std::floor(v));
    hits.push_back({static_cast<std::int64_t>(i), py * width + px, pc.z()});
  }
  return hits;
}

/// z-buffer: per pixel the nearest point wins, ties going to the smaller index.
inline std::vector<std::int64_t> zbuffer(const std::vector<PixelHit>& hits, std::size_t pixels) {
  std::vector<std::int64_t> winner(pixels, -1);
  std::vector<double> best(pixels, std::numeric_limits<double>::infinity());
  for (const auto& h : hits) {
    if (h.depth < best[h.pixel] || (h.depth == best[h.pixel] && h.index < winner[h.pixel])) {
      best[h.pixel] = h.depth;
      winner[h.pixel] = h.index;
    }
  }
  return winner;
}

/// Rasterizes into depth/max_range, intensity, height above the lowest
/// in-image point (LiDAR z) / height_scale, and occupancy. Channels are zero
/// on void pixels. An empty in-frustum set yields an all-void raster.
inline RasterizedCloud project_rasterize(const PointCloud& cloud, const CalibratedCamera& cam, std::size_t height,
                                         std::size_t width, const RasterOptions& opts = {}) {
  RasterizedCloud r;
  r.height = height;
  r.width = width;
  const std::size_t plane = height * width;
  r.channels.assign(kRasterChannels * plane, 0.0F);
  r.void_mask.assign(plane, 0);
  const auto hits = project_points(cloud, cam, height, width);
  r.winner = zbuffer(hits, plane);
  double z_min = std::numeric_limits<double>::infinity();
  for (auto w : r.winner)
    if (w >= 0) z_min = std::min(z_min, cloud.points[static_cast<std::size_t>(w)].position.z());
  std::vector<double> depth(plane, 0.0);
  for (const auto& h : hits)
    if (r.winner[h.pixel] == h.index) depth[h.pixel] = h.depth;
  for (std::size_t i = 0; i < plane; ++i) {
    if (r.winner[i] < 0) continue;
    const auto& p = cloud.points[static_cast<std::size_t>(r.winner[i])];
    r.channels[kDepth * plane + i] = static_cast<float>(std::min(depth[i] / opts.max_range, 1.0));
    r.channels[kIntensity * plane + i] = p.intensity;
    r.channels[kHeight * plane + i] =
        static_cast<float>(std::clamp((p.position.z() - z_min) / opts.height_scale, 0.0, 1.0));
    r.channels[kOccupancy * plane + i] = 1.0F;
    r.void_mask[i] = 1;
  }
  return r;
}

struct LabelRaster {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> labels;     // class of the z-buffer winner, kIgnoreLabel on void
  std::vector<std::uint8_t> void_mask;  // same convention as RasterizedCloud
};

inline LabelRaster labels_to_raster(const PointCloud& cloud, const CalibratedCamera& cam, std::size_t height,
                                    std::size_t width) {
  if (!cloud.labeled()) throw std::invalid_argument("labels_to_raster: cloud carries no labels");
  LabelRaster out;
  out.height = height;
  out.width = width;
  const auto winner = zbuffer(project_points(cloud, cam, height, width), height * width);
  out.labels.assign(height * width, kIgnoreLabel);
  out.void_mask.assign(height * width, 0);
  for (std::size_t i = 0; i < winner.size(); ++i) {
    if (winner[i] < 0) continue;
    const int l = cloud.points[static_cast<std::size_t>(winner[i])].label;
    if (l < 0 || l >= kIgnoreLabel) throw std::invalid_argument("labels_to_raster: label out of range");
    out.labels[i] = static_cast<std::uint8_t>(l);
    out.void_mask[i] = 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files
//
// Point cloud (text): first line "<count>", then one point per line
// "x y z intensity label" with label −1 for unlabeled points.
// Poses: one transform per frame, 16 row-major numbers each.
// Calibration: "fx fy cx cy" on the first line, then 16 row-major numbers of
// the LiDAR→camera transform.

namespace detail {
inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}
inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}
inline Eigen::Matrix4d read_matrix4(std::istream& in, const std::string& what) {
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(in >> m(r, c))) throw std::runtime_error(what + ": expected 16 numbers per transform");
  return m;
}
inline void write_matrix4(std::ostream& out, const Eigen::Matrix4d& m) {
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out << m(r, c) << (c == 3 ? '\n' : ' ');
}
}  // namespace detail

inline void write_cloud(const std::string& path, const PointCloud& cloud) {
  auto out = detail::open_out(path);
  out << cloud.size() << '\n' << std::fixed << std::setprecision(6);
  for (const auto& p : cloud.points)
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << std::setprecision(4)
        << p.intensity << std::setprecision(6) << ' ' << p.label << '\n';
}

inline PointCloud read_cloud(const std::string& path) {
  auto in = detail::open_in(path);
  std::size_t count = 0;
  if (!(in >> count)) throw std::runtime_error(path + ": missing point count");
  PointCloud cloud;
  cloud.points.resize(count);
  for (auto& p : cloud.points) {
    double x, y, z;
    if (!(in >> x >> y >> z >> p.intensity >> p.label)) throw std::runtime_error(path + ": truncated point list");
    p.position = {x, y, z};
  }
  return cloud;
}

inline void write_poses(const std::string& path, const std::vector<Rigid>& poses) {
  auto out = detail::open_out(path);
  out << std::fixed << std::setprecision(12);
  for (const auto& p : poses) detail::write_matrix4(out, p.matrix());
}

inline std::vector<Rigid> read_poses(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<Rigid> poses;
  while (in >> std::ws && in.peek() != EOF) poses.push_back(Rigid::from_matrix(detail::read_matrix4(in, path)));
  return poses;
}

inline void write_calibration(const std::string& path, const CalibratedCamera& cam) {
  auto out = detail::open_out(path);
  out << std::fixed << std::setprecision(12) << cam.fx << ' ' << cam.fy << ' ' << cam.cx << ' ' << cam.cy << '\n';
  detail::write_matrix4(out, cam.lidar_to_camera.matrix());
}

inline CalibratedCamera read_calibration(const std::string& path) {
  auto in = detail::open_in(path);
  CalibratedCamera cam;
  if (!(in >> cam.fx >> cam.fy >> cam.cx >> cam.cy)) throw std::runtime_error(path + ": expected fx fy cx cy");
  cam.lidar_to_camera = Rigid::from_matrix(detail::read_matrix4(in, path));
  cam.validate();
  return cam;
}

}  // namespace pathfinder::geom
