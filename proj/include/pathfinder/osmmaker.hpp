#pragma once
// Road-mask post-processing: stitch per-frame masks through homographies,
// thin to a skeleton, bridge breakpoints, extract a road graph, georeference,
// and export OpenStreetMap XML.

#include <Eigen/Dense>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pathfinder::osm {

struct Mask {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> data;  // 0/1, row-major

  Mask() = default;
  Mask(std::size_t w, std::size_t h) : width(w), height(h), data(w * h, 0) {}

  bool inside(long x, long y) const {
    return x >= 0 && y >= 0 && x < static_cast<long>(width) && y < static_cast<long>(height);
  }
  std::uint8_t at(long x, long y) const { return inside(x, y) ? data[static_cast<std::size_t>(y) * width + x] : 0; }
  void set(long x, long y, std::uint8_t v = 1) { data[static_cast<std::size_t>(y) * width + x] = v; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }
  bool operator==(const Mask&) const = default;
};

struct Pixel {
  long x = 0, y = 0;
  auto operator<=>(const Pixel&) const = default;
};

// ---------------------------------------------------------------------------
// Stitching

struct StitchFrame {
  Mask mask;
  Eigen::Matrix3d to_previous = Eigen::Matrix3d::Identity();  // ignored for the first frame
};

struct Stitched {
  Mask mask;
  long origin_x = 0, origin_y = 0;  // frame-0 coordinates of canvas pixel (0,0)
};

namespace detail {
inline void require_invertible(const Eigen::Matrix3d& h, std::size_t frame) {
  if (!h.allFinite() || std::abs(h.determinant()) <= 1e-9)
    throw std::invalid_argument("stitch: homography of frame " + std::to_string(frame) + " is not invertible");
}
inline Eigen::Vector2d apply_h(const Eigen::Matrix3d& h, double x, double y) {
  const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1.0);
  return {p.x() / p.z(), p.y() / p.z()};
}
}  // namespace detail

/// Warps every frame into frame-0 pixel coordinates (pixel centers at integer
/// coordinates) by the composed homographies, growing the canvas to cover all
/// frames, and ORs overlapping pixels. Sampling is nearest-neighbor through
/// the inverse map.
inline Stitched stitch(const std::vector<StitchFrame>& frames) {
  if (frames.empty()) throw std::invalid_argument("stitch: no frames");
  std::vector<Eigen::Matrix3d> to_ref(frames.size());
  to_ref[0] = Eigen::Matrix3d::Identity();
  for (std::size_t k = 1; k < frames.size(); ++k) {
    detail::require_invertible(frames[k].to_previous, k);
    to_ref[k] = to_ref[k - 1] * frames[k].to_previous;
  }
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& m = frames[k].mask;
    if (m.width == 0 || m.height == 0) throw std::invalid_argument("stitch: empty frame");
    for (double cx : {0.0, static_cast<double>(m.width - 1)})
      for (double cy : {0.0, static_cast<double>(m.height - 1)}) {
        const auto p = detail::apply_h(to_ref[k], cx, cy);
        x0 = std::min(x0, p.x());
        y0 = std::min(y0, p.y());
        x1 = std::max(x1, p.x());
        y1 = std::max(y1, p.y());
      }
  }
  Stitched out;
  out.origin_x = static_cast<long>(std::floor(x0 + 1e-9));
  out.origin_y = static_cast<long>(std::floor(y0 + 1e-9));
  const auto w = static_cast<std::size_t>(std::ceil(x1 - 1e-9) - static_cast<double>(out.origin_x)) + 1;
  const auto h = static_cast<std::size_t>(std::ceil(y1 - 1e-9) - static_cast<double>(out.origin_y)) + 1;
  out.mask = Mask(w, h);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Eigen::Matrix3d inv = to_ref[k].inverse();
    const auto& m = frames[k].mask;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (out.mask.data[y * w + x]) continue;
        const auto q = detail::apply_h(inv, static_cast<double>(x) + static_cast<double>(out.origin_x),
                                       static_cast<double>(y) + static_cast<double>(out.origin_y));
        const long qx = std::lround(q.x()), qy = std::lround(q.y());
        if (m.at(qx, qy)) out.mask.data[y * w + x] = 1;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Skeleton

namespace detail {

// Neighbor offsets P2..P9 clockwise from north.
inline constexpr std::array<int, 8> kDx{0, 1, 1, 1, 0, -1, -1, -1};
inline constexpr std::array<int, 8> kDy{-1, -1, 0, 1, 1, 1, 0, -1};

inline std::array<int, 8> ring(const Mask& m, long x, long y) {
  std::array<int, 8> p{};
  for (int i = 0; i < 8; ++i) p[i] = m.at(x + kDx[i], y + kDy[i]) ? 1 : 0;
  return p;
}

inline int neighbor_count(const Mask& m, long x, long y) {
  const auto p = ring(m, x, y);
  int s = 0;
  for (int v : p) s += v;
  return s;
}

/// Number of 0→1 transitions around the ring.
inline int transitions(const std::array<int, 8>& p) {
  int a = 0;
  for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1);
  return a;
}

/// Yokoi connectivity number for 8-connected foreground; a pixel is simple
/// (deletable without changing topology) iff it equals 1.
inline int connectivity8(const std::array<int, 8>& p) {
  // Reorder to x1..x8 counterclockwise from east: E, NE, N, NW, W, SW, S, SE.
  const std::array<int, 8> q{p[2], p[1], p[0], p[7], p[6], p[5], p[4], p[3]};
  int n = 0;
  for (int k = 0; k < 8; k += 2) {
    const int a = 1 - q[k], b = 1 - q[(k + 1) % 8], c = 1 - q[(k + 2) % 8];
    n += a - a * b * c;
  }
  return n;
}

}  // namespace detail

/// Zhang-Suen thinning. Candidates marked in each sub-iteration are removed in
/// raster order and only while they are still simple non-endpoint pixels, so
/// component and hole counts are preserved. A final pass removes staircase
/// corners to leave a unit-width 8-connected skeleton.
inline Mask skeletonize(const Mask& input) {
  Mask m = input;
  for (auto& v : m.data) v = v ? 1 : 0;
  auto deletable = [&](long x, long y, int pass) {
    const auto p = detail::ring(m, x, y);
    int b = 0;
    for (int v : p) b += v;
    if (b < 2 || b > 6 || detail::transitions(p) != 1) return false;
    const int n = p[0], e = p[2], s = p[4], w = p[6];
    if (pass == 0 && (n * e * s != 0 || e * s * w != 0)) return false;
    if (pass == 1 && (n * e * w != 0 || n * s * w != 0)) return false;
    return detail::connectivity8(p) == 1;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<Pixel> marked;
      for (long y = 0; y < static_cast<long>(m.height); ++y)
        for (long x = 0; x < static_cast<long>(m.width); ++x)
          if (m.at(x, y) && deletable(x, y, pass)) marked.push_back({x, y});
      for (const auto& px : marked)
        if (deletable(px.x, px.y, pass)) {
          m.set(px.x, px.y, 0);
          changed = true;
        }
    }
  }
  // Staircase cleanup: a pixel with two orthogonal neighbors that touch each
  // other diagonally is redundant when it is simple.
  changed = true;
  while (changed) {
    changed = false;
    for (long y = 0; y < static_cast<long>(m.height); ++y)
      for (long x = 0; x < static_cast<long>(m.width); ++x) {
        if (!m.at(x, y)) continue;
        const auto p = detail::ring(m, x, y);
        const int n = p[0], e = p[2], s = p[4], w = p[6];
        const bool corner = (n && e) || (e && s) || (s && w) || (w && n);
        if (!corner || detail::connectivity8(p) != 1) continue;
        int b = 0;
        for (int v : p) b += v;
        if (b < 2) continue;
        m.set(x, y, 0);
        changed = true;
      }
  }
  return m;
}

/// Removes branches of at most max_len pixels that run from an endpoint into
/// a junction (three or more neighbors). Lines without junctions and cycles
/// are kept whole. Spurs are traced on the input and removed from a copy.
inline Mask prune_spurs(const Mask& skel, std::size_t max_len) {
  Mask out = skel;
  if (max_len == 0) return out;
  const long w = static_cast<long>(skel.width), h = static_cast<long>(skel.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (!skel.at(x, y) || detail::neighbor_count(skel, x, y) != 1) continue;
      std::vector<Pixel> path{{x, y}};
      Pixel prev{-1, -1}, cur{x, y};
      while (path.size() <= max_len + 1) {
        if (path.size() > 1) {
          const int n = detail::neighbor_count(skel, cur.x, cur.y);
          if (n == 1) break;
          if (n >= 3) {
            path.pop_back();
            for (const auto& p : path) out.set(p.x, p.y, 0);
            // a spur pixel that only touches the junction diagonally goes too
            const bool last = detail::connectivity8(detail::ring(out, cur.x, cur.y)) == 1;
            if (path.size() + (last ? 1 : 0) > max_len)
              for (const auto& p : path) out.set(p.x, p.y, 1);
            else if (last)
              out.set(cur.x, cur.y, 0);
            break;
          }
        }
        Pixel next = cur;
        for (int i = 0; i < 8; ++i) {
          const Pixel q{cur.x + detail::kDx[i], cur.y + detail::kDy[i]};
          if (q != prev && skel.at(q.x, q.y)) {
            next = q;
            break;
          }
        }
        prev = cur;
        cur = next;
        path.push_back(cur);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Breakpoint completion

namespace detail {

/// Pixels of a Bresenham line from a to b inclusive.
inline std::vector<Pixel> line_pixels(Pixel a, Pixel b) {
  std::vector<Pixel> out;
  long dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
  const long sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
  long err = dx + dy;
  for (Pixel p = a;;) {
    out.push_back(p);
    if (p == b) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      p.x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      p.y += sy;
    }
  }
  return out;
}

/// Outward direction at an endpoint: from the pixel `depth` steps back along
/// the skeleton to the endpoint.
inline Eigen::Vector2d endpoint_direction(const Mask& m, Pixel end, int depth) {
  Pixel prev = end, cur = end;
  for (int step = 0; step < depth; ++step) {
    bool moved = false;
    for (int i = 0; i < 8; ++i) {
      const Pixel n{cur.x + kDx[i], cur.y + kDy[i]};
      if (n == prev || !m.at(n.x, n.y)) continue;
      prev = cur;
      cur = n;
      moved = true;
      break;
    }
    if (!moved) break;
  }
  Eigen::Vector2d d(static_cast<double>(end.x - cur.x), static_cast<double>(end.y - cur.y));
  return d.norm() > 0 ? Eigen::Vector2d(d.normalized()) : d;
}

}  // namespace detail

struct BreakpointOptions {
  double max_gap_px = 8.0;
  double max_angle_deg = 30.0;
  int direction_depth = 5;
  std::size_t max_spur_px = 3;  // run_pipeline prunes spurs up to this length before joining
};

/// Joins endpoint pairs that are within max_gap_px and whose outward
/// directions both point at each other within max_angle_deg, nearest pairs
/// first, each endpoint at most once.
inline Mask complete_breakpoints(const Mask& skeleton, const BreakpointOptions& opts = {}) {
  if (opts.max_gap_px < 0) throw std::invalid_argument("complete_breakpoints: negative gap");
  Mask out = skeleton;
  std::vector<Pixel> ends;
  for (long y = 0; y < static_cast<long>(skeleton.height); ++y)
    for (long x = 0; x < static_cast<long>(skeleton.width); ++x)
      if (skeleton.at(x, y) && detail::neighbor_count(skeleton, x, y) == 1) ends.push_back({x, y});
  std::vector<Eigen::Vector2d> dirs;
  for (const auto& e : ends) dirs.push_back(detail::endpoint_direction(skeleton, e, opts.direction_depth));
  const double cos_max = std::cos(opts.max_angle_deg * std::numbers::pi / 180.0);
  struct Candidate {
    double dist;
    std::size_t a, b;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < ends.size(); ++i)
    for (std::size_t j = i + 1; j < ends.size(); ++j) {
      const Eigen::Vector2d v(static_cast<double>(ends[j].x - ends[i].x), static_cast<double>(ends[j].y - ends[i].y));
      const double d = v.norm();
      if (d == 0 || d > opts.max_gap_px) continue;
      const Eigen::Vector2d u = v / d;
      if (dirs[i].dot(u) >= cos_max - 1e-12 && dirs[j].dot(-u) >= cos_max - 1e-12) cands.push_back({d, i, j});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.dist < b.dist; });
  std::vector<bool> used(ends.size(), false);
  for (const auto& c : cands) {
    if (used[c.a] || used[c.b]) continue;
    used[c.a] = used[c.b] = true;
    for (const auto& p : detail::line_pixels(ends[c.a], ends[c.b])) out.set(p.x, p.y, 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Road graph

struct GraphNode {
  double x = 0, y = 0;  // pixel coordinates
  std::optional<double> lat, lon;
  std::vector<Pixel> pixels;  // skeleton pixels merged into this node
};

struct GraphEdge {
  std::size_t a = 0, b = 0;
  std::vector<Pixel> path;  // interior skeleton pixels from a to b, node pixels excluded
};

struct RoadGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
};

/// Nodes sit at skeleton pixels with a neighbor count other than two;
/// touching junction pixels merge into one node. Edges follow the two-neighbor
/// chains between nodes. A cycle without nodes gets an anchor node at its
/// first pixel in raster order and a self-edge.
inline RoadGraph extract_graph(const Mask& skel) {
  RoadGraph g;
  const long w = static_cast<long>(skel.width), h = static_cast<long>(skel.height);
  std::vector<long> node_of(skel.data.size(), -1);
  auto idx = [&](Pixel p) { return static_cast<std::size_t>(p.y * w + p.x); };
  auto is_node_pixel = [&](Pixel p) { return detail::neighbor_count(skel, p.x, p.y) != 2; };

  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const Pixel p{x, y};
      if (!skel.at(x, y) || !is_node_pixel(p) || node_of[idx(p)] >= 0) continue;
      // Flood the cluster of touching node pixels (junctions merge; endpoints stay single).
      GraphNode node;
      const long id = static_cast<long>(g.nodes.size());
      std::vector<Pixel> stack{p};
      node_of[idx(p)] = id;
      while (!stack.empty()) {
        const Pixel c = stack.back();
        stack.pop_back();
        node.pixels.push_back(c);
        if (detail::neighbor_count(skel, c.x, c.y) < 3) continue;
        for (int i = 0; i < 8; ++i) {
          const Pixel n{c.x + detail::kDx[i], c.y + detail::kDy[i]};
          if (!skel.at(n.x, n.y) || !is_node_pixel(n) || node_of[idx(n)] >= 0) continue;
          if (detail::neighbor_count(skel, n.x, n.y) < 3) continue;
          node_of[idx(n)] = id;
          stack.push_back(n);
        }
      }
      std::sort(node.pixels.begin(), node.pixels.end(),
                [](Pixel a, Pixel b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
      double sx = 0, sy = 0;
      for (auto q : node.pixels) sx += static_cast<double>(q.x), sy += static_cast<double>(q.y);
      sx /= static_cast<double>(node.pixels.size());
      sy /= static_cast<double>(node.pixels.size());
      Pixel best = node.pixels.front();
      double bd = 1e300;
      for (auto q : node.pixels) {
        const double d = std::hypot(static_cast<double>(q.x) - sx, static_cast<double>(q.y) - sy);
        if (d < bd) bd = d, best = q;
      }
      node.x = static_cast<double>(best.x);
      node.y = static_cast<double>(best.y);
      g.nodes.push_back(std::move(node));
    }

  std::vector<bool> visited(skel.data.size(), false);
  std::set<std::pair<std::size_t, std::size_t>> direct;  // node pairs joined with no interior pixels

  // Follows a two-neighbor chain entered at `start` from `from` until it
  // reaches a node pixel.
  auto trace = [&](Pixel from, Pixel start, std::size_t origin) {
    GraphEdge e;
    e.a = origin;
    Pixel prev = from, cur = start;
    while (node_of[idx(cur)] < 0) {
      visited[idx(cur)] = true;
      e.path.push_back(cur);
      Pixel next = cur;
      for (int i = 0; i < 8; ++i) {
        const Pixel n{cur.x + detail::kDx[i], cur.y + detail::kDy[i]};
        if (n != prev && skel.at(n.x, n.y)) next = n;
      }
      if (next == cur || (node_of[idx(next)] < 0 && visited[idx(next)])) {
        e.b = origin;  // malformed chain; close it on the origin
        return e;
      }
      prev = cur;
      cur = next;
    }
    e.b = static_cast<std::size_t>(node_of[idx(cur)]);
    return e;
  };

  // A chain pixel whose two neighbors both belong to one node is part of it.
  for (std::size_t id = 0; id < g.nodes.size(); ++id)
    for (std::size_t k = 0; k < g.nodes[id].pixels.size(); ++k) {
      const Pixel q = g.nodes[id].pixels[k];
      for (int i = 0; i < 8; ++i) {
        const Pixel n{q.x + detail::kDx[i], q.y + detail::kDy[i]};
        if (!skel.at(n.x, n.y) || node_of[idx(n)] >= 0) continue;
        bool inside = true;
        for (int j = 0; j < 8; ++j) {
          const Pixel m{n.x + detail::kDx[j], n.y + detail::kDy[j]};
          if (skel.at(m.x, m.y) && node_of[idx(m)] != static_cast<long>(id)) inside = false;
        }
        if (!inside) continue;
        node_of[idx(n)] = static_cast<long>(id);
        g.nodes[id].pixels.push_back(n);
      }
    }

  for (std::size_t id = 0; id < g.nodes.size(); ++id) {
    for (const auto q : std::vector<Pixel>(g.nodes[id].pixels)) {
      for (int i = 0; i < 8; ++i) {
        const Pixel n{q.x + detail::kDx[i], q.y + detail::kDy[i]};
        if (!skel.at(n.x, n.y)) continue;
        const long other = node_of[idx(n)];
        if (other >= 0) {
          if (static_cast<std::size_t>(other) == id) continue;
          const auto key = std::minmax(id, static_cast<std::size_t>(other));
          if (direct.insert(key).second) g.edges.push_back({id, static_cast<std::size_t>(other), {}});
          continue;
        }
        if (visited[idx(n)]) continue;
        g.edges.push_back(trace(q, n, id));
      }
    }
  }

  // Remaining unvisited chain pixels form node-free cycles.
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const Pixel p{x, y};
      if (!skel.at(x, y) || node_of[idx(p)] >= 0 || visited[idx(p)]) continue;
      GraphNode anchor;
      anchor.x = static_cast<double>(x);
      anchor.y = static_cast<double>(y);
      anchor.pixels = {p};
      const std::size_t id = g.nodes.size();
      g.nodes.push_back(anchor);
      node_of[idx(p)] = static_cast<long>(id);
      for (int i = 0; i < 8; ++i) {
        const Pixel n{x + detail::kDx[i], y + detail::kDy[i]};
        if (!skel.at(n.x, n.y) || visited[idx(n)] || node_of[idx(n)] >= 0) continue;
        g.edges.push_back(trace(p, n, id));
        break;
      }
    }
  return g;
}

// ---------------------------------------------------------------------------
// Georeferencing

struct Anchor {
  double px = 0, py = 0;   // pixel
  double lat = 0, lon = 0;  // degrees
};

/// Similarity transform pixel → (lon, lat), written as complex affine map
/// lon + i·lat = a·(px − i·py) + b (image y grows downward, latitude upward).
struct Similarity {
  std::complex<double> a{1, 0}, b{0, 0};

  std::pair<double, double> to_geo(double px, double py) const {  // (lat, lon)
    const auto w = a * std::complex<double>(px, -py) + b;
    return {w.imag(), w.real()};
  }
  double scale() const { return std::abs(a); }
  double rotation_rad() const { return std::arg(a); }
};

/// Least-squares similarity through ≥ 2 anchors (exact for two).
inline Similarity fit_similarity(const std::vector<Anchor>& anchors) {
  if (anchors.size() < 2) throw std::invalid_argument("georeference: need at least two anchors");
  std::complex<double> zm{0, 0}, wm{0, 0};
  for (const auto& an : anchors) {
    zm += std::complex<double>(an.px, -an.py);
    wm += std::complex<double>(an.lon, an.lat);
  }
  const double n = static_cast<double>(anchors.size());
  zm /= n;
  wm /= n;
  std::complex<double> num{0, 0};
  double den = 0;
  for (const auto& an : anchors) {
    const auto dz = std::complex<double>(an.px, -an.py) - zm;
    const auto dw = std::complex<double>(an.lon, an.lat) - wm;
    num += dw * std::conj(dz);
    den += std::norm(dz);
  }
  if (den < 1e-18) throw std::invalid_argument("georeference: anchors are coincident, transform is degenerate");
  Similarity s;
  s.a = num / den;
  s.b = wm - s.a * zm;
  return s;
}

inline void georeference(RoadGraph& g, const Similarity& s) {
  for (auto& n : g.nodes) {
    const auto [lat, lon] = s.to_geo(n.x, n.y);
    n.lat = lat;
    n.lon = lon;
  }
}

// ---------------------------------------------------------------------------
// OSM XML

/// OSM v0.6 document. Graph nodes get ids 1..N and a `pathfinder=vertex` tag; shape points along edges follow with higher ids.
/// Each edge becomes a way tagged highway=road.
inline std::string to_osm_xml(const RoadGraph& g, const Similarity& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(10);
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"pathfinder\">\n";
  auto node = [&](std::size_t id, double px, double py, bool vertex) {
    const auto [lat, lon] = s.to_geo(px, py);
    os << "  <node id=\"" << id << "\" visible=\"true\" version=\"1\" lat=\"" << lat << "\" lon=\"" << lon << "\"";
    if (vertex)
      os << ">\n    <tag k=\"pathfinder\" v=\"vertex\"/>\n  </node>\n";
    else
      os << "/>\n";
  };
  for (std::size_t i = 0; i < g.nodes.size(); ++i) node(i + 1, g.nodes[i].x, g.nodes[i].y, true);
  std::size_t next_id = g.nodes.size() + 1;
  std::vector<std::vector<std::size_t>> way_refs;
  for (const auto& e : g.edges) {
    std::vector<std::size_t> refs{e.a + 1};
    for (const auto& p : e.path) {
      node(next_id, static_cast<double>(p.x), static_cast<double>(p.y), false);
      refs.push_back(next_id++);
    }
    refs.push_back(e.b + 1);
    way_refs.push_back(std::move(refs));
  }
  for (std::size_t i = 0; i < way_refs.size(); ++i) {
    os << "  <way id=\"" << i + 1 << "\" visible=\"true\" version=\"1\">\n";
    for (auto r : way_refs[i]) os << "    <nd ref=\"" << r << "\"/>\n";
    os << "    <tag k=\"highway\" v=\"road\"/>\n  </way>\n";
  }
  os << "</osm>\n";
  return os.str();
}

struct OsmDocument {
  struct Node {
    double lat = 0, lon = 0;
    bool vertex = false;
  };
  std::map<std::size_t, Node> nodes;
  std::vector<std::vector<std::size_t>> ways;  // node refs
  std::vector<std::map<std::string, std::string>> way_tags;
};

/// Parses an OSM XML document. Throws on malformed XML or dangling node refs.
inline OsmDocument parse_osm_xml(const std::string& xml) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(xml);
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw std::runtime_error(std::string("OSM XML parse error: ") + e.what());
  }
  OsmDocument doc;
  for (const auto& [tag, child] : tree.get_child("osm")) {
    if (tag == "node") {
      OsmDocument::Node n;
      n.lat = child.get<double>("<xmlattr>.lat");
      n.lon = child.get<double>("<xmlattr>.lon");
      for (const auto& [t, c] : child)
        if (t == "tag" && c.get<std::string>("<xmlattr>.k") == "pathfinder") n.vertex = true;
      doc.nodes[child.get<std::size_t>("<xmlattr>.id")] = n;
    } else if (tag == "way") {
      std::vector<std::size_t> refs;
      std::map<std::string, std::string> tags;
      for (const auto& [t, c] : child) {
        if (t == "nd") refs.push_back(c.get<std::size_t>("<xmlattr>.ref"));
        if (t == "tag") tags[c.get<std::string>("<xmlattr>.k")] = c.get<std::string>("<xmlattr>.v");
      }
      doc.ways.push_back(std::move(refs));
      doc.way_tags.push_back(std::move(tags));
    }
  }
  for (const auto& w : doc.ways)
    for (auto r : w)
      if (!doc.nodes.count(r)) throw std::runtime_error("OSM XML: way references missing node " + std::to_string(r));
  return doc;
}

/// Topology of a graph: node count and the sorted list of edge endpoint pairs.
struct Topology {
  std::size_t nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  bool operator==(const Topology&) const = default;
};

inline Topology topology_of(const RoadGraph& g) {
  Topology t;
  t.nodes = g.nodes.size();
  for (const auto& e : g.edges) t.edges.push_back(std::minmax(e.a, e.b));
  std::sort(t.edges.begin(), t.edges.end());
  return t;
}

/// Rebuilds the topology from a parsed document: vertex-tagged nodes in id
/// order, one edge per way between its first and last reference.
inline Topology topology_of(const OsmDocument& doc) {
  Topology t;
  std::map<std::size_t, std::size_t> index;
  for (const auto& [id, n] : doc.nodes)
    if (n.vertex) index[id] = t.nodes++;
  for (const auto& w : doc.ways) {
    if (w.size() < 2) throw std::runtime_error("OSM XML: way with fewer than two nodes");
    t.edges.push_back(std::minmax(index.at(w.front()), index.at(w.back())));
  }
  std::sort(t.edges.begin(), t.edges.end());
  return t;
}

// ---------------------------------------------------------------------------
// Files

/// Homographies: 9 row-major numbers per frame, frames in order.
inline std::vector<Eigen::Matrix3d> read_homographies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Eigen::Matrix3d> out;
  Eigen::Matrix3d m;
  while (in >> std::ws && in.peek() != EOF) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        if (!(in >> m(r, c))) throw std::runtime_error(path + ": expected 9 numbers per homography");
    out.push_back(m);
  }
  return out;
}

inline void write_homographies(const std::string& path, const std::vector<Eigen::Matrix3d>& hs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << std::setprecision(17);
  for (const auto& m : hs)
    for (int r = 0; r < 3; ++r) out << m(r, 0) << ' ' << m(r, 1) << ' ' << m(r, 2) << '\n';
}

/// Anchors: one "px py lat lon" line each.
inline std::vector<Anchor> read_anchors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Anchor> out;
  Anchor a;
  while (in >> a.px >> a.py >> a.lat >> a.lon) out.push_back(a);
  if (!in.eof()) throw std::runtime_error(path + ": malformed anchor line");
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

/// Moves graph coordinates by (dx, dy), e.g. from canvas to frame-0 pixels.
inline void shift_graph(RoadGraph& g, long dx, long dy) {
  for (auto& n : g.nodes) {
    n.x += static_cast<double>(dx);
    n.y += static_cast<double>(dy);
    for (auto& p : n.pixels) p.x += dx, p.y += dy;
  }
  for (auto& e : g.edges)
    for (auto& p : e.path) p.x += dx, p.y += dy;
}

/// Stitch → skeleton → spur pruning → breakpoint completion → graph (frame-0 pixel
/// coordinates) → georeference with `anchors` given in frame-0 pixels → XML.
struct PipelineResult {
  Stitched stitched;
  Mask skeleton;
  RoadGraph graph;
  Similarity transform;
  std::string xml;
};

inline PipelineResult run_pipeline(const std::vector<StitchFrame>& frames, const std::vector<Anchor>& anchors,
                                   const BreakpointOptions& opts = {}) {
  PipelineResult r;
  r.stitched = stitch(frames);
  r.skeleton = complete_breakpoints(prune_spurs(skeletonize(r.stitched.mask), opts.max_spur_px), opts);
  r.graph = extract_graph(r.skeleton);
  shift_graph(r.graph, r.stitched.origin_x, r.stitched.origin_y);
  r.transform = fit_similarity(anchors);
  georeference(r.graph, r.transform);
  r.xml = to_osm_xml(r.graph, r.transform);
  return r;
}

}  // namespace pathfinder::osm
