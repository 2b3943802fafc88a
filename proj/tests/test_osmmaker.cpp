#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <queue>
#include <set>

#include "pathfinder/osmmaker.hpp"
#include "pathfinder/phase_correlation.hpp"
#include "pathfinder/rng.hpp"

using namespace pathfinder;
using namespace pathfinder::osm;

namespace {

Mask rect(std::size_t w, std::size_t h, long x0, long y0, long x1, long y1) {
  Mask m(w, h);
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) m.set(x, y);
  return m;
}

// Flood-fill component count; 8-connected for value 1, 4-connected for 0.
std::size_t components(const Mask& m, std::uint8_t value, bool exclude_border = false) {
  const long w = static_cast<long>(m.width), h = static_cast<long>(m.height);
  std::vector<char> seen(m.data.size(), 0);
  std::size_t count = 0;
  for (long sy = 0; sy < h; ++sy)
    for (long sx = 0; sx < w; ++sx) {
      if (m.at(sx, sy) != value || seen[sy * w + sx]) continue;
      bool touches = false;
      std::queue<Pixel> q;
      q.push({sx, sy});
      seen[sy * w + sx] = 1;
      while (!q.empty()) {
        const auto p = q.front();
        q.pop();
        if (p.x == 0 || p.y == 0 || p.x == w - 1 || p.y == h - 1) touches = true;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (value == 0 && dx != 0 && dy != 0)) continue;
            const long x = p.x + dx, y = p.y + dy;
            if (!m.inside(x, y) || m.at(x, y) != value || seen[y * w + x]) continue;
            seen[y * w + x] = 1;
            q.push({x, y});
          }
      }
      if (!(exclude_border && touches)) ++count;
    }
  return count;
}

std::size_t holes(const Mask& m) { return components(m, 0, true); }

bool has_full_2x2(const Mask& m) {
  for (long y = 0; y + 1 < static_cast<long>(m.height); ++y)
    for (long x = 0; x + 1 < static_cast<long>(m.width); ++x)
      if (m.at(x, y) && m.at(x + 1, y) && m.at(x, y + 1) && m.at(x + 1, y + 1)) return true;
  return false;
}

Mask ring(std::size_t size, double r_in, double r_out) {
  Mask m(size, size);
  const double c = (static_cast<double>(size) - 1) / 2;
  for (long y = 0; y < static_cast<long>(size); ++y)
    for (long x = 0; x < static_cast<long>(size); ++x) {
      const double r = std::hypot(x - c, y - c);
      if (r >= r_in && r <= r_out) m.set(x, y);
    }
  return m;
}

Mask plus_sign() {
  Mask m(21, 21);
  for (long i = 2; i <= 18; ++i) {
    m.set(i, 10);
    m.set(10, i);
  }
  return m;
}

// Thresholded box-blurred noise: blobby masks with holes and several parts.
Mask random_blobs(std::uint64_t seed, std::size_t size = 48) {
  Rng rng(seed);
  std::vector<double> v(size * size);
  for (auto& x : v) x = rng.uniform();
  Mask m(size, size);
  const long n = static_cast<long>(size);
  for (long y = 2; y < n - 2; ++y)
    for (long x = 2; x < n - 2; ++x) {
      double s = 0;
      for (long dy = -2; dy <= 2; ++dy)
        for (long dx = -2; dx <= 2; ++dx) s += v[(y + dy) * n + x + dx];
      if (s / 25 > 0.52) m.set(x, y);
    }
  return m;
}

Similarity scale_anchor_similarity() {
  // pixel x → +lon, pixel y → −lat, 1e-5 deg per pixel
  return fit_similarity({{0, 0, 30.0, 114.0}, {100, 0, 30.0, 114.001}});
}

}  // namespace

// ---------------------------------------------------------------------------
// Stitch

TEST(Stitch, SingleIdentityFrameIsUnchanged) {
  const auto m = rect(20, 10, 3, 2, 12, 6);
  const auto s = stitch({{m}});
  EXPECT_EQ(s.mask, m);
  EXPECT_EQ(s.origin_x, 0);
  EXPECT_EQ(s.origin_y, 0);
}

TEST(Stitch, IdenticalFramesAreIdempotent) {
  const auto m = rect(20, 10, 3, 2, 12, 6);
  EXPECT_EQ(stitch({{m}, {m}}).mask, m);
}

TEST(Stitch, TenPixelTranslationMatchesManualWarp) {
  Mask a = rect(30, 12, 0, 4, 29, 7);
  Mask b(30, 12);
  b.set(5, 1);
  b.set(29, 11);
  for (long x = 0; x < 30; ++x) b.set(x, 5);
  const auto s = stitch({{a}, {b, translation_homography(10, 0)}});
  ASSERT_EQ(s.mask.width, 40U);
  ASSERT_EQ(s.mask.height, 12U);
  for (long y = 0; y < 12; ++y)
    for (long x = 0; x < 40; ++x) {
      const std::uint8_t expect = a.at(x, y) || b.at(x - 10, y);
      ASSERT_EQ(s.mask.at(x, y), expect) << x << "," << y;
    }
}

TEST(Stitch, NegativeOffsetGrowsCanvasAndReportsOrigin) {
  const auto m = rect(10, 10, 0, 0, 9, 9);
  const auto s = stitch({{m}, {m, translation_homography(-4, -3)}});
  EXPECT_EQ(s.origin_x, -4);
  EXPECT_EQ(s.origin_y, -3);
  EXPECT_EQ(s.mask.width, 14U);
  EXPECT_EQ(s.mask.height, 13U);
}

TEST(Stitch, OrderIndependentGivenComposedHomographies) {
  Rng rng(2);
  std::vector<Mask> m(3, Mask(16, 16));
  for (auto& f : m)
    for (auto& v : f.data) v = rng.chance(0.3);
  const auto abc = stitch({{m[0]}, {m[1], translation_homography(5, 2)}, {m[2], translation_homography(4, -1)}});
  // same frames with the last two swapped: C→A is (9,1), B→C is (−4,1)
  const auto acb = stitch({{m[0]}, {m[2], translation_homography(9, 1)}, {m[1], translation_homography(-4, 1)}});
  EXPECT_EQ(abc.mask, acb.mask);
  EXPECT_EQ(abc.origin_x, acb.origin_x);
  EXPECT_EQ(abc.origin_y, acb.origin_y);
}

TEST(Stitch, RejectsSingularHomographyAndEmptyInput) {
  const auto m = rect(5, 5, 1, 1, 3, 3);
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(1, 1) = 0;
  EXPECT_THROW(stitch({{m}, {m, bad}}), std::invalid_argument);
  EXPECT_THROW(stitch({}), std::invalid_argument);
}

TEST(PhaseCorrelation, RecoversKnownShift) {
  Rng rng(8);
  Mask a(64, 48);
  for (auto& v : a.data) v = rng.chance(0.3);
  Mask b(64, 48);
  for (long y = 0; y < 48; ++y)
    for (long x = 0; x < 64; ++x) b.set(x, y, a.at((x + 10) % 64, (y + 45) % 48));
  // b(x, y) = a(x + 10, y − 3)  ⇒  a(x, y) = b(x − 10, y + 3)
  const auto [dx, dy] = estimate_translation(a, b);
  EXPECT_EQ(dx, 10);
  EXPECT_EQ(dy, -3);
}

// ---------------------------------------------------------------------------
// Skeleton

TEST(Skeleton, EmptyAndSinglePixel) {
  EXPECT_EQ(skeletonize(Mask(8, 8)), Mask(8, 8));
  Mask one(8, 8);
  one.set(3, 4);
  EXPECT_EQ(skeletonize(one), one);
}

TEST(Skeleton, BarThinsToItsMidline) {
  const auto bar = rect(50, 20, 5, 8, 44, 12);  // midline y = 10
  const auto s = skeletonize(bar);
  ASSERT_GT(s.count(), 30U);
  EXPECT_EQ(components(s, 1), 1U);
  for (long y = 0; y < 20; ++y)
    for (long x = 0; x < 50; ++x)
      if (s.at(x, y)) {
        EXPECT_LE(std::abs(y - 10), 1) << x << "," << y;
      }
  for (long x = 10; x <= 39; ++x) {
    int col = 0;
    for (long y = 0; y < 20; ++y) col += s.at(x, y);
    EXPECT_EQ(col, 1) << "column " << x;
  }
}

TEST(Skeleton, RingKeepsItsHole) {
  const auto r = ring(41, 10, 15);
  ASSERT_EQ(holes(r), 1U);
  const auto s = skeletonize(r);
  EXPECT_EQ(components(s, 1), 1U);
  EXPECT_EQ(holes(s), 1U);
  EXPECT_FALSE(has_full_2x2(s));
  // thinning leaves a short spur at the boundary bump; pruned, it is a thin cycle
  const auto c = prune_spurs(s, 3);
  EXPECT_EQ(holes(c), 1U);
  for (long y = 0; y < 41; ++y)
    for (long x = 0; x < 41; ++x)
      if (c.at(x, y)) {
        EXPECT_EQ(detail::neighbor_count(c, x, y), 2) << x << "," << y;
      }
}

TEST(Skeleton, PruneSpursRemovesOnlyShortJunctionBranches) {
  Mask m(30, 20);
  for (long x = 2; x <= 27; ++x) m.set(x, 10);
  for (long y = 7; y <= 9; ++y) m.set(12, y);  // 3-px spur
  for (long y = 11; y <= 18; ++y) m.set(20, y);  // 8-px branch
  const auto p = prune_spurs(m, 3);
  for (long y = 7; y <= 9; ++y) EXPECT_EQ(p.at(12, y), 0);
  EXPECT_EQ(p.count(), m.count() - 3);
  Mask line(30, 5);
  for (long x = 5; x <= 7; ++x) line.set(x, 2);
  EXPECT_EQ(prune_spurs(line, 3), line);
  EXPECT_EQ(prune_spurs(m, 0), m);
  EXPECT_EQ(prune_spurs(m, 2), m);  // spur longer than the limit stays whole
}

TEST(Skeleton, PreservesComponentAndHoleCountsOnRandomMasks) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const auto m = random_blobs(seed);
    const auto s = skeletonize(m);
    EXPECT_EQ(components(s, 1), components(m, 1)) << "seed " << seed;
    EXPECT_EQ(holes(s), holes(m)) << "seed " << seed;
    EXPECT_FALSE(has_full_2x2(s)) << "seed " << seed;
    for (std::size_t i = 0; i < s.data.size(); ++i) ASSERT_LE(s.data[i], m.data[i]);
  }
}

// ---------------------------------------------------------------------------
// Breakpoints

TEST(Breakpoints, ColinearGapIsJoined) {
  Mask m(40, 9);
  for (long x = 2; x <= 15; ++x) m.set(x, 4);
  for (long x = 21; x <= 35; ++x) m.set(x, 4);  // 5 missing pixels
  ASSERT_EQ(components(m, 1), 2U);
  const auto j = complete_breakpoints(m, {8.0, 30.0, 5});
  EXPECT_EQ(components(j, 1), 1U);
  for (long x = 2; x <= 35; ++x) EXPECT_EQ(j.at(x, 4), 1);
  EXPECT_EQ(j.count(), 34U);
}

TEST(Breakpoints, PerpendicularEndpointsAreNotJoined) {
  Mask m(40, 40);
  for (long x = 2; x <= 15; ++x) m.set(x, 10);  // ends at (15,10) heading +x
  for (long y = 16; y <= 30; ++y) m.set(21, y);  // ends at (21,16) heading −y
  const auto j = complete_breakpoints(m, {8.6, 30.0, 5});  // gap ≈ 8.49
  EXPECT_EQ(j, m);
}

TEST(Breakpoints, ZeroGapLeavesSkeletonUnchanged) {
  Mask m(40, 9);
  for (long x = 2; x <= 15; ++x) m.set(x, 4);
  for (long x = 17; x <= 35; ++x) m.set(x, 4);
  EXPECT_EQ(complete_breakpoints(m, {0.0, 30.0, 5}), m);
  EXPECT_THROW(complete_breakpoints(m, {-1.0, 30.0, 5}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Graph

TEST(Graph, StraightLine) {
  Mask m(20, 5);
  for (long x = 3; x <= 15; ++x) m.set(x, 2);
  const auto g = extract_graph(m);
  ASSERT_EQ(g.nodes.size(), 2U);
  ASSERT_EQ(g.edges.size(), 1U);
  EXPECT_EQ(g.edges[0].path.size(), 11U);
}

TEST(Graph, PlusSignHasFiveNodesAndFourEdges) {
  const auto g = extract_graph(plus_sign());
  EXPECT_EQ(g.nodes.size(), 5U);
  ASSERT_EQ(g.edges.size(), 4U);
  std::size_t junction = g.nodes.size();
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.nodes[i].x == 10 && g.nodes[i].y == 10) junction = i;
  ASSERT_LT(junction, g.nodes.size());
  for (const auto& e : g.edges) EXPECT_TRUE(e.a == junction || e.b == junction);
}

TEST(Graph, ClosedLoopGetsAnchorAndSelfEdge) {
  const auto s = prune_spurs(skeletonize(ring(41, 10, 15)), 3);
  const auto g = extract_graph(s);
  ASSERT_EQ(g.nodes.size(), 1U);
  ASSERT_EQ(g.edges.size(), 1U);
  EXPECT_EQ(g.edges[0].a, g.edges[0].b);
}

TEST(Graph, EdgePathsAndNodesPartitionTheSkeleton) {
  std::vector<Mask> cases{plus_sign(), skeletonize(ring(41, 10, 15))};
  for (std::uint64_t seed = 1; seed <= 6; ++seed) cases.push_back(skeletonize(random_blobs(seed)));
  for (const auto& s : cases) {
    const auto g = extract_graph(s);
    std::multiset<Pixel> seen;
    for (const auto& n : g.nodes) seen.insert(n.pixels.begin(), n.pixels.end());
    for (const auto& e : g.edges) {
      EXPECT_LT(e.a, g.nodes.size());
      EXPECT_LT(e.b, g.nodes.size());
      seen.insert(e.path.begin(), e.path.end());
    }
    std::multiset<Pixel> want;
    for (long y = 0; y < static_cast<long>(s.height); ++y)
      for (long x = 0; x < static_cast<long>(s.width); ++x)
        if (s.at(x, y)) want.insert({x, y});
    EXPECT_EQ(seen, want);
  }
}

TEST(Graph, NoDuplicateEdgesOnStructuredSkeletons) {
  for (const auto& s : {plus_sign(), skeletonize(rect(40, 40, 5, 5, 34, 34))}) {
    const auto g = extract_graph(s);
    std::set<std::vector<Pixel>> paths;
    for (const auto& e : g.edges) {
      auto p = e.path;
      if (!p.empty() && p.back() < p.front()) std::reverse(p.begin(), p.end());
      EXPECT_TRUE(paths.insert(p).second || p.empty());
    }
  }
}

// ---------------------------------------------------------------------------
// Georeferencing and XML

TEST(Georeference, ScaledAxesGiveClosedFormOffsets) {
  const auto s = scale_anchor_similarity();
  const auto [lat, lon] = s.to_geo(100, 0);
  EXPECT_NEAR(lon - 114.0, 1e-3, 1e-12);
  EXPECT_NEAR(lat - 30.0, 0.0, 1e-12);
  const auto [lat2, lon2] = s.to_geo(0, 100);
  EXPECT_NEAR(lat2 - 30.0, -1e-3, 1e-12);
  EXPECT_NEAR(lon2 - 114.0, 0.0, 1e-12);
  EXPECT_NEAR(s.scale(), 1e-5, 1e-15);
}

TEST(Georeference, AnchorsAreRecoveredExactly) {
  const std::vector<Anchor> anchors{{12.5, 40.0, 22.5432101, 113.9012345}, {80.0, 7.25, 22.5437702, 113.9021113}};
  const auto s = fit_similarity(anchors);
  for (const auto& a : anchors) {
    const auto [lat, lon] = s.to_geo(a.px, a.py);
    EXPECT_LE(std::abs(lat - a.lat), 1e-12);
    EXPECT_LE(std::abs(lon - a.lon), 1e-12);
  }
}

TEST(Georeference, OverdeterminedExactSimilarityIsRecovered) {
  Similarity truth;
  truth.a = std::polar(2e-5, 0.3);
  truth.b = {114.0, 30.0};
  std::vector<Anchor> anchors;
  for (auto [x, y] : {std::pair{0.0, 0.0}, {50.0, 10.0}, {20.0, 70.0}, {90.0, 90.0}}) {
    const auto [lat, lon] = truth.to_geo(x, y);
    anchors.push_back({x, y, lat, lon});
  }
  const auto s = fit_similarity(anchors);
  EXPECT_NEAR(std::abs(s.a - truth.a), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(s.b - truth.b), 0.0, 1e-12);
}

TEST(Georeference, CoincidentAnchorsAreDegenerate) {
  EXPECT_THROW(fit_similarity({{5, 5, 1, 1}, {5, 5, 2, 2}}), std::invalid_argument);
  EXPECT_THROW(fit_similarity({{5, 5, 1, 1}}), std::invalid_argument);
}

TEST(OsmXml, ReparsesToTheSameTopology) {
  std::vector<Mask> cases{plus_sign(), skeletonize(ring(41, 10, 15))};
  for (std::uint64_t seed = 1; seed <= 4; ++seed) cases.push_back(skeletonize(random_blobs(seed)));
  const auto sim = scale_anchor_similarity();
  for (const auto& s : cases) {
    const auto g = extract_graph(s);
    const auto doc = parse_osm_xml(to_osm_xml(g, sim));
    EXPECT_EQ(topology_of(doc), topology_of(g));
    for (const auto& tags : doc.way_tags) EXPECT_EQ(tags.at("highway"), "road");
  }
}

TEST(OsmXml, VertexCoordinatesMatchTheTransform) {
  const auto g = extract_graph(plus_sign());
  const auto sim = scale_anchor_similarity();
  const auto doc = parse_osm_xml(to_osm_xml(g, sim));
  std::size_t i = 0;
  for (const auto& [id, n] : doc.nodes) {
    if (!n.vertex) continue;
    const auto [lat, lon] = sim.to_geo(g.nodes[i].x, g.nodes[i].y);
    EXPECT_NEAR(n.lat, lat, 1e-9);
    EXPECT_NEAR(n.lon, lon, 1e-9);
    ++i;
  }
  EXPECT_EQ(i, g.nodes.size());
}

TEST(OsmXml, RejectsMalformedAndDanglingDocuments) {
  EXPECT_THROW(parse_osm_xml("<osm><node id=\"1\""), std::runtime_error);
  EXPECT_THROW(parse_osm_xml("<osm version=\"0.6\"><way id=\"9\"><nd ref=\"4\"/><nd ref=\"5\"/></way></osm>"),
               std::runtime_error);
}

TEST(Files, HomographiesAndAnchorsRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "pathfinder_osm_files";
  std::filesystem::create_directories(dir);
  Eigen::Matrix3d h;
  h << 1.1, 0.2, 3.3, -0.4, 0.9, 7.25, 1e-4, 2e-5, 1.0;
  write_homographies((dir / "h.txt").string(), {Eigen::Matrix3d::Identity(), h});
  const auto back = read_homographies((dir / "h.txt").string());
  ASSERT_EQ(back.size(), 2U);
  EXPECT_EQ(back[1], h);
  {
    std::ofstream a(dir / "anchors.txt");
    a << "0 0 30 114\n100 0 30 114.001\n";
  }
  const auto an = read_anchors((dir / "anchors.txt").string());
  ASSERT_EQ(an.size(), 2U);
  EXPECT_EQ(an[1].lon, 114.001);
  {
    std::ofstream a(dir / "bad.txt");
    a << "0 0 30 x\n";
  }
  EXPECT_THROW(read_anchors((dir / "bad.txt").string()), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, TranslatingRoadSequenceYieldsConnectedGraph) {
  // 5 frames of a horizontal road seen by a camera moving 12 px per frame
  std::vector<StitchFrame> frames;
  for (int k = 0; k < 5; ++k) {
    Mask m(40, 30);
    for (long y = 13; y <= 17; ++y)
      for (long x = 0; x < 40; ++x) m.set(x, y);
    frames.push_back({m, k == 0 ? Eigen::Matrix3d::Identity() : translation_homography(12, 0)});
  }
  const auto r = run_pipeline(frames, {{0, 15, 30.0, 114.0}, {100, 15, 30.0, 114.001}});
  EXPECT_EQ(r.stitched.mask.width, 40U + 4 * 12);
  EXPECT_EQ(components(r.skeleton, 1), 1U);
  EXPECT_EQ(r.graph.nodes.size(), 2U);
  EXPECT_EQ(r.graph.edges.size(), 1U);
  EXPECT_EQ(topology_of(parse_osm_xml(r.xml)), topology_of(r.graph));
  for (const auto& n : r.graph.nodes) EXPECT_NEAR(*n.lat, 30.0, 1e-4);
}
