#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "pathfinder/dataset.hpp"

using namespace pathfinder;
using namespace pathfinder::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

SyntheticOptions small() {
  SyntheticOptions o;
  o.size = 32;
  return o;
}

}  // namespace

TEST(Synthetic, WritesRequestedSampleCount) {
  TempDir dir("pathfinder_ds_count");
  generate_dataset(dir.path, 5, 7, small());
  const auto samples = list_samples(dir.path);
  ASSERT_EQ(samples.size(), 5U);
  EXPECT_EQ(samples[0].filename(), "sample_0000");
  EXPECT_EQ(samples[4].filename(), "sample_0004");
  for (const char* f : {"image.ppm", "label.pgm", "calib.txt", "poses.txt", "cloud_0.txt", "cloud_2.txt", "meta.txt"})
    EXPECT_TRUE(fs::exists(samples[2] / f)) << f;
}

TEST(Synthetic, SameSeedIsByteIdenticalAndOtherSeedDiffers) {
  TempDir a("pathfinder_ds_a"), b("pathfinder_ds_b"), c("pathfinder_ds_c");
  generate_dataset(a.path, 4, 11, small());
  generate_dataset(b.path, 4, 11, small());
  generate_dataset(c.path, 4, 12, small());
  const auto ta = read_tree(a.path);
  EXPECT_EQ(ta.size(), 4U * 8U);
  EXPECT_EQ(ta, read_tree(b.path));
  EXPECT_NE(ta.at("sample_0000/image.ppm"), read_tree(c.path).at("sample_0000/image.ppm"));
}

TEST(Synthetic, SamplesDoNotDependOnDatasetSize) {
  TempDir a("pathfinder_ds_prefix_a"), b("pathfinder_ds_prefix_b");
  generate_dataset(a.path, 2, 5, small());
  generate_dataset(b.path, 4, 5, small());
  const auto ta = read_tree(a.path), tb = read_tree(b.path);
  for (const auto& [name, bytes] : ta) EXPECT_EQ(bytes, tb.at(name)) << name;
}

TEST(Synthetic, VoidFractionWithinFivePercentOfConfigured) {
  TempDir dir("pathfinder_ds_void");
  for (double f : {0.3, 0.5, 0.7}) {
    auto o = small();
    o.size = 64;
    o.void_min = o.void_max = f;
    fs::remove_all(dir.path);
    generate_dataset(dir.path, 3, 21, o);
    for (const auto& s : load_dataset(dir.path)) {
      std::size_t empty = 0;
      for (auto v : s.void_mask) empty += (v == 0);
      EXPECT_NEAR(static_cast<double>(empty) / static_cast<double>(s.void_mask.size()), f, 0.05) << s.name;
    }
  }
}

TEST(Synthetic, DefaultVoidFractionsSpanTheConfiguredRange) {
  double lo = 1, hi = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto s = generate_scene(3, i, small());
    lo = std::min(lo, s.void_fraction);
    hi = std::max(hi, s.void_fraction);
    EXPECT_GE(s.void_fraction, 0.3 - 1e-3);
    EXPECT_LE(s.void_fraction, 0.7 + 1e-3);
  }
  EXPECT_LT(lo, 0.4);
  EXPECT_GT(hi, 0.6);
}

TEST(Synthetic, PointLabelsAgreeWithDenseLabelsOffTheVoid) {
  TempDir dir("pathfinder_ds_labels");
  auto o = small();
  o.size = 48;
  generate_dataset(dir.path, 4, 9, o);
  for (const auto& s : load_dataset(dir.path)) {
    std::size_t road = 0;
    for (std::size_t i = 0; i < s.labels_img.size(); ++i) {
      road += s.labels_img[i] == kRoad;
      if (s.void_mask[i])
        EXPECT_EQ(s.labels_pcd[i], s.labels_img[i]) << s.name << " pixel " << i;
      else
        EXPECT_EQ(s.labels_pcd[i], geom::kIgnoreLabel) << s.name << " pixel " << i;
    }
    EXPECT_GT(road, 0U) << s.name;
    EXPECT_LT(road, s.labels_img.size()) << s.name;
  }
}

TEST(Synthetic, LoadedSampleLayout) {
  TempDir dir("pathfinder_ds_layout");
  generate_dataset(dir.path, 1, 4, small());
  const auto s = load_sample(list_samples(dir.path)[0]);
  EXPECT_EQ(s.height, 32U);
  EXPECT_EQ(s.width, 32U);
  EXPECT_EQ(s.image.size(), 3U * 32 * 32);
  EXPECT_EQ(s.raster.size(), geom::kRasterChannels * 32 * 32);
  for (float v : s.image) {
    EXPECT_GE(v, 0.0F);
    EXPECT_LE(v, 1.0F);
  }
  const auto scene = generate_scene(4, 0, small());
  EXPECT_EQ(s.shadow, scene.shadow);
  // channel-major: green of pixel 5 sits one plane after red
  EXPECT_NEAR(s.image[32 * 32 + 5], std::lround(scene.rgb[5 * 3 + 1] * 255.0F) / 255.0F, 1e-6);
}

TEST(Synthetic, ShadowFlagFollowsProbability) {
  auto o = small();
  o.shadow_probability = 0.0;
  for (std::size_t i = 0; i < 5; ++i) EXPECT_FALSE(generate_scene(1, i, o).shadow);
  o.shadow_probability = 1.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto s = generate_scene(1, i, o);
    EXPECT_TRUE(s.shadow);
    EXPECT_GT(std::count(s.shadowed.begin(), s.shadowed.end(), 1), 0);
  }
}

TEST(Synthetic, RejectsBadArguments) {
  TempDir dir("pathfinder_ds_bad");
  EXPECT_THROW(generate_dataset(dir.path, 0, 1, small()), std::invalid_argument);
  {
    std::ofstream blocker(dir.path);  // a file where the directory should go
  }
  EXPECT_THROW(generate_dataset(dir.path / "sub", 1, 1, small()), std::runtime_error);
  auto o = small();
  o.void_min = 0.8;
  o.void_max = 0.2;
  EXPECT_THROW(generate_scene(1, 0, o), std::invalid_argument);
  o = small();
  o.size = 8;
  EXPECT_THROW(generate_scene(1, 0, o), std::invalid_argument);
  EXPECT_THROW(list_samples(dir.path / "missing"), std::runtime_error);
}

TEST(Split, HoldsOutTheTail) {
  const auto s = split_indices(10, 0.2);
  EXPECT_EQ(s.train, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(s.test, (std::vector<std::size_t>{8, 9}));
  EXPECT_EQ(split_indices(200, 0.2).test.size(), 40U);
  EXPECT_EQ(split_indices(7, 0.2).test.size(), 2U);
  EXPECT_THROW(split_indices(1, 0.5), std::invalid_argument);
  EXPECT_THROW(split_indices(10, 0.0), std::invalid_argument);
}
