#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pathfinder/dataset.hpp"
#include "pathfinder/image_io.hpp"
#include "pathfinder/osmmaker.hpp"

using namespace pathfinder;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "pathfinder_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(PATHFINDER_CLI) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_output() {
  std::ifstream in(kRoot / "last.log");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    ASSERT_EQ(run("gen-synthetic --out " + (kRoot / "ds").string() + " -n 10 --size 32 --seed 3"), 0) << last_output();
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
  static std::string ds() { return (kRoot / "ds").string(); }
};

}  // namespace

TEST_F(Cli, TrainTwoEpochsThenEval) {
  const auto out = kRoot / "run";
  ASSERT_EQ(run("train --data " + ds() + " --out " + out.string() + " --epochs 2 -q"), 0) << last_output();
  EXPECT_TRUE(fs::exists(out / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(out / "config.txt"));
  std::ifstream curve(out / "loss_curve.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(curve, line)) ++rows;
  EXPECT_EQ(rows, 3U);  // header + 2 epochs

  ASSERT_EQ(run("eval --data " + ds() + " --checkpoint " + (out / "checkpoint.bin").string()), 0) << last_output();
  const auto text = last_output();
  EXPECT_NE(text.find("Road IoU"), std::string::npos);
  EXPECT_NE(text.find("lidar"), std::string::npos);

  ASSERT_EQ(run("infer --data " + ds() + " --checkpoint " + (out / "checkpoint.bin").string() + " --out " +
                (kRoot / "pred").string()),
            0)
      << last_output();
  EXPECT_TRUE(fs::exists(kRoot / "pred" / "sample_0009_pcd.pgm"));
}

TEST_F(Cli, OracleMasksScorePerfectly) {
  const auto dir = kRoot / "oracle";
  fs::create_directories(dir);
  for (const auto& s : data::load_dataset(ds())) {
    // dense labels serve both streams; void pixels are ignored for the point labels anyway
    std::vector<std::uint8_t> m(s.labels_img.begin(), s.labels_img.end());
    io::write_mask((dir / (s.name + "_img.pgm")).string(), m, s.width, s.height);
    io::write_mask((dir / (s.name + "_pcd.pgm")).string(), m, s.width, s.height);
  }
  ASSERT_EQ(run("eval --data " + ds() + " --all --masks " + dir.string() + " --out " + (kRoot / "oracle_eval").string()),
            0)
      << last_output();
  std::ifstream csv(kRoot / "oracle_eval" / "eval.csv");
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string name, field;
    std::getline(ss, name, ',');
    while (std::getline(ss, field, ',')) EXPECT_DOUBLE_EQ(std::stod(field), 1.0) << line;
    ++rows;
  }
  EXPECT_GE(rows, 3U);
}

TEST_F(Cli, MakeOsmOnTranslatingStraightRoad) {
  const auto dir = kRoot / "frames";
  fs::create_directories(dir);
  // 60×40 window sliding 12 px right per frame over a horizontal road
  std::string masks;
  for (int k = 0; k < 5; ++k) {
    std::vector<std::uint8_t> m(60 * 40, 0);
    for (int y = 17; y < 23; ++y)
      for (int x = 0; x < 60; ++x) m[y * 60 + x] = 1;
    const auto p = dir / ("frame_" + std::to_string(k) + ".pgm");
    io::write_mask(p.string(), m, 60, 40);
    masks += " " + p.string();
  }
  std::ofstream(dir / "anchors.txt") << "0 20 47.0 8.0\n100 20 47.0 8.001\n";
  const auto out = kRoot / "osm";
  ASSERT_EQ(run("make-osm" + masks + " --estimate --anchors " + (dir / "anchors.txt").string() + " --out " + out.string()),
            0)
      << last_output();
  std::ifstream in(out / "map.osm");
  std::stringstream xml;
  xml << in.rdbuf();
  const auto doc = osm::parse_osm_xml(xml.str());
  EXPECT_GE(doc.ways.size(), 1U);
  EXPECT_TRUE(fs::exists(out / "skeleton.pgm"));
  EXPECT_TRUE(fs::exists(out / "stitched.pgm"));
}

TEST_F(Cli, ErrorsGiveDistinctExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("train --data " + ds()), 2);  // --out missing
  EXPECT_EQ(run("eval --data " + ds()), 3);   // neither checkpoint nor masks
  std::ofstream(kRoot / "bad.cfg") << "widths = 1,2\n";
  EXPECT_EQ(run("train --data " + ds() + " --out " + (kRoot / "bad").string() + " --config " + (kRoot / "bad.cfg").string()),
            3);
  std::ofstream(kRoot / "junk.bin") << "junk";
  EXPECT_EQ(run("eval --data " + ds() + " --checkpoint " + (kRoot / "junk.bin").string()), 4);
  std::ofstream(kRoot / "huge.cfg") << "lr_camera = 1e30\nlr_lidar = 1e30\n";
  EXPECT_EQ(run("train -q --epochs 2 --data " + ds() + " --out " + (kRoot / "nan").string() + " --config " +
                (kRoot / "huge.cfg").string()),
            5)
      << last_output();
  EXPECT_EQ(run("--help"), 0);
}
