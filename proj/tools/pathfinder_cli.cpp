// pathfinder: synthetic data, training, evaluation, inference, complexity
// reports, GEMM benchmark, and the mask-to-OSM pipeline.
//
// Exit codes: 0 ok, 1 unexpected error, 2 bad command line, 3 invalid
// configuration or argument, 4 I/O or data error, 5 training diverged.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pathfinder/pathfinder.hpp"
#include "pathfinder/phase_correlation.hpp"

using namespace pathfinder;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kUsage = 2, kInvalid = 3, kIo = 4, kDiverged = 5 };

struct ModelArgs {
  std::string config;       // key = value file, optional
  std::size_t seed = 1;
  bool seed_set = false;
  bool full_precision = false;
  bool no_agb = false;
};

struct DataArgs {
  std::string root;
  double test_fraction = 0.2;
  bool all = false;
};

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--config", m.config, "key = value file with model and training settings")->check(CLI::ExistingFile);
  cmd->add_flag("--full-precision", m.full_precision, "disable binarization (full-precision twin)");
  cmd->add_flag("--no-agb", m.no_agb, "drop the camera-to-LiDAR fusion blocks");
}

void add_data_options(CLI::App* cmd, DataArgs& d, bool with_split) {
  cmd->add_option("--data", d.root, "dataset directory written by gen-synthetic")->required()->check(CLI::ExistingDirectory);
  if (!with_split) return;
  cmd->add_option("--test-fraction", d.test_fraction, "held-out tail fraction")->check(CLI::Range(0.0, 1.0));
  cmd->add_flag("--all", d.all, "use every sample instead of the held-out split");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

// The config file applies on top of the desk configuration sized to the data.
struct Setup {
  PathfinderConfig model;
  TrainSettings train;
};

Setup make_setup(const ModelArgs& m, std::size_t size) {
  Setup s;
  s.model = PathfinderConfig::desk(size);
  config::KeyValues kv;
  if (!m.config.empty()) kv = config::read_file(m.config);
  if (m.full_precision) kv["binarize"] = "false";
  if (m.no_agb) kv["use_agb"] = "false";
  if (m.seed_set) kv["seed"] = std::to_string(m.seed);
  s.model = config::model_config(kv, s.model);
  s.train = config::train_settings(kv, s.train);
  return s;
}

void check_size(const PathfinderConfig& c, const std::vector<Sample>& ds) {
  if (ds.empty()) throw std::runtime_error("dataset is empty");
  if (ds[0].height != c.height || ds[0].width != c.width)
    throw std::invalid_argument("model resolution " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                                " does not match the data (" + std::to_string(ds[0].height) + "x" +
                                std::to_string(ds[0].width) + ")");
}

std::vector<std::size_t> pick(const DataArgs& d, std::size_t n) {
  if (d.all) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  return data::split_indices(n, d.test_fraction).test;
}

// Masks on disk spread class ids over 0..255, so a two-class road mask is 0/255.
std::uint8_t to_gray(std::uint8_t cls, std::size_t classes) {
  return static_cast<std::uint8_t>(cls * (255 / (classes - 1)));
}

std::uint8_t from_gray(std::uint8_t v, std::size_t classes) {
  const double step = 255.0 / static_cast<double>(classes - 1);
  return static_cast<std::uint8_t>(std::min<double>(static_cast<double>(classes - 1), std::round(v / step)));
}

void write_class_mask(const fs::path& path, std::span<const std::uint8_t> cls, std::size_t w, std::size_t h,
                      std::size_t classes) {
  auto img = io::make_image(w, h, 1);
  for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = to_gray(cls[i], classes);
  io::write_image(path.string(), img);
}

std::vector<std::uint8_t> read_class_mask(const fs::path& path, std::size_t w, std::size_t h, std::size_t classes) {
  const auto img = io::read_image(path.string());
  if (img.channels != 1 || img.width != w || img.height != h)
    throw std::runtime_error(path.string() + ": expected a " + std::to_string(w) + "x" + std::to_string(h) + " PGM");
  std::vector<std::uint8_t> out(w * h);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_gray(img.pixels[i], classes);
  return out;
}

// ---------------------------------------------------------------------------
// gen-synthetic

struct GenArgs {
  std::string out;
  std::size_t count = 200;
  std::uint64_t seed = 2024;
  data::SyntheticOptions opts;
};

int run_gen(const GenArgs& a) {
  data::generate_dataset(a.out, a.count, a.seed, a.opts);
  std::cout << "wrote " << a.count << " samples (" << a.opts.size << "x" << a.opts.size << ", seed " << a.seed
            << ") to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ModelArgs model;
  DataArgs data;
  std::string out;
  std::size_t epochs = 0;
  std::size_t save_every = 10;
  std::string resume;
  bool quiet = false;
};

int run_train(TrainArgs& a) {
  const auto ds = data::load_dataset(a.data.root);
  if (ds.empty()) throw std::runtime_error(a.data.root + ": no samples");
  auto setup = make_setup(a.model, ds[0].height);
  if (a.epochs) setup.train.epochs = a.epochs;
  check_size(setup.model, ds);
  const auto split = data::split_indices(ds.size(), a.data.test_fraction);
  const auto& train_idx = a.data.all ? pick(a.data, ds.size()) : split.train;

  const fs::path out(a.out);
  ensure_dir(out);
  write_text(out / "config.txt", config::to_text(setup.model) + config::to_text(setup.train));

  PathfinderModel<float> model(setup.model, setup.train.seed);
  Trainer<float> trainer(model, setup.train,
                         losses::VariantFocalSchedule::from_counts(
                             class_counts(ds, train_idx, setup.model.classes), setup.train.epochs, setup.train.lambda));
  std::size_t first = 0;
  if (!a.resume.empty()) {
    first = checkpoint::load(a.resume, model, &trainer);
    std::cout << "resumed from " << a.resume << " after epoch " << first << '\n';
  }

  const auto curve_path = out / "loss_curve.csv";
  const bool header = !first || !fs::exists(curve_path);
  std::ofstream curve(curve_path, first ? std::ios::app : std::ios::trunc);
  if (!curve) throw std::runtime_error("cannot write " + curve_path.string());
  if (header) {
    curve << "epoch,total";
    for (auto n : kLossTermNames) curve << ',' << n;
    curve << ",lr_camera,lr_lidar\n";
  }
  curve << std::setprecision(9);

  for (std::size_t e = first; e < setup.train.epochs; ++e) {
    const auto st = trainer.train_epoch(ds, train_idx, e);
    curve << e << ',' << st.total;
    for (double t : st.terms) curve << ',' << t;
    curve << ',' << st.lr_camera << ',' << st.lr_lidar << '\n' << std::flush;
    if (!a.quiet) std::cout << "epoch " << e + 1 << "/" << setup.train.epochs << "  loss " << st.total << '\n' << std::flush;
    const bool last = e + 1 == setup.train.epochs;
    if (last || (a.save_every && (e + 1) % a.save_every == 0)) {
      std::ostringstream name;
      name << "checkpoint_epoch_" << std::setw(4) << std::setfill('0') << e + 1 << ".bin";
      checkpoint::save((out / name.str()).string(), model, &trainer, e + 1);
      checkpoint::save((out / "checkpoint.bin").string(), model, &trainer, e + 1);
    }
  }
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / infer

struct EvalArgs {
  ModelArgs model;
  DataArgs data;
  std::string checkpoint;
  std::string masks;
  std::string out;
};

// The model config defaults to config.txt beside the checkpoint.
PathfinderModel<float> load_model(ModelArgs m, const std::string& ckpt, std::size_t size) {
  if (m.config.empty()) {
    const auto beside = fs::path(ckpt).parent_path() / "config.txt";
    if (fs::exists(beside)) m.config = beside.string();
  }
  const auto setup = make_setup(m, size);
  PathfinderModel<float> model(setup.model, setup.train.seed);
  checkpoint::load(ckpt, model);
  return model;
}

void print_rows(std::ostream& os, const EvalResult& r, std::ostream* csv) {
  struct Row {
    const char* name;
    const metrics::ConfusionMatrix* cm;
  };
  const Row rows[] = {{"camera", &r.img},
                      {"lidar", &r.pcd},
                      {"lidar (dense labels)", &r.pcd_dense},
                      {"camera (shadow subset)", &r.img_shadow},
                      {"lidar (shadow subset)", &r.pcd_shadow}};
  os << std::left << std::setw(24) << "stream" << std::right << std::setw(9) << "mAcc" << std::setw(9) << "mIoU"
     << std::setw(10) << "Road Acc" << std::setw(10) << "Road IoU" << '\n';
  if (csv) *csv << "stream,macc,miou,road_acc,road_iou\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& row : rows) {
    if (row.cm->total() == 0) continue;
    const auto s = metrics::score(*row.cm);
    const double racc = s.accuracy.at(data::kRoad), riou = s.iou.at(data::kRoad);
    os << std::left << std::setw(24) << row.name << std::right << std::setw(9) << 100 * s.macc << std::setw(9)
       << 100 * s.miou << std::setw(10) << 100 * racc << std::setw(10) << 100 * riou << '\n';
    if (csv) *csv << std::setprecision(6) << row.name << ',' << s.macc << ',' << s.miou << ',' << racc << ',' << riou << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

// Scores precomputed <sample>_img.pgm / <sample>_pcd.pgm masks, as written by infer.
EvalResult score_masks(const std::vector<Sample>& ds, std::span<const std::size_t> idx, const fs::path& dir,
                       std::size_t classes) {
  EvalResult r(classes);
  for (auto i : idx) {
    const auto& s = ds[i];
    const auto mi = read_class_mask(dir / (s.name + "_img.pgm"), s.width, s.height, classes);
    const auto mp = read_class_mask(dir / (s.name + "_pcd.pgm"), s.width, s.height, classes);
    r.img.add(s.labels_img, mi);
    r.pcd.add(s.labels_pcd, mp);
    r.pcd_dense.add(s.labels_img, mp);
    if (s.shadow) {
      r.img_shadow.add(s.labels_img, mi);
      r.pcd_shadow.add(s.labels_pcd, mp);
    }
  }
  return r;
}

int run_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.masks.empty())
    throw std::invalid_argument("eval: give exactly one of --checkpoint or --masks");
  const auto ds = data::load_dataset(a.data.root);
  if (ds.empty()) throw std::runtime_error(a.data.root + ": no samples");
  const auto idx = pick(a.data, ds.size());
  EvalResult r;
  if (!a.masks.empty()) {
    r = score_masks(ds, idx, a.masks, make_setup(a.model, ds[0].height).model.classes);
  } else {
    auto model = load_model(a.model, a.checkpoint, ds[0].height);
    check_size(model.config, ds);
    r = evaluate(model, ds, idx);
  }
  std::cout << idx.size() << " samples\n";
  std::ofstream csv;
  if (!a.out.empty()) {
    ensure_dir(a.out);
    csv.open(fs::path(a.out) / "eval.csv");
    if (!csv) throw std::runtime_error("cannot write " + (fs::path(a.out) / "eval.csv").string());
  }
  print_rows(std::cout, r, a.out.empty() ? nullptr : &csv);
  return kOk;
}

int run_infer(const EvalArgs& a) {
  const auto ds = data::load_dataset(a.data.root);
  if (ds.empty()) throw std::runtime_error(a.data.root + ": no samples");
  auto model = load_model(a.model, a.checkpoint, ds[0].height);
  check_size(model.config, ds);
  const auto idx = pick(a.data, ds.size());
  const fs::path out(a.out);
  ensure_dir(out);
  const std::size_t h = model.config.height, w = model.config.width, plane = h * w, c = model.config.classes;
  for (std::size_t start = 0; start < idx.size(); start += 4) {
    const auto sub = std::span<const std::size_t>(idx).subspan(start, std::min<std::size_t>(4, idx.size() - start));
    const auto p = infer(model, make_batch<float>(ds, sub).inputs);
    for (std::size_t k = 0; k < sub.size(); ++k) {
      const auto& name = ds[sub[k]].name;
      write_class_mask(out / (name + "_img.pgm"), std::span(p.mask_img).subspan(k * plane, plane), w, h, c);
      write_class_mask(out / (name + "_pcd.pgm"), std::span(p.mask_pcd).subspan(k * plane, plane), w, h, c);
    }
  }
  std::cout << "wrote " << 2 * idx.size() << " masks to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// report-ops / bench

struct OpsArgs {
  std::string config;
  std::size_t size = 0;
  bool desk = false;
  bool layers = false;
  std::string kv;
};

int run_report(const OpsArgs& a) {
  PathfinderConfig cfg = a.desk ? PathfinderConfig::desk() : PathfinderConfig{};
  if (!a.config.empty()) cfg = config::model_config(config::read_file(a.config), cfg);
  if (a.size) cfg.height = cfg.width = a.size;
  cfg.validate();
  auto twin = cfg;
  twin.binarize = false;
  const auto r = count_complexity(cfg), fp = count_complexity(twin);
  if (a.layers) {
    metrics::print_report(std::cout, r);
  } else {
    std::cout << "BOPs " << r.bops << "  FLOPs " << r.flops << "  OPs " << std::fixed << std::setprecision(0)
              << r.ops() << "  parameter bytes " << r.param_bytes << '\n';
  }
  std::cout << std::fixed << std::setprecision(0) << "full-precision twin: OPs " << fp.ops() << "  parameter bytes "
            << fp.param_bytes << '\n'
            << std::setprecision(2) << "binary / full precision: OPs " << 100 * r.ops() / fp.ops()
            << "%  parameter bytes " << 100.0 * static_cast<double>(r.param_bytes) / static_cast<double>(fp.param_bytes)
            << "%\n";
  if (!a.kv.empty()) {
    std::ofstream out(a.kv);
    if (!out) throw std::runtime_error("cannot write " + a.kv);
    metrics::write_report_kv(out, r);
    out << std::fixed << std::setprecision(2) << "fp_ops=" << fp.ops() << "\nfp_param_bytes=" << fp.param_bytes << '\n';
  }
  return kOk;
}

struct BenchArgs {
  std::vector<std::size_t> sizes{64, 128, 256, 512};
  std::size_t repeats = 3;
};

int run_bench(const BenchArgs& a) {
  metrics::print_bench(std::cout, metrics::bench_gemm(a.sizes, a.repeats));
  return kOk;
}

// ---------------------------------------------------------------------------
// make-osm

struct OsmArgs {
  std::vector<std::string> masks;
  std::string homographies;
  bool estimate = false;
  std::string anchors;
  std::string out;
  osm::BreakpointOptions opts;
};

osm::Mask load_osm_mask(const std::string& path) {
  osm::Mask m;
  m.data = io::read_mask(path, m.width, m.height);
  return m;
}

int run_make_osm(const OsmArgs& a) {
  std::vector<osm::StitchFrame> frames;
  for (const auto& p : a.masks) frames.push_back({load_osm_mask(p), Eigen::Matrix3d::Identity()});
  if (!a.homographies.empty()) {
    const auto hs = osm::read_homographies(a.homographies);
    // either one per frame (the first is ignored) or one per frame after the first
    const std::size_t skip = hs.size() == frames.size() ? 1 : 0;
    if (hs.size() + 1 - skip != frames.size())
      throw std::invalid_argument(a.homographies + ": " + std::to_string(hs.size()) + " homographies for " +
                                  std::to_string(frames.size()) + " frames");
    for (std::size_t k = 1; k < frames.size(); ++k) frames[k].to_previous = hs[k - 1 + skip];
  } else if (a.estimate) {
    for (std::size_t k = 1; k < frames.size(); ++k) {
      const auto [dx, dy] = osm::estimate_translation(frames[k - 1].mask, frames[k].mask);
      frames[k].to_previous = osm::translation_homography(static_cast<double>(dx), static_cast<double>(dy));
    }
  } else if (frames.size() > 1) {
    throw std::invalid_argument("make-osm: several frames need --homographies or --estimate");
  }

  const auto r = osm::run_pipeline(frames, osm::read_anchors(a.anchors), a.opts);
  const fs::path out(a.out);
  ensure_dir(out);
  write_text(out / "map.osm", r.xml);
  io::write_mask((out / "stitched.pgm").string(), r.stitched.mask.data, r.stitched.mask.width, r.stitched.mask.height);
  io::write_mask((out / "skeleton.pgm").string(), r.skeleton.data, r.skeleton.width, r.skeleton.height);
  if (!a.homographies.empty() || a.estimate) {
    std::vector<Eigen::Matrix3d> hs;
    for (const auto& f : frames) hs.push_back(f.to_previous);
    osm::write_homographies((out / "homographies.txt").string(), hs);
  }
  std::cout << "canvas " << r.stitched.mask.width << "x" << r.stitched.mask.height << " at (" << r.stitched.origin_x
            << ", " << r.stitched.origin_y << ")  skeleton " << r.skeleton.count() << " px  nodes "
            << r.graph.nodes.size() << "  ways " << r.graph.edges.size() << '\n'
            << "wrote " << (out / "map.osm").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binarized LiDAR-camera road segmentation and OSM map building"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic nadir-view dataset");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("-n,--count", gen.count, "number of samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "dataset seed");
  gen_cmd->add_option("--size", gen.opts.size, "image side in pixels");
  gen_cmd->add_option("--void-min", gen.opts.void_min, "lowest void fraction");
  gen_cmd->add_option("--void-max", gen.opts.void_max, "highest void fraction");
  gen_cmd->add_option("--frames", gen.opts.frames, "LiDAR sweeps per sample");
  gen_cmd->add_option("--altitude", gen.opts.altitude, "camera height in meters");
  gen_cmd->add_option("--shadow-probability", gen.opts.shadow_probability, "chance a sample has cast shadows");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train the dual-stream model");
  add_data_options(train_cmd, train.data, true);
  add_model_options(train_cmd, train.model);
  train_cmd->add_option("--out", train.out, "run directory for checkpoints, loss_curve.csv, config.txt")->required();
  train_cmd->add_option("--epochs", train.epochs, "override the configured epoch count");
  auto* train_seed = train_cmd->add_option("--seed", train.model.seed, "initialization and shuffling seed");
  train_cmd->add_option("--save-every", train.save_every, "checkpoint interval in epochs (0: final only)");
  train_cmd->add_option("--resume", train.resume, "continue from a checkpoint of the same configuration")
      ->check(CLI::ExistingFile);
  train_cmd->add_flag("-q,--quiet", train.quiet, "no per-epoch output");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint or saved masks on the held-out split");
  add_data_options(eval_cmd, eval.data, true);
  add_model_options(eval_cmd, eval.model);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "trained checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--masks", eval.masks, "directory of <sample>_img.pgm and <sample>_pcd.pgm masks")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval.out, "also write eval.csv here");

  EvalArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "write predicted masks for both streams");
  add_data_options(infer_cmd, inf.data, true);
  add_model_options(infer_cmd, inf.model);
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", inf.out, "mask directory")->required();

  OpsArgs ops;
  auto* ops_cmd = app.add_subcommand("report-ops", "count BOPs, FLOPs, OPs and parameter bytes of one forward pass");
  ops_cmd->add_option("--config", ops.config, "model config file")->check(CLI::ExistingFile);
  ops_cmd->add_flag("--desk", ops.desk, "start from the small desk configuration instead of the full one");
  ops_cmd->add_option("--size", ops.size, "override input resolution (square)");
  ops_cmd->add_flag("--layers", ops.layers, "per-layer table");
  ops_cmd->add_option("--kv", ops.kv, "write key=value totals to this file");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "time binary against float GEMM");
  bench_cmd->add_option("--sizes", bench.sizes, "square matrix sizes")->delimiter(',');
  bench_cmd->add_option("--repeats", bench.repeats, "timed repetitions (median reported)")->check(CLI::PositiveNumber);

  OsmArgs osm_args;
  auto* osm_cmd = app.add_subcommand("make-osm", "stitch road masks, extract the graph, export OSM XML");
  osm_cmd->add_option("masks", osm_args.masks, "mask PGMs in frame order")->required()->check(CLI::ExistingFile);
  auto* h_opt = osm_cmd->add_option("--homographies", osm_args.homographies, "3x3 row-major frame-to-previous matrices")
                    ->check(CLI::ExistingFile);
  osm_cmd->add_flag("--estimate", osm_args.estimate, "estimate translations by phase correlation")->excludes(h_opt);
  osm_cmd->add_option("--anchors", osm_args.anchors, "\"px py lat lon\" lines in frame-0 pixels")
      ->required()
      ->check(CLI::ExistingFile);
  osm_cmd->add_option("--out", osm_args.out, "output directory")->required();
  osm_cmd->add_option("--max-gap", osm_args.opts.max_gap_px, "largest breakpoint gap to bridge, pixels");
  osm_cmd->add_option("--max-angle", osm_args.opts.max_angle_deg, "largest direction mismatch to bridge, degrees");
  osm_cmd->add_option("--max-spur", osm_args.opts.max_spur_px, "prune skeleton spurs up to this length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  train.model.seed_set = train_seed->count() > 0;

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_eval(eval);
    if (*infer_cmd) return run_infer(inf);
    if (*ops_cmd) return run_report(ops);
    if (*bench_cmd) return run_bench(bench);
    if (*osm_cmd) return run_make_osm(osm_args);
  } catch (const NonFiniteError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::domain_error& e) {  // NaN reaching the binary kernels
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUnexpected;
}
