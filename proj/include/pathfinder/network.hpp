#pragma once
// The dual-stream segmentation network: a camera UNet (binary CNN-ViT
// encoder, ResBlock/pixel-shuffle decoder) and a point-cloud UNet
// (ResBlock encoder with AGB fusion of camera features at every stage,
// Binary-ASPP bottleneck, ResBlock/pixel-shuffle decoder).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathfinder/blocks.hpp"
#include "pathfinder/geom.hpp"
#include "pathfinder/losses.hpp"
#include "pathfinder/metrics.hpp"
#include "pathfinder/optim.hpp"

namespace pathfinder {

using ag::Tensor;

struct PathfinderConfig {
  std::size_t height = 512;
  std::size_t width = 512;
  std::size_t classes = 2;
  std::array<std::size_t, 4> widths{32, 64, 128, 256};
  std::size_t vit_depth = 1;
  std::size_t vit_heads = 4;
  bool binarize = true;
  bool use_agb = true;
  std::size_t image_channels = 3;
  std::size_t raster_channels = geom::kRasterChannels;

  /// Small configuration used for desk-scale training runs.
  static PathfinderConfig desk(std::size_t size = 64) {
    PathfinderConfig c;
    c.height = c.width = size;
    c.widths = {8, 16, 32, 64};
    c.vit_heads = 2;
    return c;
  }

  void validate() const {
    if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0)
      throw std::invalid_argument("config: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                                  " must be nonzero and divisible by 16");
    if (classes < 2) throw std::invalid_argument("config: need at least 2 classes");
    for (auto w : widths)
      if (w == 0) throw std::invalid_argument("config: channel widths must be positive");
    if (vit_heads == 0 || widths[2] % vit_heads != 0 || widths[3] % vit_heads != 0)
      throw std::invalid_argument("config: ViT head count must divide stage-3 and stage-4 widths");
    if (image_channels == 0 || raster_channels == 0) throw std::invalid_argument("config: zero input channels");
  }
};

/// One batch of network inputs.
template <class Real>
struct Inputs {
  Tensor<Real> image;                  // [N, 3, H, W]
  Tensor<Real> raster;                 // [N, Cp, H, W]
  std::vector<std::uint8_t> void_mask;  // N·H·W, 1 where the point cloud has data
};

template <class Real>
struct Outputs {
  Tensor<Real> logits_img;  // [N, classes, H, W]
  Tensor<Real> logits_pcd;  // [N, classes, H, W]
};

template <class Real>
class PathfinderModel {
 public:
  PathfinderConfig config;

  PathfinderModel(const PathfinderConfig& cfg, std::uint64_t seed) : config(cfg) {
    cfg.validate();
    Rng rng(seed);
    const auto [c1, c2, c3, c4] = cfg.widths;
    const bool bin = cfg.binarize;
    using blocks::BcuConfig;
    // Camera encoder.
    stem_ = blocks::Bcu<Real>(BcuConfig{cfg.image_channels, c1, 3, 1, 1, false, true, false}, rng);
    mbb1_ = blocks::DilatedPyramid<Real>(c1, blocks::mbb_rates(), bin, rng);
    down2_ = blocks::Bcu<Real>(BcuConfig{c1, c2, 3, 2, 1, bin, true, true}, rng);
    mbb2_ = blocks::DilatedPyramid<Real>(c2, blocks::mbb_rates(), bin, rng);
    down3_ = blocks::Bcu<Real>(BcuConfig{c2, c3, 3, 2, 1, bin, true, true}, rng);
    down4_ = blocks::Bcu<Real>(BcuConfig{c3, c4, 3, 2, 1, bin, true, true}, rng);
    for (std::size_t i = 0; i < cfg.vit_depth; ++i) {
      vit3_.emplace_back(c3, cfg.vit_heads, bin, rng);
      vit4_.emplace_back(c4, cfg.vit_heads, bin, rng);
    }
    // Camera decoder, deepest stage first.
    cam_res_ = {blocks::BinaryResBlock<Real>(c4, c3, bin, rng), blocks::BinaryResBlock<Real>(c3, c2, bin, rng),
                blocks::BinaryResBlock<Real>(c2, c1, bin, rng), blocks::BinaryResBlock<Real>(c1, c1, bin, rng)};
    cam_up_ = {blocks::UpShuffle<Real>(c3, c3, bin, rng), blocks::UpShuffle<Real>(c2, c2, bin, rng),
               blocks::UpShuffle<Real>(c1, c1, bin, rng), blocks::UpShuffle<Real>(c1, c1, bin, rng)};
    cam_head_ = blocks::Head<Real>(c1, cfg.classes, rng);
    // Point-cloud encoder.
    shallow_ = blocks::ShallowResBlock<Real>(cfg.raster_channels, c1, rng);
    lidar_res_ = {blocks::BinaryResBlock<Real>(c1, c2, bin, rng), blocks::BinaryResBlock<Real>(c2, c3, bin, rng),
                  blocks::BinaryResBlock<Real>(c3, c4, bin, rng)};
    if (cfg.use_agb)
      agb_ = {blocks::AgBlock<Real>(c1, bin, rng), blocks::AgBlock<Real>(c2, bin, rng),
              blocks::AgBlock<Real>(c3, bin, rng), blocks::AgBlock<Real>(c4, bin, rng)};
    aspp_ = blocks::DilatedPyramid<Real>(c4, blocks::aspp_rates(), bin, rng);
    // Point-cloud decoder, deepest stage first.
    pcd_res_ = {blocks::BinaryResBlock<Real>(c4, c4, bin, rng), blocks::BinaryResBlock<Real>(c4, c3, bin, rng),
                blocks::BinaryResBlock<Real>(c3, c2, bin, rng), blocks::BinaryResBlock<Real>(c2, c1, bin, rng)};
    pcd_up_ = {blocks::UpShuffle<Real>(c4, c4, bin, rng), blocks::UpShuffle<Real>(c3, c3, bin, rng),
               blocks::UpShuffle<Real>(c2, c2, bin, rng), blocks::UpShuffle<Real>(c1, c1, bin, rng)};
    pcd_head_ = blocks::Head<Real>(c1, cfg.classes, rng);
  }

  Outputs<Real> forward(const Inputs<Real>& in, bool training) {
    check_inputs(in);
    using ag::NameScope;
    // Camera encoder: Q1..Q4 at 1/2 .. 1/16 resolution.
    Tensor<Real> s0, q[4];
    {
      NameScope cam("camera");
      {
        NameScope n("stem");
        s0 = stem_.forward(in.image, training);
      }
      {
        NameScope n("enc1.mbb");
        q[0] = mbb1_.forward(ag::avg_pool2(s0), training);
      }
      {
        NameScope n("enc2");
        Tensor<Real> x;
        {
          NameScope d("down");
          x = down2_.forward(q[0], training);
        }
        NameScope m("mbb");
        q[1] = mbb2_.forward(x, training);
      }
      {
        NameScope n("enc3");
        Tensor<Real> x;
        {
          NameScope d("down");
          x = down3_.forward(q[1], training);
        }
        for (auto& b : vit3_) x = b.forward(x, training);
        q[2] = x;
      }
      {
        NameScope n("enc4");
        Tensor<Real> x;
        {
          NameScope d("down");
          x = down4_.forward(q[2], training);
        }
        for (auto& b : vit4_) x = b.forward(x, training);
        q[3] = x;
      }
    }

    // Point-cloud encoder with fusion.
    Tensor<Real> skip[4], fused;
    {
      NameScope lid("lidar");
      auto first = shallow_.forward(in.raster, training);
      skip[0] = first.out1;
      fused = fuse(0, first.out2, q[0], training);
      for (std::size_t i = 0; i < 3; ++i) {
        NameScope n("enc" + std::to_string(i + 2));
        auto r = lidar_res_[i].forward(fused, training);
        skip[i + 1] = r.out1;
        fused = fuse(i + 1, r.out2, q[i + 1], training);
      }
    }

    Outputs<Real> out;
    {
      NameScope cam("camera");
      Tensor<Real> x = q[3];
      const Tensor<Real> cam_skip[4] = {q[2], q[1], q[0], s0};
      for (std::size_t i = 0; i < 4; ++i) {
        NameScope n("dec" + std::to_string(4 - i));
        x = ag::add(cam_up_[i].forward(cam_res_[i].forward_out1(x, training), training), cam_skip[i]);
      }
      out.logits_img = cam_head_.forward(x);
    }
    {
      NameScope lid("lidar");
      Tensor<Real> x;
      {
        NameScope n("aspp");
        x = aspp_.forward(fused, training);
      }
      for (std::size_t i = 0; i < 4; ++i) {
        NameScope n("dec" + std::to_string(4 - i));
        x = ag::add(pcd_up_[i].forward(pcd_res_[i].forward_out1(x, training), training), skip[3 - i]);
      }
      out.logits_pcd = pcd_head_.forward(x);
    }
    return out;
  }

  /// Camera-stream parameters (SGD with cosine annealing).
  Registry<Real> camera_registry() {
    Registry<Real> reg;
    stem_.collect("camera.stem", reg);
    mbb1_.collect("camera.enc1.mbb", reg);
    down2_.collect("camera.enc2.down", reg);
    mbb2_.collect("camera.enc2.mbb", reg);
    down3_.collect("camera.enc3.down", reg);
    for (std::size_t i = 0; i < vit3_.size(); ++i) vit3_[i].collect("camera.enc3.vit" + std::to_string(i), reg);
    down4_.collect("camera.enc4.down", reg);
    for (std::size_t i = 0; i < vit4_.size(); ++i) vit4_[i].collect("camera.enc4.vit" + std::to_string(i), reg);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string p = "camera.dec" + std::to_string(4 - i);
      cam_res_[i].collect(p + ".res", reg);
      cam_up_[i].collect(p + ".up", reg);
    }
    cam_head_.collect("camera.head", reg);
    return reg;
  }

  /// Point-cloud-stream parameters, fusion blocks included (AdamW).
  Registry<Real> lidar_registry() {
    Registry<Real> reg;
    shallow_.collect("lidar.shallow", reg);
    for (std::size_t i = 0; i < 3; ++i) lidar_res_[i].collect("lidar.enc" + std::to_string(i + 2) + ".res", reg);
    for (std::size_t i = 0; i < agb_.size(); ++i) agb_[i].collect("lidar.agb" + std::to_string(i + 1), reg);
    aspp_.collect("lidar.aspp", reg);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string p = "lidar.dec" + std::to_string(4 - i);
      pcd_res_[i].collect(p + ".res", reg);
      pcd_up_[i].collect(p + ".up", reg);
    }
    pcd_head_.collect("lidar.head", reg);
    return reg;
  }

  Registry<Real> registry() {
    auto reg = camera_registry();
    auto l = lidar_registry();
    reg.params.insert(reg.params.end(), l.params.begin(), l.params.end());
    reg.buffers.insert(reg.buffers.end(), l.buffers.begin(), l.buffers.end());
    return reg;
  }

  std::vector<blocks::AgBlock<Real>>& agb_blocks() { return agb_; }

 private:
  void check_inputs(const Inputs<Real>& in) const {
    const auto& c = config;
    auto expect = [&](const Tensor<Real>& t, std::size_t ch, const char* what) {
      if (t.rank() != 4 || t.dim(1) != ch || t.dim(2) != c.height || t.dim(3) != c.width)
        throw std::invalid_argument(std::string("forward: ") + what + " must be [N," + std::to_string(ch) + "," +
                                    std::to_string(c.height) + "," + std::to_string(c.width) + "], got " +
                                    ag::to_string(t.shape()));
    };
    expect(in.image, c.image_channels, "image");
    expect(in.raster, c.raster_channels, "raster");
    if (in.image.dim(0) != in.raster.dim(0)) throw std::invalid_argument("forward: batch sizes differ");
    if (in.void_mask.size() != in.image.dim(0) * c.height * c.width)
      throw std::invalid_argument("forward: void mask must hold N·H·W entries");
    for (auto v : in.void_mask)
      if (v > 1) throw std::invalid_argument("forward: void mask must be binary");
  }

  Tensor<Real> fuse(std::size_t stage, const Tensor<Real>& p, const Tensor<Real>& q, bool training) {
    if (agb_.empty()) return p;
    ag::NameScope n("agb" + std::to_string(stage + 1));
    return agb_[stage].forward(p, q, training);
  }

  blocks::Bcu<Real> stem_, down2_, down3_, down4_;
  blocks::DilatedPyramid<Real> mbb1_, mbb2_, aspp_;
  std::vector<blocks::BinaryVitBlock<Real>> vit3_, vit4_;
  std::vector<blocks::BinaryResBlock<Real>> cam_res_, lidar_res_, pcd_res_;
  std::vector<blocks::UpShuffle<Real>> cam_up_, pcd_up_;
  std::vector<blocks::AgBlock<Real>> agb_;
  blocks::ShallowResBlock<Real> shallow_;
  blocks::Head<Real> cam_head_, pcd_head_;
};

// ---------------------------------------------------------------------------
// Samples and batches

/// One training item, already rasterized to the network resolution.
struct Sample {
  std::string name;
  std::size_t height = 0, width = 0;
  std::vector<float> image;              // [3, H, W], values in [0, 1]
  std::vector<float> raster;             // [Cp, H, W]
  std::vector<std::uint8_t> void_mask;   // [H, W], 1 where a point landed
  std::vector<std::uint8_t> labels_img;  // [H, W] dense labels
  std::vector<std::uint8_t> labels_pcd;  // [H, W] point labels, ignore on void
  bool shadow = false;
};

template <class Real>
struct Batch {
  Inputs<Real> inputs;
  std::vector<std::uint8_t> labels_img, labels_pcd;
};

template <class Real>
Batch<Real> make_batch(const std::vector<Sample>& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto& first = data.at(indices[0]);
  const std::size_t n = indices.size(), h = first.height, w = first.width;
  const std::size_t ci = first.image.size() / (h * w), cr = first.raster.size() / (h * w);
  Batch<Real> b;
  b.inputs.image = Tensor<Real>({n, ci, h, w});
  b.inputs.raster = Tensor<Real>({n, cr, h, w});
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = data.at(indices[k]);
    if (s.height != h || s.width != w) throw std::invalid_argument("make_batch: samples differ in size");
    std::copy(s.image.begin(), s.image.end(), b.inputs.image.data().begin() + static_cast<std::ptrdiff_t>(k * ci * h * w));
    std::copy(s.raster.begin(), s.raster.end(),
              b.inputs.raster.data().begin() + static_cast<std::ptrdiff_t>(k * cr * h * w));
    b.inputs.void_mask.insert(b.inputs.void_mask.end(), s.void_mask.begin(), s.void_mask.end());
    b.labels_img.insert(b.labels_img.end(), s.labels_img.begin(), s.labels_img.end());
    b.labels_pcd.insert(b.labels_pcd.end(), s.labels_pcd.begin(), s.labels_pcd.end());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training

struct TrainSettings {
  std::size_t epochs = 50;
  std::size_t batch_size = 2;
  double lr_camera = 1e-3;   // SGD, cosine-annealed over `epochs`
  double lr_lidar = 5e-4;    // AdamW
  double momentum = 0.9;
  double weight_decay = 0.01;
  double lambda = 2.0;       // variant focal schedule
  std::uint64_t seed = 1;
};

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0;
  std::array<double, 5> terms{};  // focal, lovasz_img, variant_focal, lovasz_pcd, interaction
  std::size_t batches = 0;
  double lr_camera = 0, lr_lidar = 0;
};

inline constexpr std::array<const char*, 5> kLossTermNames{"focal", "lovasz_img", "variant_focal", "lovasz_pcd",
                                                           "interaction"};

/// Model plus the two stream optimizers and the loss schedule.
template <class Real>
class Trainer {
 public:
  Trainer(PathfinderModel<Real>& model, const TrainSettings& settings, losses::VariantFocalSchedule schedule)
      : model_(model), settings_(settings), schedule_(std::move(schedule)) {
    OptimizerSettings cam{OptimizerKind::sgd_cosine, settings.lr_camera, settings.epochs, settings.momentum};
    cam.weight_decay = 0.0;
    OptimizerSettings lid{OptimizerKind::adamw, settings.lr_lidar, settings.epochs};
    lid.weight_decay = settings.weight_decay;
    camera_ = Optimizer<Real>(cam, model.camera_registry().params);
    lidar_ = Optimizer<Real>(lid, model.lidar_registry().params);
  }

  Optimizer<Real>& camera_optimizer() { return camera_; }
  Optimizer<Real>& lidar_optimizer() { return lidar_; }
  const losses::VariantFocalSchedule& schedule() const { return schedule_; }

  /// One pass over the samples listed in `order`, shuffled by seed and epoch.
  EpochStats train_epoch(const std::vector<Sample>& data, std::vector<std::size_t> order, std::size_t epoch) {
    if (order.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    Rng shuffle_rng(settings_.seed * 1000003ULL + epoch);
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochStats st;
    st.epoch = epoch;
    st.lr_camera = camera_.learning_rate(epoch);
    st.lr_lidar = lidar_.learning_rate(epoch);
    for (std::size_t start = 0; start < order.size(); start += settings_.batch_size) {
      const std::size_t end = std::min(order.size(), start + settings_.batch_size);
      const auto batch = make_batch<Real>(data, std::span<const std::size_t>(order).subspan(start, end - start));
      const auto terms = step(batch, epoch);
      st.total += terms.total.item();
      const auto parts = terms.breakdown();
      for (std::size_t i = 0; i < parts.size(); ++i) st.terms[i] += parts[i].value;
      ++st.batches;
    }
    st.total /= static_cast<double>(st.batches);
    for (auto& t : st.terms) t /= static_cast<double>(st.batches);
    return st;
  }

  /// Forward, backward, and one update of both optimizers.
  losses::LossTerms<Real> step(const Batch<Real>& batch, std::size_t epoch) {
    ag::Tape<Real> tape;
    losses::LossTerms<Real> terms;
    {
      ag::TapeScope<Real> scope(tape);
      const auto out = model_.forward(batch.inputs, true);
      terms = losses::total_loss(ag::softmax_channels(out.logits_img), ag::softmax_channels(out.logits_pcd),
                                 batch.labels_img, batch.labels_pcd, batch.inputs.void_mask, schedule_,
                                 static_cast<double>(epoch));
    }
    camera_.zero_grad();
    lidar_.zero_grad();
    tape.backward(terms.total);
    camera_.step(epoch);
    lidar_.step(epoch);
    return terms;
  }

 private:
  PathfinderModel<Real>& model_;
  TrainSettings settings_;
  losses::VariantFocalSchedule schedule_;
  Optimizer<Real> camera_, lidar_;
};

/// Per-class point-cloud pixel counts over the given samples, for a0^c.
inline std::vector<std::uint64_t> class_counts(const std::vector<Sample>& data, std::span<const std::size_t> idx,
                                               std::size_t classes) {
  std::vector<std::uint64_t> counts(classes, 0);
  for (auto i : idx)
    for (auto l : data.at(i).labels_pcd)
      if (l < classes) ++counts[l];
  return counts;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

template <class Real>
struct Prediction {
  std::vector<std::uint8_t> mask_img, mask_pcd;  // N·H·W argmax class ids
  Tensor<Real> conf_img, conf_pcd;               // [N, classes, H, W] softmax confidences
};

namespace detail {
template <class Real>
std::vector<std::uint8_t> argmax_channels(const Tensor<Real>& t) {
  const auto d = ag::detail::dims4(t, "argmax");
  std::vector<std::uint8_t> out(d.n * d.plane());
  auto v = t.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.plane(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < d.c; ++c)
        if (v[(n * d.c + c) * d.plane() + i] > v[(n * d.c + best) * d.plane() + i]) best = c;
      out[n * d.plane() + i] = static_cast<std::uint8_t>(best);
    }
  return out;
}
}  // namespace detail

/// Eval-mode forward without a tape: argmax masks and softmax confidences.
template <class Real>
Prediction<Real> infer(PathfinderModel<Real>& model, const Inputs<Real>& in) {
  ag::NoGradGuard guard;
  const auto out = model.forward(in, false);
  Prediction<Real> p;
  p.conf_img = ag::softmax_channels(out.logits_img);
  p.conf_pcd = ag::softmax_channels(out.logits_pcd);
  p.mask_img = detail::argmax_channels(out.logits_img);
  p.mask_pcd = detail::argmax_channels(out.logits_pcd);
  return p;
}

struct EvalResult {
  metrics::ConfusionMatrix img, pcd, pcd_dense;                 // all evaluated samples
  metrics::ConfusionMatrix img_shadow, pcd_shadow;              // shadow subset
  explicit EvalResult(std::size_t classes = 2)
      : img(classes), pcd(classes), pcd_dense(classes), img_shadow(classes), pcd_shadow(classes) {}
};

/// Camera predictions are scored against dense labels; point-cloud
/// predictions against point labels (void pixels ignored), and additionally
/// against dense labels.
template <class Real>
EvalResult evaluate(PathfinderModel<Real>& model, const std::vector<Sample>& data, std::span<const std::size_t> idx,
                    std::size_t batch_size = 4) {
  EvalResult r(model.config.classes);
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const auto sub = idx.subspan(start, std::min(batch_size, idx.size() - start));
    const auto b = make_batch<Real>(data, sub);
    const auto p = infer(model, b.inputs);
    const std::size_t plane = model.config.height * model.config.width;
    for (std::size_t k = 0; k < sub.size(); ++k) {
      const auto& s = data[sub[k]];
      const std::span<const std::uint8_t> mi(p.mask_img.data() + k * plane, plane), mp(p.mask_pcd.data() + k * plane, plane);
      r.img.add(s.labels_img, mi);
      r.pcd.add(s.labels_pcd, mp);
      r.pcd_dense.add(s.labels_img, mp);
      if (s.shadow) {
        r.img_shadow.add(s.labels_img, mi);
        r.pcd_shadow.add(s.labels_pcd, mp);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Complexity

/// Counts operations of one forward pass at batch size 1 without computing
/// anything, plus deployed parameter bytes.
inline metrics::ComplexityReport count_complexity(const PathfinderConfig& cfg, std::uint64_t seed = 1) {
  PathfinderModel<float> model(cfg, seed);
  ag::OpCounter counter;
  {
    ag::CountingScope scope(counter, true);
    Inputs<float> in;
    in.image = Tensor<float>::placeholder({1, cfg.image_channels, cfg.height, cfg.width});
    in.raster = Tensor<float>::placeholder({1, cfg.raster_channels, cfg.height, cfg.width});
    in.void_mask.assign(cfg.height * cfg.width, 1);
    model.forward(in, false);
  }
  auto report = metrics::summarize(counter);
  metrics::add_parameter_bytes(report, model.registry());
  return report;
}

}  // namespace pathfinder
