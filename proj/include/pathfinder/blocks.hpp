#pragma once
// Network building blocks: BCU, AGB fusion, residual blocks, dilated pyramids,
// binarized ViT block, and pixel-shuffle upsampling.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pathfinder/module.hpp"
#include "pathfinder/ops.hpp"
#include "pathfinder/rng.hpp"

namespace pathfinder::blocks {

using ag::Tensor;

template <class Real>
Tensor<Real> param_tensor(ag::Shape shape, Real fill) {
  Tensor<Real> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

template <class Real>
Tensor<Real> random_tensor(ag::Shape shape, double stddev, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Real>(rng.normal(0.0, stddev));
  t.set_requires_grad(true);
  return t;
}

/// Learnable per-channel batch norm.
template <class Real>
struct BatchNorm {
  Tensor<Real> gamma, beta;
  ag::BnState<Real> state;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(param_tensor<Real>({channels}, Real(1))), beta(param_tensor<Real>({channels}, Real(0))), state(channels) {}

  Tensor<Real> operator()(const Tensor<Real>& x, bool training) {
    return ag::batch_norm(x, gamma, beta, state, training);
  }
  void collect(const std::string& prefix, Registry<Real>& reg) {
    reg.param(join_name(prefix, "gamma"), gamma, ParamRole::norm);
    reg.param(join_name(prefix, "beta"), beta, ParamRole::norm);
    reg.buffer(join_name(prefix, "running_mean"), state.running_mean);
    reg.buffer(join_name(prefix, "running_var"), state.running_var);
  }
};

struct BcuConfig {
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  bool binarize = true;
  bool activation = true;
  bool residual = true;
};

/// Binary Convolution Unit: learnable pre-sign shift → binary conv → BN →
/// identity shortcut (when shapes agree) → RPReLU.
///
/// With `binarize` off the same topology runs a full-precision convolution.
template <class Real>
class Bcu {
 public:
  BcuConfig config;
  Tensor<Real> weight;     // [cout, cin, k, k], latent when binarized
  Tensor<Real> pre_shift;  // [cin]
  BatchNorm<Real> bn;
  Tensor<Real> act_shift_in, act_slope, act_shift_out;  // [cout]

  Bcu() = default;
  Bcu(const BcuConfig& cfg, Rng& rng) : config(cfg), bn(cfg.cout) {
    if (cfg.cin == 0 || cfg.cout == 0 || cfg.kernel == 0 || cfg.stride == 0 || cfg.dilation == 0)
      throw std::invalid_argument("Bcu: zero-sized configuration");
    const double fan_in = static_cast<double>(cfg.cin * cfg.kernel * cfg.kernel);
    weight = random_tensor<Real>({cfg.cout, cfg.cin, cfg.kernel, cfg.kernel}, std::sqrt(2.0 / fan_in), rng);
    pre_shift = param_tensor<Real>({cfg.cin}, Real(0));
    act_shift_in = param_tensor<Real>({cfg.cout}, Real(0));
    act_slope = param_tensor<Real>({cfg.cout}, Real(0.25));
    act_shift_out = param_tensor<Real>({cfg.cout}, Real(0));
  }

  bool has_shortcut() const { return config.residual && config.cin == config.cout && config.stride == 1; }

  ag::ConvGeometry geometry() const {
    return {config.stride, config.dilation * (config.kernel - 1) / 2, config.dilation};
  }

  /// Convolution output before normalization.
  Tensor<Real> conv_stage(const Tensor<Real>& x) const {
    if (x.rank() != 4 || x.dim(1) != config.cin)
      throw std::invalid_argument("Bcu: expected " + std::to_string(config.cin) + " input channels, got " +
                                  ag::to_string(x.shape()));
    const auto shifted = ag::add_channel(x, pre_shift, Real(-1));
    return config.binarize ? ag::binary_conv2d(shifted, weight, geometry()) : ag::conv2d(shifted, weight, geometry());
  }

  Tensor<Real> forward(const Tensor<Real>& x, bool training) {
    auto y = bn(conv_stage(x), training);
    if (has_shortcut()) y = ag::add(y, x);
    if (config.activation) y = ag::rprelu(y, act_shift_in, act_slope, act_shift_out);
    return y;
  }

  void collect(const std::string& prefix, Registry<Real>& reg) {
    reg.param(join_name(prefix, "weight"), weight, config.binarize ? ParamRole::binary_weight : ParamRole::weight);
    reg.param(join_name(prefix, "pre_shift"), pre_shift, ParamRole::shift);
    bn.collect(join_name(prefix, "bn"), reg);
    if (config.activation) {
      reg.param(join_name(prefix, "act_shift_in"), act_shift_in, ParamRole::shift);
      reg.param(join_name(prefix, "act_slope"), act_slope, ParamRole::shift);
      reg.param(join_name(prefix, "act_shift_out"), act_shift_out, ParamRole::shift);
    }
  }
};

/// Attention-guided gating block fusing camera features Q into the point-cloud
/// stream P:
///   F_fu  = BCU_fuse(concat(P,Q) + concat(P,Q))        (2C → C)
///   F_out = P + σ(F_fu + BN(BCU_gate(F_fu))) ⊙ F_fu
template <class Real>
class AgBlock {
 public:
  Bcu<Real> fuse;
  Bcu<Real> gate;
  BatchNorm<Real> eta;

  struct Detail {
    Tensor<Real> out;
    Tensor<Real> fused;
    Tensor<Real> gate;  // σ(...)
  };

  AgBlock() = default;
  AgBlock(std::size_t channels, bool binarize, Rng& rng)
      : fuse(BcuConfig{2 * channels, channels, 3, 1, 1, binarize, true, false}, rng),
        gate(BcuConfig{channels, channels, 3, 1, 1, binarize, true, true}, rng),
        eta(channels) {}

  Detail forward_detail(const Tensor<Real>& p, const Tensor<Real>& q, bool training) {
    if (p.shape() != q.shape())
      throw std::invalid_argument("AGB: stream shapes differ " + ag::to_string(p.shape()) + " vs " +
                                  ag::to_string(q.shape()));
    ag::NameScope scope("agb");
    const auto cat = ag::concat_channels(p, q);
    const auto fused = fuse.forward(ag::add(cat, cat), training);
    const auto g = ag::sigmoid(ag::add(fused, eta(gate.forward(fused, training), training)));
    return {ag::add(p, ag::mul(g, fused)), fused, g};
  }

  Tensor<Real> forward(const Tensor<Real>& p, const Tensor<Real>& q, bool training) {
    return forward_detail(p, q, training).out;
  }

  void collect(const std::string& prefix, Registry<Real>& reg) {
    fuse.collect(join_name(prefix, "fuse"), reg);
    gate.collect(join_name(prefix, "gate"), reg);
    eta.collect(join_name(prefix, "eta"), reg);
  }
};

template <class Real>
struct DualOutput {
  Tensor<Real> out1;  // full resolution, feeds the decoder skip
  Tensor<Real> out2;  // 2×2 average-pooled out1
};

/// Three chained BCUs; out1 averages their outputs, out2 halves the resolution.
template <class Real>
class BinaryResBlock {
 public:
  std::vector<Bcu<Real>> units;

  BinaryResBlock() = default;
  BinaryResBlock(std::size_t cin, std::size_t cout, bool binarize, Rng& rng) {
    units.emplace_back(BcuConfig{cin, cout, 3, 1, 1, binarize, true, true}, rng);
    units.emplace_back(BcuConfig{cout, cout, 3, 1, 1, binarize, true, true}, rng);
    units.emplace_back(BcuConfig{cout, cout, 3, 1, 1, binarize, true, true}, rng);
  }

  Tensor<Real> forward_out1(const Tensor<Real>& x, bool training) {
    std::vector<Tensor<Real>> outs;
    Tensor<Real> h = x;
    for (std::size_t i = 0; i < units.size(); ++i) {
      ag::NameScope scope("unit" + std::to_string(i));
      h = units[i].forward(h, training);
      outs.push_back(h);
    }
    return ag::mean_of(outs);
  }

  DualOutput<Real> forward(const Tensor<Real>& x, bool training) {
    auto out1 = forward_out1(x, training);
    return {out1, ag::avg_pool2(out1)};
  }

  void collect(const std::string& prefix, Registry<Real>& reg) {
    for (std::size_t i = 0; i < units.size(); ++i) units[i].collect(join_name(prefix, "unit" + std::to_string(i)), reg);
  }
};

/// Full-precision first stage for the raster input: one 1×1 convolution and
/// two 3×3 convolution units, averaged like BinaryResBlock.
template <class Real>
class ShallowResBlock {
 public:
  Bcu<Real> project;
  Bcu<Real> unit1, unit2;

  ShallowResBlock() = default;
  ShallowResBlock(std::size_t cin, std::size_t cout, Rng& rng)
      : project(BcuConfig{cin, cout, 1, 1, 1, false, true, false}, rng),
        unit1(BcuConfig{cout, cout, 3, 1, 1, false, true, true}, rng),
        unit2(BcuConfig{cout, cout, 3, 1, 1, false, true, true}, rng) {}

  DualOutput<Real> forward(const Tensor<Real>& x, bool training) {
    ag::NameScope scope("shallow");
    const auto c = project.forward(x, training);
    const auto u1 = unit1.forward(c, training);
    const auto u2 = unit2.forward(u1, training);
    auto out1 = ag::mean_of(std::vector<Tensor<Real>>{c, u1, u2});
    return {out1, ag::avg_pool2(out1)};
  }

  void collect(const std::string& prefix, Registry<Real>& reg) {
    project.collect(join_name(prefix, "project"), reg);
    unit1.collect(join_name(prefix, "unit1"), reg);
    unit2.collect(join_name(prefix, "unit2"), reg);
  }
};

/// Parallel size-preserving dilated BCUs merged by add-and-average.
/// Binary-ASPP uses rates {1,6,12,18}; the camera-side MBB uses {1,2,3}.
template <class Real>
class DilatedPyramid {
 public:
  std::vector<std::size_t> rates;
  std::vector<Bcu<Real>> branches;

  DilatedPyramid() = default;
  DilatedPyramid(std::size_t channels, std::vector<std::size_t> dilation_rates, bool binarize, Rng& rng)
      : rates(std::move(dilation_rates)) {
    for (auto d : rates) branches.emplace_back(BcuConfig{channels, channels, 3, 1, d, binarize, true, true}, rng);
  }

  std::vector<Tensor<Real>> branch_outputs(const Tensor<Real>& x, bool training) {
    if (x.rank() != 4 || x.dim(2) < 1 || x.dim(3) < 1)
      throw std::invalid_argument("dilated pyramid: input must be at least 1x1, got " + ag::to_string(x.shape()));
    std::vector<Tensor<Real>> outs;
    for (std::size_t i = 0; i < branches.size(); ++i) {
      ag::NameScope scope("d" + std::to_string(rates[i]));
      outs.push_back(branches[i].forward(x, training));
    }
    return outs;
  }

  Tensor<Real> forward(const Tensor<Real>& x, bool training) { return ag::mean_of(branch_outputs(x, training)); }

  void collect(const std::string& prefix, Registry<Real>& reg) {
    for (std::size_t i = 0; i < branches.size(); ++i)
      branches[i].collect(join_name(prefix, "d" + std::to_string(rates[i])), reg);
  }
};

inline std::vector<std::size_t> aspp_rates() { return {1, 6, 12, 18}; }
inline std::vector<std::size_t> mbb_rates() { return {1, 2, 3}; }

/// Binarized transformer block over the H·W tokens of an NCHW map: binary
/// 1×1 Q/K/V/output projections, XNOR attention scores, full-precision
/// softmax, and a binary MLP, each with a residual add.
template <class Real>
class BinaryVitBlock {
 public:
  std::size_t heads = 1;
  bool binarize = true;
  Bcu<Real> q, k, v, proj, mlp_in, mlp_out;

  BinaryVitBlock() = default;
  BinaryVitBlock(std::size_t dim, std::size_t num_heads, bool binarize_, Rng& rng, std::size_t mlp_ratio = 2)
      : heads(num_heads),
        binarize(binarize_),
        q(BcuConfig{dim, dim, 1, 1, 1, binarize_, false, false}, rng),
        k(BcuConfig{dim, dim, 1, 1, 1, binarize_, false, false}, rng),
        v(BcuConfig{dim, dim, 1, 1, 1, binarize_, false, false}, rng),
        proj(BcuConfig{dim, dim, 1, 1, 1, binarize_, false, false}, rng),
        mlp_in(BcuConfig{dim, mlp_ratio * dim, 1, 1, 1, binarize_, true, false}, rng),
        mlp_out(BcuConfig{mlp_ratio * dim, dim, 1, 1, 1, binarize_, true, false}, rng) {
    if (num_heads == 0 || dim % num_heads != 0)
      throw std::invalid_argument("ViT block: dimension " + std::to_string(dim) + " not divisible by " +
                                  std::to_string(num_heads) + " heads");
  }

  Tensor<Real> forward(const Tensor<Real>& x, bool training) {
    ag::NameScope scope("vit");
    const auto a = ag::attention(q.forward(x, training), k.forward(x, training), v.forward(x, training), heads, binarize);
    const auto x1 = ag::add(x, proj.forward(a, training));
    return ag::add(x1, mlp_out.forward(mlp_in.forward(x1, training), training));
  }

  void collect(const std::string& prefix, Registry<Real>& reg) {
    q.collect(join_name(prefix, "q"), reg);
    k.collect(join_name(prefix, "k"), reg);
    v.collect(join_name(prefix, "v"), reg);
    proj.collect(join_name(prefix, "proj"), reg);
    mlp_in.collect(join_name(prefix, "mlp_in"), reg);
    mlp_out.collect(join_name(prefix, "mlp_out"), reg);
  }
};

/// ×2 upsampling: 1×1 BCU to 4·cout channels, then pixel shuffle.
template <class Real>
class UpShuffle {
 public:
  Bcu<Real> expand;

  UpShuffle() = default;
  UpShuffle(std::size_t cin, std::size_t cout, bool binarize, Rng& rng)
      : expand(BcuConfig{cin, 4 * cout, 1, 1, 1, binarize, true, false}, rng) {}

  Tensor<Real> forward(const Tensor<Real>& x, bool training) {
    return ag::pixel_shuffle(expand.forward(x, training), 2);
  }
  void collect(const std::string& prefix, Registry<Real>& reg) { expand.collect(join_name(prefix, "expand"), reg); }
};

/// Full-precision 1×1 classifier with bias.
template <class Real>
class Head {
 public:
  Tensor<Real> weight, bias;

  Head() = default;
  Head(std::size_t cin, std::size_t classes, Rng& rng)
      : weight(random_tensor<Real>({classes, cin, 1, 1}, std::sqrt(1.0 / static_cast<double>(cin)), rng)),
        bias(param_tensor<Real>({classes}, Real(0))) {}

  Tensor<Real> forward(const Tensor<Real>& x) {
    ag::NameScope scope("head");
    return ag::conv2d(x, weight, ag::ConvGeometry{}, &bias);
  }
  void collect(const std::string& prefix, Registry<Real>& reg) {
    reg.param(join_name(prefix, "weight"), weight, ParamRole::weight);
    reg.param(join_name(prefix, "bias"), bias, ParamRole::bias);
  }
};

}  // namespace pathfinder::blocks
