#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pathfinder/blocks.hpp"

using namespace pathfinder;
using namespace pathfinder::blocks;
using T = ag::Tensor<double>;

namespace {

T random_input(ag::Shape s, Rng& rng) {
  T t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(-1.5, 1.5);
  return t;
}

void fill(T& t, double v) {
  for (auto& x : t.data()) x = v;
}

double at(const T& t, std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  return t.data()[((n * t.dim(1) + c) * t.dim(2) + y) * t.dim(3) + x];
}

// Makes a BCU a pass-through for non-negative inputs: no conv contribution,
// shortcut kept, activation identity on the positive side.
void make_identity(Bcu<double>& b) {
  fill(b.weight, 0.0);
  fill(b.act_slope, 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// AGB

TEST(Agb, ClosedGateReturnsPointCloudFeatures) {
  Rng rng(1);
  AgBlock<double> agb(4, true, rng);
  fill(agb.eta.beta, -1e4);
  const auto p = random_input({1, 4, 6, 6}, rng), q = random_input({1, 4, 6, 6}, rng);
  const auto d = agb.forward_detail(p, q, false);
  for (double g : d.gate.data()) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(std::equal(d.out.data().begin(), d.out.data().end(), p.data().begin()));
}

TEST(Agb, OpenGateAddsFusedFeatures) {
  Rng rng(2);
  AgBlock<double> agb(4, true, rng);
  fill(agb.eta.beta, 1e4);
  const auto p = random_input({1, 4, 6, 6}, rng), q = random_input({1, 4, 6, 6}, rng);
  const auto d = agb.forward_detail(p, q, false);
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_EQ(d.out.data()[i], p.data()[i] + d.fused.data()[i]);
}

TEST(Agb, ResidualBoundedByFusedMagnitude) {
  for (std::uint64_t seed = 3; seed < 8; ++seed) {
    Rng rng(seed);
    AgBlock<double> agb(3, seed % 2 == 0, rng);
    const auto p = random_input({2, 3, 5, 5}, rng);
    const auto q = seed == 3 ? p : random_input({2, 3, 5, 5}, rng);  // identical streams included
    const auto d = agb.forward_detail(p, q, true);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = d.gate.data()[i];
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
      EXPECT_LE(std::abs(d.out.data()[i] - p.data()[i]), std::abs(d.fused.data()[i]) + 1e-15);
    }
  }
}

TEST(Agb, ShapeMismatchThrows) {
  Rng rng(4);
  AgBlock<double> agb(4, true, rng);
  EXPECT_THROW(agb.forward(T({1, 4, 6, 6}), T({1, 4, 6, 4}), false), std::invalid_argument);
}

TEST(Agb, ParametersGetFiniteGradients) {
  Rng rng(5);
  AgBlock<double> agb(3, true, rng);
  const auto p = random_input({2, 3, 5, 5}, rng), q = random_input({2, 3, 5, 5}, rng);
  ag::Tape<double> tape;
  T loss;
  {
    ag::TapeScope<double> scope(tape);
    const auto out = agb.forward(p, q, true);
    loss = ag::sum(ag::mul(out, out));
  }
  tape.backward(loss);
  Registry<double> reg;
  agb.collect("agb", reg);
  for (const auto& prm : reg.params) {
    ASSERT_TRUE(prm.tensor.has_grad()) << prm.name;
    for (double g : prm.tensor.grad()) ASSERT_TRUE(std::isfinite(g)) << prm.name;
  }
}

// ---------------------------------------------------------------------------
// Residual blocks

TEST(ResBlock, Out1IsTheMeanOfTheUnitChain) {
  Rng rng(6);
  BinaryResBlock<double> block(3, 4, true, rng);
  const auto x = random_input({1, 3, 6, 6}, rng);
  const auto d = block.forward(x, false);
  const auto u1 = block.units[0].forward(x, false);
  const auto u2 = block.units[1].forward(u1, false);
  const auto u3 = block.units[2].forward(u2, false);
  for (std::size_t i = 0; i < u1.numel(); ++i)
    EXPECT_NEAR(d.out1.data()[i], (u1.data()[i] + u2.data()[i] + u3.data()[i]) / 3.0, 1e-12);
}

TEST(ResBlock, Out2IsTheTwoByTwoAverageOfOut1) {
  Rng rng(7);
  BinaryResBlock<double> block(2, 2, false, rng);
  const auto x = random_input({1, 2, 5, 7}, rng);
  const auto d = block.forward(x, false);
  ASSERT_EQ(d.out2.shape(), (ag::Shape{1, 2, 2, 3}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t xx = 0; xx < 3; ++xx) {
        const double want = (at(d.out1, 0, c, 2 * y, 2 * xx) + at(d.out1, 0, c, 2 * y, 2 * xx + 1) +
                             at(d.out1, 0, c, 2 * y + 1, 2 * xx) + at(d.out1, 0, c, 2 * y + 1, 2 * xx + 1)) /
                            4;
        EXPECT_NEAR(at(d.out2, 0, c, y, xx), want, 1e-12);
      }
}

TEST(ResBlock, ConstantThroughIdentityUnitsStaysConstant) {
  Rng rng(8);
  BinaryResBlock<double> block(3, 3, true, rng);
  for (auto& u : block.units) {
    make_identity(u);
    fill(u.bn.gamma, 0.0);  // BN output is beta = 0, so the unit returns its shortcut
  }
  T x({1, 3, 8, 8}, 0.75);
  const auto d = block.forward(x, false);
  for (double v : d.out1.data()) EXPECT_DOUBLE_EQ(v, 0.75);
  for (double v : d.out2.data()) EXPECT_DOUBLE_EQ(v, 0.75);
  EXPECT_EQ(d.out2.shape(), (ag::Shape{1, 3, 4, 4}));
}

TEST(ShallowBlock, FullPrecisionWithDualOutputs) {
  Rng rng(9);
  ShallowResBlock<double> block(4, 6, rng);
  EXPECT_FALSE(block.project.config.binarize);
  EXPECT_FALSE(block.unit1.config.binarize);
  EXPECT_EQ(block.project.config.kernel, 1U);
  const auto d = block.forward(random_input({2, 4, 8, 6}, rng), true);
  EXPECT_EQ(d.out1.shape(), (ag::Shape{2, 6, 8, 6}));
  EXPECT_EQ(d.out2.shape(), (ag::Shape{2, 6, 4, 3}));
}

// ---------------------------------------------------------------------------
// Dilated pyramids

TEST(Aspp, PreservesShapeAndAveragesBranches) {
  Rng rng(10);
  DilatedPyramid<double> aspp(3, aspp_rates(), true, rng);
  const auto x = random_input({1, 3, 32, 32}, rng);
  const auto out = aspp.forward(x, false);
  EXPECT_EQ(out.shape(), x.shape());
  const auto branches = aspp.branch_outputs(x, false);
  ASSERT_EQ(branches.size(), 4U);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double s = 0;
    for (const auto& b : branches) s += b.data()[i];
    EXPECT_NEAR(out.data()[i], s / 4, 1e-12);
  }
}

TEST(Aspp, EqualBranchesGiveThatBranch) {
  Rng rng(11);
  DilatedPyramid<double> aspp(2, aspp_rates(), false, rng);
  // centre-tap-only kernels make the dilation irrelevant
  for (auto& b : aspp.branches) {
    fill(b.weight, 0.0);
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t i = 0; i < 2; ++i) b.weight.data()[((o * 2 + i) * 3 + 1) * 3 + 1] = 0.3 + 0.1 * o - 0.2 * i;
  }
  const auto x = random_input({1, 2, 20, 20}, rng);
  const auto out = aspp.forward(x, false);
  const auto one = aspp.branches[0].forward(x, false);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.data()[i], one.data()[i], 1e-12);
}

TEST(Mbb, UsesSmallRatesAndKeepsShape) {
  Rng rng(12);
  DilatedPyramid<double> mbb(4, mbb_rates(), true, rng);
  EXPECT_EQ(mbb.rates, (std::vector<std::size_t>{1, 2, 3}));
  const auto x = random_input({2, 4, 9, 7}, rng);
  EXPECT_EQ(mbb.forward(x, true).shape(), x.shape());
}

// ---------------------------------------------------------------------------
// ViT

TEST(Attention, SingleTokenReturnsValues) {
  Rng rng(13);
  for (bool bin : {true, false}) {
    const auto q = random_input({1, 4, 1, 1}, rng), k = random_input({1, 4, 1, 1}, rng),
               v = random_input({1, 4, 1, 1}, rng);
    const auto out = ag::attention(q, k, v, 2, bin);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.data()[i], v.data()[i]);
  }
}

TEST(Vit, PermutingTokensPermutesOutputs) {
  Rng rng(14);
  for (bool bin : {true, false}) {
    BinaryVitBlock<double> vit(4, 2, bin, rng);
    const std::size_t h = 3, w = 4, t = h * w, d = 4;
    const auto x = random_input({1, d, h, w}, rng);
    std::vector<std::size_t> perm(t);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    T xp({1, d, h, w});
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < t; ++i) xp.data()[c * t + i] = x.data()[c * t + perm[i]];
    const auto y = vit.forward(x, false), yp = vit.forward(xp, false);
    EXPECT_EQ(y.shape(), x.shape());
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < t; ++i) EXPECT_NEAR(yp.data()[c * t + i], y.data()[c * t + perm[i]], 1e-12);
  }
}

TEST(Vit, HeadsMustDivideDimension) {
  Rng rng(15);
  EXPECT_THROW(BinaryVitBlock<double>(6, 4, true, rng), std::invalid_argument);
}

TEST(Blocks, FullPrecisionDebugModeKeepsShapes) {
  for (bool bin : {true, false}) {
    Rng rng(16);
    const auto x = random_input({1, 4, 8, 8}, rng);
    BinaryResBlock<double> res(4, 8, bin, rng);
    AgBlock<double> agb(4, bin, rng);
    UpShuffle<double> up(4, 2, bin, rng);
    EXPECT_EQ(res.forward(x, true).out2.shape(), (ag::Shape{1, 8, 4, 4}));
    EXPECT_EQ(agb.forward(x, x, true).shape(), x.shape());
    EXPECT_EQ(up.forward(x, true).shape(), (ag::Shape{1, 2, 16, 16}));
  }
}
