#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "pathfinder/bitcore.hpp"
#include "pathfinder/gemm.hpp"
#include "pathfinder/rng.hpp"

using namespace pathfinder;
using namespace pathfinder::bitcore;

namespace {

std::vector<float> random_pm1(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = rng.chance(0.5) ? 1.0F : -1.0F;
  return v;
}

// Direct zero-padded convolution of ±1 tensors.
std::vector<float> naive_conv(const std::vector<float>& w, const std::vector<float>& a, std::size_t cout,
                              std::size_t cin, std::size_t k, std::size_t h, std::size_t wd, const ConvGeometry& g) {
  const std::size_t ho = (h + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
  const std::size_t wo = (wd + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
  std::vector<float> out(cout * ho * wo, 0.0F);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        float acc = 0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * g.stride + ky * g.dilation) - static_cast<long>(g.padding);
              const long ix = static_cast<long>(ox * g.stride + kx * g.dilation) - static_cast<long>(g.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              acc += w[((o * cin + c) * k + ky) * k + kx] * a[(c * h + iy) * wd + ix];
            }
        out[(o * ho + oy) * wo + ox] = acc;
      }
  return out;
}

}  // namespace

TEST(SignPack, MapsSignsWithZeroAsPlusOne) {
  const std::vector<float> x{1.5F, -0.2F, 0.0F, -7.0F};
  const auto bits = sign_pack(x);
  EXPECT_EQ(unpack(bits), (std::vector<float>{1, -1, 1, -1}));
}

TEST(SignPack, AllPositiveSetsEveryBit) {
  const std::vector<double> x(130, 0.25);
  const auto bits = sign_pack(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_TRUE(bits.get(i));
  EXPECT_TRUE(bits.padding_clear());
  EXPECT_EQ(bits.valid_bits_in_last_word(), 2U);
}

TEST(SignPack, MatchesScalarSignOracle) {
  Rng rng(11);
  std::vector<float> x(1000);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  x[17] = 0.0F;
  const auto got = unpack(sign_pack(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(got[i], x[i] >= 0.0F ? 1.0F : -1.0F) << i;
}

TEST(SignPack, RejectsNaN) {
  const std::vector<float> x{1.0F, std::nanf("")};
  EXPECT_THROW(sign_pack(x), std::domain_error);
}

TEST(SignPack, RoundTripsRaggedShapes) {
  Rng rng(5);
  for (std::vector<std::size_t> shape :
       {std::vector<std::size_t>{1}, {63}, {64}, {65}, {3, 7}, {5, 2, 3, 3}, {2, 130}, {4, 64, 1}}) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    const auto x = random_pm1(n, rng);
    const auto bits = sign_pack<float>(x, shape);
    EXPECT_TRUE(bits.padding_clear());
    EXPECT_EQ(bits.size(), n);
    EXPECT_EQ(unpack(bits), x);
  }
}

TEST(XnorPopcount, IdenticalAndAntipodal) {
  const auto a = sign_pack(std::vector<float>{1, 1, 1, 1});
  EXPECT_EQ(xnor_popcount_dot(a, a), 4);
  const auto b = sign_pack(std::vector<float>{1, -1, 1, -1});
  const auto c = sign_pack(std::vector<float>{-1, 1, -1, 1});
  EXPECT_EQ(xnor_popcount_dot(b, c), -4);
}

TEST(XnorPopcount, MatchesFloatDotLength64) {
  Rng rng(1);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto x = random_pm1(64, rng), y = random_pm1(64, rng);
    float ref = 0;
    for (std::size_t i = 0; i < 64; ++i) ref += x[i] * y[i];
    ASSERT_EQ(static_cast<float>(xnor_popcount_dot(sign_pack(x), sign_pack(y))), ref);
  }
}

TEST(XnorPopcount, LengthMismatchThrows) {
  EXPECT_THROW(xnor_popcount_dot(sign_pack(std::vector<float>(3, 1.0F)), sign_pack(std::vector<float>(4, 1.0F))),
               std::invalid_argument);
}

TEST(BinaryGemm, OneByOne) {
  const auto w = sign_pack<float>(std::vector<float>{1}, {1, 1});
  const auto a = sign_pack<float>(std::vector<float>{1}, {1, 1});
  const auto out = binary_gemm(w, a, ScaleFactors{{2.0F}, 3.0F});
  ASSERT_EQ(out.size(), 1U);
  EXPECT_FLOAT_EQ(out[0], 6.0F);
}

TEST(BinaryGemm, UnitScalesEqualIntegerProduct) {
  Rng rng(2);
  for (std::size_t m : {1U, 7U, 64U, 128U})
    for (std::size_t k : {1U, 63U, 100U, 128U})
      for (std::size_t n : {1U, 5U, 128U}) {
        const auto w = random_pm1(m * k, rng), a = random_pm1(k * n, rng);
        std::vector<float> ref(m * n);
        gemm::gemm_naive(m, n, k, w.data(), a.data(), ref.data());
        const auto got = binary_gemm(sign_pack<float>(w, {m, k}), sign_pack<float>(a, {k, n}), ScaleFactors::unit(m));
        ASSERT_EQ(got, ref) << m << "x" << k << "x" << n;
      }
}

TEST(BinaryGemm, MeanAbsScaleReducesApproximationError) {
  Rng rng(3);
  const std::size_t rows = 32, cols = 72;
  std::vector<float> w(rows * cols);
  for (auto& v : w) v = static_cast<float>(rng.normal(0.0, 0.3));
  const auto alpha = mean_abs_rows<float>(w, rows);
  double err_scaled = 0, err_unscaled = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double s = w[r * cols + c] >= 0 ? 1.0 : -1.0;
      err_scaled += std::pow(alpha[r] * s - w[r * cols + c], 2);
      err_unscaled += std::pow(s - w[r * cols + c], 2);
    }
  EXPECT_LE(err_scaled, err_unscaled);
}

TEST(BinaryGemm, DimensionErrors) {
  const auto w = sign_pack<float>(std::vector<float>(6, 1.0F), {2, 3});
  const auto a = sign_pack<float>(std::vector<float>(8, 1.0F), {4, 2});
  EXPECT_THROW(binary_gemm(w, a, ScaleFactors::unit(2)), std::invalid_argument);
  const auto a_ok = sign_pack<float>(std::vector<float>(6, 1.0F), {3, 2});
  EXPECT_THROW(binary_gemm(w, a_ok, ScaleFactors::unit(3)), std::invalid_argument);
  EXPECT_THROW(binary_gemm(w, a_ok, ScaleFactors{{1.0F, -1.0F}, 1.0F}), std::invalid_argument);
}

TEST(BinaryConv, OneByOneAllPlus) {
  const std::size_t cin = 5;
  const auto w = sign_pack<float>(std::vector<float>(cin, 1.0F), {1, cin, 1, 1});
  const auto a = sign_pack<float>(std::vector<float>(cin * 16, 1.0F), {cin, 4, 4});
  const auto out = binary_conv2d(w, a, ScaleFactors::unit(1), {});
  for (float v : out) EXPECT_FLOAT_EQ(v, static_cast<float>(cin));
}

TEST(BinaryConv, MatchesNaiveZeroPaddedConvolution) {
  Rng rng(4);
  const std::size_t cout = 6, cin = 3, k = 3, h = 8, wd = 8;
  const ConvGeometry g{1, 1, 1};
  const auto w = random_pm1(cout * cin * k * k, rng), a = random_pm1(cin * h * wd, rng);
  const auto got = binary_conv2d(sign_pack<float>(w, {cout, cin, k, k}), sign_pack<float>(a, {cin, h, wd}),
                                 ScaleFactors::unit(cout), g);
  EXPECT_EQ(got, naive_conv(w, a, cout, cin, k, h, wd, g));
}

TEST(BinaryConv, RandomGeometriesMatchOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cout = 1 + rng.below(5), cin = 1 + rng.below(9), k = 1 + 2 * rng.below(2);
    const ConvGeometry g{1 + rng.below(2), rng.below(4), 1 + rng.below(3)};
    const std::size_t extent = g.dilation * (k - 1) + 1;
    const std::size_t h = extent + rng.below(8), wd = extent + rng.below(8);
    const auto w = random_pm1(cout * cin * k * k, rng), a = random_pm1(cin * h * wd, rng);
    const auto got = binary_conv2d(sign_pack<float>(w, {cout, cin, k, k}), sign_pack<float>(a, {cin, h, wd}),
                                   ScaleFactors::unit(cout), g);
    ASSERT_EQ(got, naive_conv(w, a, cout, cin, k, h, wd, g)) << "trial " << trial;
  }
}

TEST(BinaryConv, DilatedSizePreserving) {
  Rng rng(7);
  const auto w = random_pm1(2 * 2 * 9, rng), a = random_pm1(2 * 32 * 32, rng);
  const ConvGeometry g{1, 6, 6};
  const auto out = binary_conv2d(sign_pack<float>(w, {2, 2, 3, 3}), sign_pack<float>(a, {2, 32, 32}),
                                 ScaleFactors::unit(2), g);
  EXPECT_EQ(out.size(), 2U * 32U * 32U);
  EXPECT_EQ(out, naive_conv(w, a, 2, 2, 3, 32, 32, g));
}

TEST(BinaryConv, KernelLargerThanPaddedInputThrows) {
  const auto w = sign_pack<float>(std::vector<float>(25, 1.0F), {1, 1, 5, 5});
  const auto a = sign_pack<float>(std::vector<float>(9, 1.0F), {1, 3, 3});
  EXPECT_THROW(binary_conv2d(w, a, ScaleFactors::unit(1), {}), std::invalid_argument);
}

TEST(BinaryConv, ScalesApplyPerOutputChannel) {
  Rng rng(8);
  const auto w = random_pm1(3 * 2 * 9, rng), a = random_pm1(2 * 6 * 6, rng);
  const ConvGeometry g{1, 1, 1};
  const auto wb = sign_pack<float>(w, {3, 2, 3, 3});
  const auto ab = sign_pack<float>(a, {2, 6, 6});
  const auto unit = binary_conv2d(wb, ab, ScaleFactors::unit(3), g);
  const auto scaled = binary_conv2d(wb, ab, ScaleFactors{{0.5F, 2.0F, 0.0F}, 3.0F}, g);
  const float mult[3] = {1.5F, 6.0F, 0.0F};
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t p = 0; p < 36; ++p) EXPECT_FLOAT_EQ(scaled[o * 36 + p], mult[o] * unit[o * 36 + p]);
}

TEST(BinaryGemm, FasterThanNaiveFloatAt1024) {
  Rng rng(9);
  const std::size_t n = 1024;
  const auto w = random_pm1(n * n, rng), a = random_pm1(n * n, rng);
  const auto wb = sign_pack<float>(w, {n, n});
  const auto at = transpose(sign_pack<float>(a, {n, n}));
  auto t0 = std::chrono::steady_clock::now();
  const auto bin = binary_gemm_nt(wb, at, ScaleFactors::unit(n));
  auto t1 = std::chrono::steady_clock::now();
  std::vector<float> ref(n * n);
  gemm::gemm_naive(n, n, n, w.data(), a.data(), ref.data());
  auto t2 = std::chrono::steady_clock::now();
  const double tb = std::chrono::duration<double>(t1 - t0).count();
  const double tf = std::chrono::duration<double>(t2 - t1).count();
  std::printf("binary_gemm 1024^3: %.4f s, naive float: %.4f s, ratio %.1fx\n", tb, tf, tf / tb);
  EXPECT_EQ(bin, ref);
  EXPECT_LT(tb, tf);
}
