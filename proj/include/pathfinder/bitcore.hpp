#pragma once
// Bit-packed {-1,+1} tensors and XNOR/PopCount kernels.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pathfinder::bitcore {

using Word = std::uint64_t;
inline constexpr std::size_t kWordBits = 64;

constexpr std::size_t words_for(std::size_t bits) { return (bits + kWordBits - 1) / kWordBits; }

/// Mask selecting the low `bits` bits of a word; `bits == 0` means a full word.
constexpr Word low_mask(std::size_t bits) {
  return bits == 0 ? ~Word{0} : (Word{1} << bits) - 1;
}

/// Bit-packed tensor of {-1,+1} values. Bit 1 is +1, bit 0 is -1.
///
/// Packing is row-aligned: the leading dimension indexes rows, the remaining
/// dimensions are flattened into one row, and every row starts on a fresh
/// 64-bit word. A rank-1 tensor is a single row. Bits past the end of a row
/// are always zero, so kernels can correct for them deterministically.
class BitTensor {
 public:
  BitTensor() = default;

  /// All elements start at -1 (all bits clear).
  explicit BitTensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    if (shape_.empty()) throw std::invalid_argument("BitTensor: empty shape");
    if (shape_.size() == 1) {
      rows_ = 1;
      row_bits_ = shape_[0];
    } else {
      rows_ = shape_[0];
      row_bits_ = std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1},
                                  std::multiplies<>());
    }
    words_per_row_ = words_for(row_bits_);
    words_.assign(rows_ * words_per_row_, 0);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return rows_ * row_bits_; }
  std::size_t rows() const { return rows_; }
  std::size_t row_bits() const { return row_bits_; }
  std::size_t words_per_row() const { return words_per_row_; }
  /// Number of meaningful bits in the final word of each row (1..64).
  std::size_t valid_bits_in_last_word() const {
    const std::size_t r = row_bits_ % kWordBits;
    return r == 0 ? (row_bits_ == 0 ? 0 : kWordBits) : r;
  }

  bool get(std::size_t row, std::size_t col) const {
    return (words_[row * words_per_row_ + col / kWordBits] >> (col % kWordBits)) & 1U;
  }
  void set(std::size_t row, std::size_t col, bool plus_one) {
    Word& w = words_[row * words_per_row_ + col / kWordBits];
    const Word bit = Word{1} << (col % kWordBits);
    w = plus_one ? (w | bit) : (w & ~bit);
  }
  bool get(std::size_t flat) const { return get(flat / row_bits_, flat % row_bits_); }
  void set(std::size_t flat, bool plus_one) { set(flat / row_bits_, flat % row_bits_, plus_one); }

  std::span<const Word> row(std::size_t r) const {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<Word> row(std::size_t r) { return {words_.data() + r * words_per_row_, words_per_row_}; }
  std::span<const Word> packed_words() const { return words_; }

  /// True when every padding bit is zero.
  bool padding_clear() const {
    if (row_bits_ % kWordBits == 0) return true;
    const Word pad = ~low_mask(row_bits_ % kWordBits);
    for (std::size_t r = 0; r < rows_; ++r)
      if (words_[(r + 1) * words_per_row_ - 1] & pad) return false;
    return true;
  }

  friend bool operator==(const BitTensor&, const BitTensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::size_t rows_ = 0;
  std::size_t row_bits_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<Word> words_;
};

/// Per-output-channel weight scale and scalar activation scale.
struct ScaleFactors {
  std::vector<float> alpha;
  float beta = 1.0F;

  static ScaleFactors unit(std::size_t rows) { return {std::vector<float>(rows, 1.0F), 1.0F}; }

  void validate(std::size_t rows) const {
    if (alpha.size() != rows)
      throw std::invalid_argument("scale factors: alpha length " + std::to_string(alpha.size()) +
                                  " != output rows " + std::to_string(rows));
    for (float a : alpha)
      if (!(a >= 0.0F)) throw std::invalid_argument("scale factors: alpha must be >= 0");
    if (!(beta >= 0.0F)) throw std::invalid_argument("scale factors: beta must be >= 0");
  }
};

/// Packs `x` by sign; zero maps to +1.
template <class Real>
BitTensor sign_pack(std::span<const Real> x, std::vector<std::size_t> shape) {
  BitTensor out(std::move(shape));
  if (out.size() != x.size()) throw std::invalid_argument("sign_pack: shape does not match data length");
  const std::size_t rb = out.row_bits();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto words = out.row(r);
    const Real* src = x.data() + r * rb;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const std::size_t begin = w * kWordBits;
      const std::size_t end = std::min(rb, begin + kWordBits);
      Word acc = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const Real v = src[i];
        if (!std::isfinite(v)) throw std::domain_error("sign_pack: non-finite activation");
        acc |= Word{v >= Real(0)} << (i - begin);
      }
      words[w] = acc;
    }
  }
  return out;
}

template <class Real>
BitTensor sign_pack(const std::vector<Real>& x) {
  return sign_pack<Real>(std::span<const Real>(x), {x.size()});
}

/// Expands to +1/-1 values in row-major element order.
inline std::vector<float> unpack(const BitTensor& t) {
  std::vector<float> out(t.size());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.row_bits(); ++c)
      out[r * t.row_bits() + c] = t.get(r, c) ? 1.0F : -1.0F;
  return out;
}

/// Dot product of two packed ±1 rows of `n` valid bits: 2·popcount(XNOR) − n.
inline std::int64_t xnor_popcount_dot(std::span<const Word> a, std::span<const Word> b, std::size_t n) {
  const std::size_t full = n / kWordBits;
  std::int64_t p = 0;
  for (std::size_t w = 0; w < full; ++w) p += std::popcount(~(a[w] ^ b[w]));
  if (const std::size_t rem = n % kWordBits; rem != 0)
    p += std::popcount(~(a[full] ^ b[full]) & low_mask(rem));
  return 2 * p - static_cast<std::int64_t>(n);
}

/// Dot product of two rank-1 BitTensors.
inline std::int64_t xnor_popcount_dot(const BitTensor& a, const BitTensor& b) {
  if (a.rows() != 1 || b.rows() != 1) throw std::invalid_argument("xnor_popcount_dot: expected single rows");
  if (a.row_bits() != b.row_bits())
    throw std::invalid_argument("xnor_popcount_dot: length mismatch " + std::to_string(a.row_bits()) + " vs " +
                                std::to_string(b.row_bits()));
  return xnor_popcount_dot(a.row(0), b.row(0), a.row_bits());
}

/// Binary GEMM against a pre-transposed right operand: W is [M,K], At is [N,K].
/// Entry (i,j) = alpha[i]·beta·dot(W_i, At_j). Result is row-major [M,N].
inline std::vector<float> binary_gemm_nt(const BitTensor& w, const BitTensor& at, const ScaleFactors& s) {
  if (w.row_bits() != at.row_bits())
    throw std::invalid_argument("binary_gemm: inner dimensions disagree (" + std::to_string(w.row_bits()) + " vs " +
                                std::to_string(at.row_bits()) + ")");
  s.validate(w.rows());
  const std::size_t m = w.rows(), n = at.rows(), k = w.row_bits();
  std::vector<float> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto wi = w.row(i);
    const float scale = s.alpha[i] * s.beta;
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = scale * static_cast<float>(xnor_popcount_dot(wi, at.row(j), k));
  }
  return out;
}

/// Transposes a packed [K,N] matrix into [N,K].
inline BitTensor transpose(const BitTensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("transpose: expected a matrix");
  const std::size_t k = a.shape()[0], n = a.shape()[1];
  BitTensor t({n, k});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < n; ++c)
      if (a.get(r, c)) t.set(c, r, true);
  return t;
}

/// Binary GEMM: W is [M,K], A is [K,N].
inline std::vector<float> binary_gemm(const BitTensor& w, const BitTensor& a, const ScaleFactors& s) {
  if (w.shape().size() != 2 || a.shape().size() != 2) throw std::invalid_argument("binary_gemm: expected matrices");
  if (w.shape()[1] != a.shape()[0])
    throw std::invalid_argument("binary_gemm: dimension mismatch " + std::to_string(w.shape()[1]) + " vs " +
                                std::to_string(a.shape()[0]));
  return binary_gemm_nt(w, transpose(a), s);
}

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  const std::size_t extent = g.dilation * (kernel - 1) + 1;
  if (in + 2 * g.padding < extent)
    throw std::invalid_argument("conv: kernel extent " + std::to_string(extent) + " larger than padded input " +
                                std::to_string(in + 2 * g.padding));
  return (in + 2 * g.padding - extent) / g.stride + 1;
}

/// Binary 2-D convolution. W is [Cout,Cin,kh,kw], A is [Cin,H,W]; returns
/// row-major [Cout,H',W'].
///
/// Out-of-image taps are packed as -1 bits. For every output position that
/// touches padding, the contribution of those taps (−Σ w over padded taps) is
/// removed again, so results equal a zero-padded convolution of the ±1 tensor.
inline std::vector<float> binary_conv2d(const BitTensor& w, const BitTensor& a, const ScaleFactors& s,
                                        const ConvGeometry& g) {
  if (w.shape().size() != 4) throw std::invalid_argument("binary_conv2d: weights must be [Cout,Cin,kh,kw]");
  if (a.shape().size() != 3) throw std::invalid_argument("binary_conv2d: input must be [Cin,H,W]");
  const std::size_t cout = w.shape()[0], cin = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  const std::size_t ch = a.shape()[0], h = a.shape()[1], wd = a.shape()[2];
  if (ch != cin)
    throw std::invalid_argument("binary_conv2d: channel mismatch " + std::to_string(ch) + " vs " + std::to_string(cin));
  if (g.stride == 0 || g.dilation == 0) throw std::invalid_argument("binary_conv2d: stride and dilation must be >= 1");
  s.validate(cout);
  const std::size_t ho = conv_out_size(h, kh, g), wo = conv_out_size(wd, kw, g);
  const std::size_t k = cin * kh * kw, positions = ho * wo;

  // Unpack the input once; the patch loop then assembles whole words.
  std::vector<std::uint8_t> plus(cin * h * wd);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t i = 0; i < h * wd; ++i) plus[c * h * wd + i] = a.get(c, i) ? 1 : 0;

  BitTensor cols({positions, k});
  BitTensor pads({positions, k});
  std::vector<std::uint32_t> pad_count(positions, 0);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      const std::size_t p = oy * wo + ox;
      auto col_words = cols.row(p);
      auto pad_words = pads.row(p);
      Word cw = 0, pw = 0;
      std::size_t tap = 0, word = 0;
      std::uint32_t pad_taps = 0;
      auto emit = [&](bool is_plus, bool is_pad) {
        const Word bit = Word{1} << (tap % kWordBits);
        if (is_plus) cw |= bit;
        if (is_pad) pw |= bit;
        if (++tap % kWordBits == 0) {
          col_words[word] = cw;
          pad_words[word] = pw;
          cw = pw = 0;
          ++word;
        }
      };
      for (std::size_t c = 0; c < cin; ++c) {
        const std::uint8_t* plane = plus.data() + c * h * wd;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          const bool row_out = iy < 0 || iy >= static_cast<std::ptrdiff_t>(h);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (row_out || ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) {
              ++pad_taps;
              emit(false, true);
            } else {
              emit(plane[static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)] != 0, false);
            }
          }
        }
      }
      if (tap % kWordBits != 0) {
        col_words[word] = cw;
        pad_words[word] = pw;
      }
      pad_count[p] = pad_taps;
    }
  }

  std::vector<float> out(cout * positions);
  const std::size_t nw = w.words_per_row();
  for (std::size_t o = 0; o < cout; ++o) {
    const auto wo_row = w.row(o);
    const float scale = s.alpha[o] * s.beta;
    for (std::size_t p = 0; p < positions; ++p) {
      std::int64_t acc = xnor_popcount_dot(wo_row, cols.row(p), k);
      if (pad_count[p] != 0) {
        const auto pr = pads.row(p);
        std::int64_t plus = 0;
        for (std::size_t i = 0; i < nw; ++i) plus += std::popcount(wo_row[i] & pr[i]);
        acc += 2 * plus - static_cast<std::int64_t>(pad_count[p]);
      }
      out[o * positions + p] = scale * static_cast<float>(acc);
    }
  }
  return out;
}

/// XNOR-Net weight scale: mean |w| over each output row.
template <class Real>
std::vector<float> mean_abs_rows(std::span<const Real> w, std::size_t rows) {
  if (rows == 0 || w.size() % rows != 0) throw std::invalid_argument("mean_abs_rows: bad row count");
  const std::size_t n = w.size() / rows;
  std::vector<float> alpha(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(w[r * n + i]));
    alpha[r] = static_cast<float>(acc / static_cast<double>(n));
  }
  return alpha;
}

}  // namespace pathfinder::bitcore
