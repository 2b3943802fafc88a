#pragma once
// Differentiable operations over NCHW tensors.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "pathfinder/bitcore.hpp"
#include "pathfinder/gemm.hpp"
#include "pathfinder/tensor.hpp"

namespace pathfinder::ag {

namespace detail {

template <class Real>
Tensor<Real> make_output(Shape shape) {
  return shape_only_mode() ? Tensor<Real>::placeholder(std::move(shape)) : Tensor<Real>(std::move(shape));
}

/// Records `step` on the active tape when any input needs a gradient.
template <class Real, class Step>
void attach(Tensor<Real>& out, std::initializer_list<Tensor<Real>> inputs, Step&& step) {
  auto* tape = active_tape<Real>();
  if (tape == nullptr || !grad_enabled() || shape_only_mode()) return;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  tape->record(std::forward<Step>(step));
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                      to_string(b.shape()));
}

struct Dims4 {
  std::size_t n, c, h, w;
  std::size_t plane() const { return h * w; }
};

template <class Real>
Dims4 dims4(const Tensor<Real>& t, const char* op) {
  require(t.rank() == 4, std::string(op) + ": expected NCHW tensor, got " + to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

template <class Real>
void require_channel_vector(const Tensor<Real>& v, std::size_t c, const char* op) {
  require(v.numel() == c, std::string(op) + ": expected " + std::to_string(c) + " per-channel values, got " +
                              std::to_string(v.numel()));
}

/// col[(c,ky,kx), (oy,ox)] = x[c, oy*s + ky*d - p, ox*s + kx*d - p], zero outside.
template <class Real>
void im2col(const Real* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            const bitcore::ConvGeometry& g, std::size_t ho, std::size_t wo, Real* col) {
  const std::size_t p = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        Real* row = col + ((ci * kh + ky) * kw + kx) * p;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          Real* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + wo, Real(0));
            continue;
          }
          const Real* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? Real(0) : src[ix];
          }
        }
      }
}

/// Adjoint of im2col; accumulates into dx.
template <class Real>
void col2im(const Real* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            const bitcore::ConvGeometry& g, std::size_t ho, std::size_t wo, Real* dx) {
  const std::size_t p = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const Real* row = col + ((ci * kh + ky) * kw + kx) * p;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          Real* dst = dx + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += row[oy * wo + ox];
          }
        }
      }
}

template <class Real>
Real sign_value(Real x) {
  return x >= Real(0) ? Real(1) : Real(-1);
}

template <class Real>
Real ste_pass(Real x) {
  return std::abs(x) < Real(1) ? Real(1) : Real(0);
}

}  // namespace detail

using bitcore::ConvGeometry;

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = detail::make_output<Real>(a.shape());
  count_op("add", 0, a.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  detail::attach(out, {a, b}, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = detail::make_output<Real>(a.shape());
  count_op("sub", 0, a.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  detail::attach(out, {a, b}, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = detail::make_output<Real>(a.shape());
  count_op("mul", 0, a.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  detail::attach(out, {a, b}, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  auto out = detail::make_output<Real>(a.shape());
  count_op("scale", 0, a.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
  detail::attach(out, {a}, [a, out, s]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
  return out;
}

/// Mean of same-shaped tensors.
template <class Real>
Tensor<Real> mean_of(const std::vector<Tensor<Real>>& xs) {
  detail::require(!xs.empty(), "mean_of: no inputs");
  for (const auto& x : xs) detail::require_same_shape(xs.front(), x, "mean_of");
  auto out = detail::make_output<Real>(xs.front().shape());
  count_op("mean", 0, xs.front().numel() * xs.size());
  if (out.is_placeholder()) return out;
  const Real inv = Real(1) / static_cast<Real>(xs.size());
  auto o = out.data();
  for (const auto& x : xs) {
    auto v = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
  }
  for (auto& v : o) v *= inv;
  auto* tape = active_tape<Real>();
  bool any = false;
  for (const auto& x : xs) any = any || x.requires_grad();
  if (tape && grad_enabled() && any) {
    out.set_requires_grad(true);
    tape->record([xs, out, inv]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (auto& x : xs) {
        if (!x.requires_grad()) continue;
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += inv * g[i];
      }
    });
  }
  return out;
}

/// y = x + sign·b[c] for per-channel b.
template <class Real>
Tensor<Real> add_channel(const Tensor<Real>& x, const Tensor<Real>& b, Real sign = Real(1)) {
  const auto d = detail::dims4(x, "add_channel");
  detail::require_channel_vector(b, d.c, "add_channel");
  auto out = detail::make_output<Real>(x.shape());
  count_op("bias", 0, x.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto xv = x.data(), bv = b.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) o[base + i] = xv[base + i] + sign * bv[c];
    }
  detail::attach(out, {x, b}, [x, b, out, d, sign]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    if (x.requires_grad()) {
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t base = (n * d.c + c) * d.plane();
          Real acc = 0;
          for (std::size_t i = 0; i < d.plane(); ++i) acc += g[base + i];
          gb[c] += sign * acc;
        }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  auto out = detail::make_output<Real>(x.shape());
  count_op("sigmoid", 0, 4 * x.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = Real(1) / (Real(1) + std::exp(-xv[i]));
  detail::attach(out, {x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto y = out.data();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (Real(1) - y[i]);
  });
  return out;
}

/// sign with the straight-through estimator: forward emits ±1 (sign(0) = +1),
/// backward passes the upstream gradient where |x| < 1 and blocks it elsewhere.
template <class Real>
Tensor<Real> sign_ste(const Tensor<Real>& x) {
  auto out = detail::make_output<Real>(x.shape());
  count_op("sign", 0, 0);
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::sign_value(xv[i]);
  detail::attach(out, {x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto xv = x.data();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * detail::ste_pass(xv[i]);
  });
  return out;
}

/// RPReLU: y = PReLU(x − shift_in; slope) + shift_out, all per channel.
template <class Real>
Tensor<Real> rprelu(const Tensor<Real>& x, const Tensor<Real>& shift_in, const Tensor<Real>& slope,
                    const Tensor<Real>& shift_out) {
  const auto d = detail::dims4(x, "rprelu");
  detail::require_channel_vector(shift_in, d.c, "rprelu");
  detail::require_channel_vector(slope, d.c, "rprelu");
  detail::require_channel_vector(shift_out, d.c, "rprelu");
  auto out = detail::make_output<Real>(x.shape());
  count_op("rprelu", 0, 3 * x.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto xv = x.data();
  auto si = shift_in.data(), sl = slope.data(), so = shift_out.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        const Real z = xv[base + i] - si[c];
        o[base + i] = (z > Real(0) ? z : sl[c] * z) + so[c];
      }
    }
  detail::attach(out, {x, shift_in, slope, shift_out}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto xv = x.data();
    auto si = shift_in.data(), sl = slope.data();
    std::span<Real> gx;
    if (x.requires_grad()) gx = x.grad_buffer();
    std::vector<Real> g_si(d.c, 0), g_sl(d.c, 0), g_so(d.c, 0);
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) {
          const Real z = xv[base + i] - si[c];
          const Real gi = g[base + i];
          const Real dz = z > Real(0) ? gi : sl[c] * gi;
          if (!gx.empty()) gx[base + i] += dz;
          g_si[c] -= dz;
          if (z <= Real(0)) g_sl[c] += gi * z;
          g_so[c] += gi;
        }
      }
    auto acc = [](const Tensor<Real>& t, const std::vector<Real>& v) {
      if (!t.requires_grad()) return;
      auto gt = t.grad_buffer();
      for (std::size_t c = 0; c < v.size(); ++c) gt[c] += v[c];
    };
    acc(shift_in, g_si);
    acc(slope, g_sl);
    acc(shift_out, g_so);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

inline std::size_t conv_out(std::size_t in, std::size_t k, const ConvGeometry& g) {
  return bitcore::conv_out_size(in, k, g);
}

/// Full-precision convolution, optional per-output-channel bias.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const ConvGeometry& g,
                    const Tensor<Real>* bias = nullptr) {
  const auto d = detail::dims4(x, "conv2d");
  detail::require(w.rank() == 4, "conv2d: weights must be [Cout,Cin,kh,kw]");
  const std::size_t cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  detail::require(cin == d.c, "conv2d: input has " + std::to_string(d.c) + " channels, weights expect " +
                                  std::to_string(cin));
  const std::size_t ho = conv_out(d.h, kh, g), wo = conv_out(d.w, kw, g);
  const std::size_t k = cin * kh * kw, p = ho * wo;
  auto out = detail::make_output<Real>({d.n, cout, ho, wo});
  count_op("conv", 0, 2 * d.n * cout * k * p + (bias ? d.n * cout * p : 0));
  if (out.is_placeholder()) return out;

  auto cols = std::make_shared<std::vector<Real>>(d.n * k * p);
  auto o = out.data();
  auto xv = x.data();
  auto wv = w.data();
  for (std::size_t n = 0; n < d.n; ++n) {
    Real* col = cols->data() + n * k * p;
    detail::im2col(xv.data() + n * d.c * d.plane(), d.c, d.h, d.w, kh, kw, g, ho, wo, col);
    gemm::gemm_nn(cout, p, k, wv.data(), col, o.data() + n * cout * p);
    if (bias) {
      auto bv = bias->data();
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t i = 0; i < p; ++i) o[n * cout * p + c * p + i] += bv[c];
    }
  }
  Tensor<Real> b = bias ? *bias : Tensor<Real>();
  if (bias) {
    detail::attach(out, {x, w, b}, [=]() mutable {
      if (!out.has_grad()) return;
      auto gb = b.grad_buffer();
      auto go = out.grad();
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < cout; ++c)
          for (std::size_t i = 0; i < p; ++i) gb[c] += go[n * cout * p + c * p + i];
    });
  }
  detail::attach(out, {x, w}, [=]() mutable {
    if (!out.has_grad()) return;
    auto go = out.grad();
    std::vector<Real> dcol(k * p);
    for (std::size_t n = 0; n < d.n; ++n) {
      const Real* gn = go.data() + n * cout * p;
      if (w.requires_grad()) gemm::gemm_nt(cout, k, p, gn, cols->data() + n * k * p, w.grad_buffer().data(), true);
      if (x.requires_grad()) {
        gemm::gemm_tn(k, p, cout, w.data().data(), gn, dcol.data());
        detail::col2im(dcol.data(), d.c, d.h, d.w, kh, kw, g, ho, wo, x.grad_buffer().data() + n * d.c * d.plane());
      }
    }
  });
  return out;
}

/// Binary convolution of sign(x) with α·sign(w), α = per-output-channel mean |w|.
///
/// Forward runs the packed XNOR/PopCount kernel. Backward uses the
/// straight-through estimator for both the activation and weight signs, and
/// differentiates α with respect to the latent weights.
template <class Real>
Tensor<Real> binary_conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const ConvGeometry& g) {
  const auto d = detail::dims4(x, "binary_conv2d");
  detail::require(w.rank() == 4, "binary_conv2d: weights must be [Cout,Cin,kh,kw]");
  const std::size_t cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  detail::require(cin == d.c, "binary_conv2d: input has " + std::to_string(d.c) + " channels, weights expect " +
                                  std::to_string(cin));
  const std::size_t ho = conv_out(d.h, kh, g), wo = conv_out(d.w, kw, g);
  const std::size_t k = cin * kh * kw, p = ho * wo;
  auto out = detail::make_output<Real>({d.n, cout, ho, wo});
  count_op("binary_conv", 2 * d.n * cout * k * p, 0);
  if (out.is_placeholder()) return out;

  auto wv = w.data();
  const auto alpha = bitcore::mean_abs_rows<Real>(wv, cout);
  const auto wbits = bitcore::sign_pack<Real>(wv, {cout, cin, kh, kw});
  const bitcore::ScaleFactors scales{alpha, 1.0F};
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t n = 0; n < d.n; ++n) {
    const auto abits = bitcore::sign_pack<Real>(xv.subspan(n * d.c * d.plane(), d.c * d.plane()), {d.c, d.h, d.w});
    const auto res = bitcore::binary_conv2d(wbits, abits, scales, g);
    std::copy(res.begin(), res.end(), o.begin() + static_cast<std::ptrdiff_t>(n * cout * p));
  }

  detail::attach(out, {x, w}, [=]() mutable {
    if (!out.has_grad()) return;
    auto go = out.grad();
    auto wv = w.data();
    auto xv = x.data();
    std::vector<Real> w_eff(wv.size());
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < k; ++i) w_eff[o * k + i] = static_cast<Real>(alpha[o]) * detail::sign_value(wv[o * k + i]);
    std::vector<Real> xs(d.c * d.plane()), col(k * p), dcol(k * p), dx(d.c * d.plane());
    std::vector<Real> dw_eff(cout * k, Real(0));
    for (std::size_t n = 0; n < d.n; ++n) {
      const Real* xn = xv.data() + n * d.c * d.plane();
      for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = detail::sign_value(xn[i]);
      detail::im2col(xs.data(), d.c, d.h, d.w, kh, kw, g, ho, wo, col.data());
      const Real* gn = go.data() + n * cout * p;
      if (w.requires_grad()) gemm::gemm_nt(cout, k, p, gn, col.data(), dw_eff.data(), true);
      if (x.requires_grad()) {
        gemm::gemm_tn(k, p, cout, w_eff.data(), gn, dcol.data());
        std::fill(dx.begin(), dx.end(), Real(0));
        detail::col2im(dcol.data(), d.c, d.h, d.w, kh, kw, g, ho, wo, dx.data());
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) gx[n * d.c * d.plane() + i] += dx[i] * detail::ste_pass(xn[i]);
      }
    }
    if (w.requires_grad()) {
      auto gw = w.grad_buffer();
      for (std::size_t o = 0; o < cout; ++o) {
        Real through_alpha = 0;
        for (std::size_t i = 0; i < k; ++i) through_alpha += dw_eff[o * k + i] * detail::sign_value(wv[o * k + i]);
        through_alpha /= static_cast<Real>(k);
        for (std::size_t i = 0; i < k; ++i) {
          const Real wi = wv[o * k + i];
          const Real abs_grad = wi > Real(0) ? Real(1) : (wi < Real(0) ? Real(-1) : Real(0));
          gw[o * k + i] += dw_eff[o * k + i] * static_cast<Real>(alpha[o]) * detail::ste_pass(wi) + through_alpha * abs_grad;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

template <class Real>
struct BnState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);

  BnState() = default;
  explicit BnState(std::size_t channels) : running_mean(channels, Real(0)), running_var(channels, Real(1)) {}
};

/// Per-channel batch normalization over (N,H,W). Training mode normalizes with
/// batch statistics and updates the running estimates; eval mode uses them.
template <class Real>
Tensor<Real> batch_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        BnState<Real>& state, bool training) {
  const auto d = detail::dims4(x, "batch_norm");
  detail::require_channel_vector(gamma, d.c, "batch_norm");
  detail::require_channel_vector(beta, d.c, "batch_norm");
  detail::require(state.running_mean.size() == d.c, "batch_norm: running stats have wrong channel count");
  auto out = detail::make_output<Real>(x.shape());
  count_op("batch_norm", 0, 2 * x.numel());
  if (out.is_placeholder()) return out;

  const std::size_t m = d.n * d.plane();
  std::vector<Real> mean(d.c), inv_std(d.c);
  auto xv = x.data();
  if (training) {
    for (std::size_t c = 0; c < d.c; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < d.plane(); ++i) s += xv[(n * d.c + c) * d.plane() + i];
      const double mu = s / static_cast<double>(m);
      double v = 0;
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < d.plane(); ++i) {
          const double t = xv[(n * d.c + c) * d.plane() + i] - mu;
          v += t * t;
        }
      v /= static_cast<double>(m);
      mean[c] = static_cast<Real>(mu);
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(v + static_cast<double>(state.eps)));
      const double unbiased = m > 1 ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
      state.running_mean[c] = (Real(1) - state.momentum) * state.running_mean[c] + state.momentum * static_cast<Real>(mu);
      state.running_var[c] =
          (Real(1) - state.momentum) * state.running_var[c] + state.momentum * static_cast<Real>(unbiased);
    }
  } else {
    for (std::size_t c = 0; c < d.c; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = Real(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  auto o = out.data();
  auto gm = gamma.data(), bt = beta.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) o[base + i] = gm[c] * (xv[base + i] - mean[c]) * inv_std[c] + bt[c];
    }

  detail::attach(out, {x, gamma, beta}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto xv = x.data();
    auto gm = gamma.data();
    std::vector<Real> sum_g(d.c, 0), sum_gx(d.c, 0);
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) {
          const Real xh = (xv[base + i] - mean[c]) * inv_std[c];
          sum_g[c] += g[base + i];
          sum_gx[c] += g[base + i] * xh;
        }
      }
    if (gamma.requires_grad()) {
      auto gg = gamma.grad_buffer();
      for (std::size_t c = 0; c < d.c; ++c) gg[c] += sum_gx[c];
    }
    if (beta.requires_grad()) {
      auto gb = beta.grad_buffer();
      for (std::size_t c = 0; c < d.c; ++c) gb[c] += sum_g[c];
    }
    if (!x.requires_grad()) return;
    auto gx = x.grad_buffer();
    const Real inv_m = Real(1) / static_cast<Real>(m);
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * d.plane();
        const Real k = gm[c] * inv_std[c];
        for (std::size_t i = 0; i < d.plane(); ++i) {
          if (training) {
            const Real xh = (xv[base + i] - mean[c]) * inv_std[c];
            gx[base + i] += k * (g[base + i] - sum_g[c] * inv_m - xh * sum_gx[c] * inv_m);
          } else {
            gx[base + i] += k * g[base + i];
          }
        }
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Layout

template <class Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  const auto da = detail::dims4(a, "concat_channels");
  const auto db = detail::dims4(b, "concat_channels");
  detail::require(da.n == db.n && da.h == db.h && da.w == db.w,
                  "concat_channels: spatial/batch mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t c = da.c + db.c, plane = da.plane();
  auto out = detail::make_output<Real>({da.n, c, da.h, da.w});
  count_op("concat", 0, 0);
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto av = a.data(), bv = b.data();
  for (std::size_t n = 0; n < da.n; ++n) {
    std::copy_n(av.begin() + n * da.c * plane, da.c * plane, o.begin() + n * c * plane);
    std::copy_n(bv.begin() + n * db.c * plane, db.c * plane, o.begin() + (n * c + da.c) * plane);
  }
  detail::attach(out, {a, b}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    for (std::size_t n = 0; n < da.n; ++n) {
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < da.c * plane; ++i) ga[n * da.c * plane + i] += g[n * c * plane + i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < db.c * plane; ++i) gb[n * db.c * plane + i] += g[(n * c + da.c) * plane + i];
      }
    }
  });
  return out;
}

/// 2×2 average pooling, stride 2. Odd trailing rows/columns are dropped.
template <class Real>
Tensor<Real> avg_pool2(const Tensor<Real>& x) {
  const auto d = detail::dims4(x, "avg_pool2");
  detail::require(d.h >= 2 && d.w >= 2, "avg_pool2: input smaller than 2x2");
  const std::size_t ho = d.h / 2, wo = d.w / 2;
  auto out = detail::make_output<Real>({d.n, d.c, ho, wo});
  count_op("avg_pool", 0, 4 * d.n * d.c * ho * wo);
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const Real* src = xv.data() + nc * d.plane() + 2 * y * d.w + 2 * xx;
        o[nc * ho * wo + y * wo + xx] = Real(0.25) * (src[0] + src[1] + src[d.w] + src[d.w + 1]);
      }
  detail::attach(out, {x}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const Real v = Real(0.25) * g[nc * ho * wo + y * wo + xx];
          Real* dst = gx.data() + nc * d.plane() + 2 * y * d.w + 2 * xx;
          dst[0] += v;
          dst[1] += v;
          dst[d.w] += v;
          dst[d.w + 1] += v;
        }
  });
  return out;
}

namespace detail {
/// Index map shared by pixel_shuffle and its inverse: (n, c·r²+i·r+j, y, x) ↔ (n, c, y·r+i, x·r+j).
inline std::vector<std::size_t> shuffle_map(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t r) {
  std::vector<std::size_t> map(n * c * r * r * h * w);
  const std::size_t H = h * r, W = w * r;
  std::size_t src = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t cc = 0; cc < c * r * r; ++cc) {
      const std::size_t oc = cc / (r * r), i = (cc / r) % r, j = cc % r;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x, ++src) map[src] = ((b * c + oc) * H + y * r + i) * W + x * r + j;
    }
  return map;
}
}  // namespace detail

/// [N, C·r², H, W] → [N, C, rH, rW]; a pure rearrangement.
template <class Real>
Tensor<Real> pixel_shuffle(const Tensor<Real>& x, std::size_t r) {
  const auto d = detail::dims4(x, "pixel_shuffle");
  detail::require(r >= 1 && d.c % (r * r) == 0,
                  "pixel_shuffle: channel count " + std::to_string(d.c) + " not divisible by r^2 = " + std::to_string(r * r));
  const std::size_t c = d.c / (r * r);
  auto out = detail::make_output<Real>({d.n, c, d.h * r, d.w * r});
  count_op("pixel_shuffle", 0, 0);
  if (out.is_placeholder()) return out;
  const auto map = std::make_shared<std::vector<std::size_t>>(detail::shuffle_map(d.n, c, d.h, d.w, r));
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < map->size(); ++i) o[(*map)[i]] = xv[i];
  detail::attach(out, {x}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < map->size(); ++i) gx[i] += g[(*map)[i]];
  });
  return out;
}

/// [N, C, rH, rW] → [N, C·r², H, W]; inverse of pixel_shuffle.
template <class Real>
Tensor<Real> pixel_unshuffle(const Tensor<Real>& x, std::size_t r) {
  const auto d = detail::dims4(x, "pixel_unshuffle");
  detail::require(r >= 1 && d.h % r == 0 && d.w % r == 0, "pixel_unshuffle: spatial size not divisible by r");
  const std::size_t h = d.h / r, w = d.w / r;
  auto out = detail::make_output<Real>({d.n, d.c * r * r, h, w});
  count_op("pixel_unshuffle", 0, 0);
  if (out.is_placeholder()) return out;
  const auto map = std::make_shared<std::vector<std::size_t>>(detail::shuffle_map(d.n, d.c, h, w, r));
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < map->size(); ++i) o[i] = xv[(*map)[i]];
  detail::attach(out, {x}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += g[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and attention

/// Softmax over the channel dimension of an NCHW tensor.
template <class Real>
Tensor<Real> softmax_channels(const Tensor<Real>& x) {
  const auto d = detail::dims4(x, "softmax_channels");
  auto out = detail::make_output<Real>(x.shape());
  count_op("softmax", 0, 3 * x.numel());
  if (out.is_placeholder()) return out;
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.plane(); ++i) {
      const std::size_t base = n * d.c * d.plane() + i;
      Real mx = xv[base];
      for (std::size_t c = 1; c < d.c; ++c) mx = std::max(mx, xv[base + c * d.plane()]);
      Real s = 0;
      for (std::size_t c = 0; c < d.c; ++c) s += (o[base + c * d.plane()] = std::exp(xv[base + c * d.plane()] - mx));
      for (std::size_t c = 0; c < d.c; ++c) o[base + c * d.plane()] /= s;
    }
  detail::attach(out, {x}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto y = out.data();
    auto gx = x.grad_buffer();
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t i = 0; i < d.plane(); ++i) {
        const std::size_t base = n * d.c * d.plane() + i;
        Real dot = 0;
        for (std::size_t c = 0; c < d.c; ++c) dot += g[base + c * d.plane()] * y[base + c * d.plane()];
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t j = base + c * d.plane();
          gx[j] += y[j] * (g[j] - dot);
        }
      }
  });
  return out;
}

/// Multi-head self-attention over the H·W tokens of [N,D,H,W] projections.
///
/// With `binarize`, scores are XNOR/PopCount products of sign(q) and sign(k)
/// (STE backward); softmax, score scaling, and the value mixing stay full
/// precision.
template <class Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v, std::size_t heads,
                       bool binarize) {
  const auto d = detail::dims4(q, "attention");
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  detail::require(heads >= 1 && d.c % heads == 0, "attention: dimension " + std::to_string(d.c) +
                                                      " not divisible by head count " + std::to_string(heads));
  const std::size_t t = d.plane(), dh = d.c / heads;
  auto out = detail::make_output<Real>(q.shape());
  const std::uint64_t score_ops = 2ULL * d.n * heads * t * t * dh;
  count_op("attention", binarize ? score_ops : 0,
           (binarize ? 0 : score_ops) + 4ULL * d.n * heads * t * t + 2ULL * d.n * heads * t * t * dh);
  if (out.is_placeholder()) return out;

  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  auto probs = std::make_shared<std::vector<Real>>(d.n * heads * t * t);
  auto qv = q.data(), kv = k.data(), vv = v.data();
  auto o = out.data();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = (n * d.c + h * dh) * t;
      Real* a = probs->data() + (n * heads + h) * t * t;
      if (binarize) {
        bitcore::BitTensor qb({t, dh}), kb({t, dh});
        for (std::size_t kk = 0; kk < dh; ++kk)
          for (std::size_t s = 0; s < t; ++s) {
            qb.set(s, kk, qv[off + kk * t + s] >= Real(0));
            kb.set(s, kk, kv[off + kk * t + s] >= Real(0));
          }
        const auto scores = bitcore::binary_gemm_nt(qb, kb, bitcore::ScaleFactors::unit(t));
        for (std::size_t i = 0; i < t * t; ++i) a[i] = static_cast<Real>(scores[i]) * inv_sqrt;
      } else {
        gemm::gemm_tn(t, t, dh, qv.data() + off, kv.data() + off, a);
        for (std::size_t i = 0; i < t * t; ++i) a[i] *= inv_sqrt;
      }
      for (std::size_t r = 0; r < t; ++r) {
        Real* row = a + r * t;
        const Real mx = *std::max_element(row, row + t);
        Real s = 0;
        for (std::size_t c = 0; c < t; ++c) s += (row[c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < t; ++c) row[c] /= s;
      }
      gemm::gemm_nt(dh, t, t, vv.data() + off, a, o.data() + off);
    }

  detail::attach(out, {q, k, v}, [=]() mutable {
    if (!out.has_grad()) return;
    auto g = out.grad();
    auto qv = q.data(), kv = k.data(), vv = v.data();
    std::vector<Real> da(t * t), qe(dh * t), ke(dh * t), dq(dh * t), dk(dh * t);
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = (n * d.c + h * dh) * t;
        const Real* a = probs->data() + (n * heads + h) * t * t;
        const Real* gh = g.data() + off;
        if (v.requires_grad()) gemm::gemm_nn(dh, t, t, gh, a, v.grad_buffer().data() + off, true);
        if (!q.requires_grad() && !k.requires_grad()) continue;
        gemm::gemm_tn(t, t, dh, gh, vv.data() + off, da.data());
        for (std::size_t r = 0; r < t; ++r) {
          Real dot = 0;
          for (std::size_t c = 0; c < t; ++c) dot += a[r * t + c] * da[r * t + c];
          for (std::size_t c = 0; c < t; ++c) da[r * t + c] = a[r * t + c] * (da[r * t + c] - dot) * inv_sqrt;
        }
        for (std::size_t i = 0; i < dh * t; ++i) {
          qe[i] = binarize ? detail::sign_value(qv[off + i]) : qv[off + i];
          ke[i] = binarize ? detail::sign_value(kv[off + i]) : kv[off + i];
        }
        if (q.requires_grad()) {
          gemm::gemm_nt(dh, t, t, ke.data(), da.data(), dq.data());
          auto gq = q.grad_buffer();
          for (std::size_t i = 0; i < dh * t; ++i)
            gq[off + i] += dq[i] * (binarize ? detail::ste_pass(qv[off + i]) : Real(1));
        }
        if (k.requires_grad()) {
          gemm::gemm_nn(dh, t, t, qe.data(), da.data(), dk.data());
          auto gk = k.grad_buffer();
          for (std::size_t i = 0; i < dh * t; ++i)
            gk[off + i] += dk[i] * (binarize ? detail::ste_pass(kv[off + i]) : Real(1));
        }
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  auto out = detail::make_output<Real>({1});
  count_op("sum", 0, x.numel());
  if (out.is_placeholder()) return out;
  Real s = 0;
  for (Real v : x.data()) s += v;
  out.data()[0] = s;
  detail::attach(out, {x}, [x, out]() mutable {
    if (!out.has_grad()) return;
    const Real g = out.grad()[0];
    for (auto& gx : x.grad_buffer()) gx += g;
  });
  return out;
}

/// Sum of scalar tensors.
template <class Real>
Tensor<Real> add_scalars(const std::vector<Tensor<Real>>& xs) {
  detail::require(!xs.empty(), "add_scalars: no inputs");
  Tensor<Real> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

}  // namespace pathfinder::ag
