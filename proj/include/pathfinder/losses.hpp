#pragma once
// Segmentation losses over per-pixel class probabilities.
//
// Every loss takes probabilities [N,C,H,W] (normally softmax_channels output)
// and a label map of N·H·W class ids, where kIgnoreLabel marks unsupervised
// pixels. Losses return scalar tensors whose backward writes d(loss)/d(probs).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathfinder/ops.hpp"

namespace pathfinder::losses {

using ag::Tensor;

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr double kProbEps = 1e-7;

namespace detail {

template <class Real>
ag::detail::Dims4 check_probs(const Tensor<Real>& probs, std::span<const std::uint8_t> labels, const char* op) {
  const auto d = ag::detail::dims4(probs, op);
  if (labels.size() != d.n * d.plane())
    throw std::invalid_argument(std::string(op) + ": label map holds " + std::to_string(labels.size()) +
                                " entries, expected " + std::to_string(d.n * d.plane()));
  for (auto l : labels)
    if (l != kIgnoreLabel && l >= d.c)
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(l) + " outside " +
                                  std::to_string(d.c) + " classes");
  return d;
}

inline double clamp_prob(double p) { return std::max(p, kProbEps); }

/// Value and derivative of −(1−p)^γ·log p with p clamped away from zero.
struct FocalTerm {
  double value;
  double dp;
};

inline FocalTerm focal_term(double p_raw, double gamma) {
  const double p = clamp_prob(p_raw);
  const double q = std::max(0.0, 1.0 - p);
  const double lg = std::log(p);
  const double qg = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
  double dp = -qg / p;
  if (gamma != 0.0 && q > 0.0) dp += gamma * std::pow(q, gamma - 1.0) * lg;
  if (p_raw < kProbEps) dp = 0.0;
  return {-qg * lg, dp};
}

template <class Real>
Tensor<Real> scalar_output(double value) {
  return Tensor<Real>::from({1}, {static_cast<Real>(value)});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Focal loss

/// Mean over non-ignored pixels of −(1−p_t)^γ·log p_t, p_t the probability of
/// the true class. γ = 0 gives cross-entropy.
template <class Real>
Tensor<Real> focal_loss(const Tensor<Real>& probs, std::span<const std::uint8_t> labels, double gamma = 2.0) {
  const auto d = detail::check_probs(probs, labels, "focal_loss");
  auto pv = probs.data();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.plane(); ++i) {
      const auto l = labels[n * d.plane() + i];
      if (l == kIgnoreLabel) continue;
      total += detail::focal_term(pv[(n * d.c + l) * d.plane() + i], gamma).value;
      ++count;
    }
  auto out = detail::scalar_output<Real>(count ? total / static_cast<double>(count) : 0.0);
  if (count == 0) return out;
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  ag::detail::attach(out, {probs}, [probs, out, lab = std::move(lab), d, gamma, count]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] / static_cast<double>(count);
    auto pv = probs.data();
    auto gp = probs.grad_buffer();
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t i = 0; i < d.plane(); ++i) {
        const auto l = lab[n * d.plane() + i];
        if (l == kIgnoreLabel) continue;
        const std::size_t j = (n * d.c + l) * d.plane() + i;
        gp[j] += static_cast<Real>(g * detail::focal_term(pv[j], gamma).dp);
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Variant focal loss with an annealed class weight and focusing exponent

/// Epoch schedule of the variant focal loss:
///   â^c = a0^c                                   for ep ≤ ep_t/10
///   â^c = a0^c − (a0^c−1)(10·ep−ep_t)/(ep_t(λ−1)+ε)  for ep_t/10 < ep ≤ ep_t·λ/10
///   â^c = 1                                      otherwise
///   δ̂  = 2 for ep ≤ ep_t/10, else 0
struct VariantFocalSchedule {
  std::vector<double> a0;  // per class, N_total / N_c
  double lambda = 2.0;
  double epsilon = 1e-8;
  double epoch_total = 100.0;

  /// a0^c = N_total/N_c from per-class pixel counts; absent classes get 1.
  static VariantFocalSchedule from_counts(std::span<const std::uint64_t> counts, double epoch_total, double lambda = 2.0) {
    VariantFocalSchedule s;
    s.lambda = lambda;
    s.epoch_total = epoch_total;
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}));
    for (auto c : counts) s.a0.push_back(c == 0 ? 1.0 : total / static_cast<double>(c));
    return s;
  }

  double a_hat(std::size_t c, double ep) const {
    const double a = a0.at(c);
    if (ep <= epoch_total / 10.0) return a;
    if (ep <= epoch_total * lambda / 10.0)
      return a - (a - 1.0) * (10.0 * ep - epoch_total) / (epoch_total * (lambda - 1.0) + epsilon);
    return 1.0;
  }

  double delta_hat(double ep) const { return ep <= epoch_total / 10.0 ? 2.0 : 0.0; }
};

/// (1/(N·C·H·W)) Σ f_mask · â^c · (−(1−p_c)^δ̂ log p_c) using each pixel's
/// true class c. `mask` holds N·H·W entries, 1 where the point cloud has data.
template <class Real>
Tensor<Real> variant_focal_loss(const Tensor<Real>& probs, std::span<const std::uint8_t> labels,
                                std::span<const std::uint8_t> mask, const VariantFocalSchedule& schedule, double epoch) {
  const auto d = detail::check_probs(probs, labels, "variant_focal_loss");
  if (mask.size() != labels.size()) throw std::invalid_argument("variant_focal_loss: mask and label sizes differ");
  if (schedule.a0.size() != d.c)
    throw std::invalid_argument("variant_focal_loss: schedule has " + std::to_string(schedule.a0.size()) +
                                " class weights for " + std::to_string(d.c) + " classes");
  const double delta = schedule.delta_hat(epoch);
  std::vector<double> a(d.c);
  for (std::size_t c = 0; c < d.c; ++c) a[c] = schedule.a_hat(c, epoch);
  const double norm = static_cast<double>(d.n * d.c * d.plane());
  auto pv = probs.data();
  double total = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto l = labels[j];
    if (l == kIgnoreLabel || mask[j] == 0) continue;
    const std::size_t n = j / d.plane(), i = j % d.plane();
    total += a[l] * detail::focal_term(pv[(n * d.c + l) * d.plane() + i], delta).value;
  }
  auto out = detail::scalar_output<Real>(total / norm);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end()), msk(mask.begin(), mask.end());
  ag::detail::attach(out, {probs}, [=]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] / norm;
    auto pv = probs.data();
    auto gp = probs.grad_buffer();
    for (std::size_t j = 0; j < lab.size(); ++j) {
      const auto l = lab[j];
      if (l == kIgnoreLabel || msk[j] == 0) continue;
      const std::size_t n = j / d.plane(), i = j % d.plane();
      const std::size_t k = (n * d.c + l) * d.plane() + i;
      gp[k] += static_cast<Real>(g * a[l] * detail::focal_term(pv[k], delta).dp);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Lovász-softmax

namespace detail {

/// Gradient of the Lovász extension of the Jaccard loss at ground truth
/// sorted by decreasing error.
inline std::vector<double> lovasz_grad(const std::vector<std::uint8_t>& gt_sorted) {
  const std::size_t p = gt_sorted.size();
  const double gts = static_cast<double>(std::count(gt_sorted.begin(), gt_sorted.end(), 1));
  std::vector<double> jac(p);
  double cum_fg = 0, cum_bg = 0;
  for (std::size_t i = 0; i < p; ++i) {
    cum_fg += gt_sorted[i];
    cum_bg += 1 - gt_sorted[i];
    jac[i] = 1.0 - (gts - cum_fg) / (gts + cum_bg);
  }
  for (std::size_t i = p; i-- > 1;) jac[i] -= jac[i - 1];
  return jac;
}

/// Lovász extension for one class over the given pixel subset. Writes the
/// per-pixel derivative with respect to that class's probability into `dprob`.
inline double lovasz_class(const std::vector<double>& prob, const std::vector<std::uint8_t>& fg,
                           std::vector<double>* dprob) {
  const std::size_t p = prob.size();
  std::vector<double> err(p);
  for (std::size_t i = 0; i < p; ++i) err[i] = std::abs(static_cast<double>(fg[i]) - prob[i]);
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
  std::vector<std::uint8_t> gt_sorted(p);
  for (std::size_t i = 0; i < p; ++i) gt_sorted[i] = fg[order[i]];
  const auto grad = lovasz_grad(gt_sorted);
  double loss = 0;
  for (std::size_t r = 0; r < p; ++r) {
    const std::size_t i = order[r];
    loss += err[i] * grad[r];
    if (dprob) (*dprob)[i] = grad[r] * (fg[i] ? -1.0 : 1.0);
  }
  return loss;
}

}  // namespace detail

/// Lovász extension of the Jaccard loss for class `cls` alone, over all
/// non-ignored pixels of the batch. For hard 0/1 probabilities this equals
/// 1 − IoU of the class (0 when the class is absent from both maps).
template <class Real>
Tensor<Real> lovasz_class_loss(const Tensor<Real>& probs, std::span<const std::uint8_t> labels, std::size_t cls) {
  const auto d = detail::check_probs(probs, labels, "lovasz_class_loss");
  if (cls >= d.c) throw std::invalid_argument("lovasz_class_loss: class index out of range");
  std::vector<std::size_t> index;
  std::vector<double> prob;
  std::vector<std::uint8_t> fg;
  auto pv = probs.data();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == kIgnoreLabel) continue;
    const std::size_t n = j / d.plane(), i = j % d.plane();
    index.push_back((n * d.c + cls) * d.plane() + i);
    prob.push_back(pv[index.back()]);
    fg.push_back(labels[j] == cls ? 1 : 0);
  }
  std::vector<double> dprob(prob.size());
  auto out = detail::scalar_output<Real>(prob.empty() ? 0.0 : detail::lovasz_class(prob, fg, &dprob));
  ag::detail::attach(out, {probs}, [probs, out, index, dprob]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0];
    auto gp = probs.grad_buffer();
    for (std::size_t k = 0; k < index.size(); ++k) gp[index[k]] += static_cast<Real>(g * dprob[k]);
  });
  return out;
}

/// Lovász-softmax: mean over the classes present in the labels of the
/// per-class Lovász extension, pixels of the whole batch pooled together.
template <class Real>
Tensor<Real> lovasz_softmax(const Tensor<Real>& probs, std::span<const std::uint8_t> labels) {
  const auto d = detail::check_probs(probs, labels, "lovasz_softmax");
  std::vector<std::size_t> index;  // pixel offsets (n·C·HW + i) of non-ignored pixels
  std::vector<std::uint8_t> lab;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == kIgnoreLabel) continue;
    index.push_back((j / d.plane()) * d.c * d.plane() + j % d.plane());
    lab.push_back(labels[j]);
  }
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < d.c; ++c)
    if (std::find(lab.begin(), lab.end(), c) != lab.end()) present.push_back(c);
  if (present.empty()) return detail::scalar_output<Real>(0.0);

  auto pv = probs.data();
  auto dprob = std::make_shared<std::vector<double>>(present.size() * index.size());
  double total = 0;
  std::vector<double> prob(index.size()), dp(index.size());
  std::vector<std::uint8_t> fg(index.size());
  for (std::size_t k = 0; k < present.size(); ++k) {
    const std::size_t c = present[k];
    for (std::size_t i = 0; i < index.size(); ++i) {
      prob[i] = pv[index[i] + c * d.plane()];
      fg[i] = lab[i] == c ? 1 : 0;
    }
    total += detail::lovasz_class(prob, fg, &dp);
    std::copy(dp.begin(), dp.end(), dprob->begin() + static_cast<std::ptrdiff_t>(k * index.size()));
  }
  const double inv = 1.0 / static_cast<double>(present.size());
  auto out = detail::scalar_output<Real>(total * inv);
  ag::detail::attach(out, {probs}, [=]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] * inv;
    auto gp = probs.grad_buffer();
    for (std::size_t k = 0; k < present.size(); ++k)
      for (std::size_t i = 0; i < index.size(); ++i)
        gp[index[i] + present[k] * d.plane()] += static_cast<Real>(g * (*dprob)[k * index.size() + i]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Pixel interaction loss

/// (1/(N·H·W)) Σ (1 − f_mask) · KL(F_pcd ‖ F_img). F_img acts as a fixed soft
/// label: no gradient reaches it.
template <class Real>
Tensor<Real> pixel_interaction_loss(const Tensor<Real>& f_pcd, const Tensor<Real>& f_img,
                                    std::span<const std::uint8_t> mask) {
  const auto d = ag::detail::dims4(f_pcd, "pixel_interaction_loss");
  ag::detail::require_same_shape(f_pcd, f_img, "pixel_interaction_loss");
  if (mask.size() != d.n * d.plane()) throw std::invalid_argument("pixel_interaction_loss: mask size mismatch");
  const double norm = static_cast<double>(d.n * d.plane());
  auto p = f_pcd.data();
  auto q = f_img.data();
  double total = 0;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] != 0) continue;
    const std::size_t base = (j / d.plane()) * d.c * d.plane() + j % d.plane();
    for (std::size_t c = 0; c < d.c; ++c) {
      const double pc = detail::clamp_prob(p[base + c * d.plane()]);
      const double qc = detail::clamp_prob(q[base + c * d.plane()]);
      total += pc * std::log(pc / qc);
    }
  }
  auto out = detail::scalar_output<Real>(total / norm);
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  const Tensor<Real> soft = f_img.detach();
  ag::detail::attach(out, {f_pcd}, [=]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] / norm;
    auto p = f_pcd.data();
    auto q = soft.data();
    auto gp = f_pcd.grad_buffer();
    for (std::size_t j = 0; j < msk.size(); ++j) {
      if (msk[j] != 0) continue;
      const std::size_t base = (j / d.plane()) * d.c * d.plane() + j % d.plane();
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t k = base + c * d.plane();
        if (p[k] < kProbEps) continue;
        gp[k] += static_cast<Real>(g * (std::log(p[k] / detail::clamp_prob(q[k])) + 1.0));
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Total

template <class Real>
struct LossTerms {
  Tensor<Real> focal;          // camera stream
  Tensor<Real> lovasz_img;     // camera stream
  Tensor<Real> variant_focal;  // point-cloud stream
  Tensor<Real> lovasz_pcd;     // point-cloud stream
  Tensor<Real> interaction;    // couples the streams
  Tensor<Real> total;

  struct Named {
    const char* name;
    double value;
  };
  std::vector<Named> breakdown() const {
    return {{"focal", focal.item()},
            {"lovasz_img", lovasz_img.item()},
            {"variant_focal", variant_focal.item()},
            {"lovasz_pcd", lovasz_pcd.item()},
            {"interaction", interaction.item()}};
  }
};

/// Unweighted sum of the five terms. Throws naming the first non-finite term.
template <class Real>
LossTerms<Real> total_loss(const Tensor<Real>& probs_img, const Tensor<Real>& probs_pcd,
                           std::span<const std::uint8_t> labels_img, std::span<const std::uint8_t> labels_pcd,
                           std::span<const std::uint8_t> mask, const VariantFocalSchedule& schedule, double epoch) {
  LossTerms<Real> t;
  t.focal = focal_loss(probs_img, labels_img);
  t.lovasz_img = lovasz_softmax(probs_img, labels_img);
  t.variant_focal = variant_focal_loss(probs_pcd, labels_pcd, mask, schedule, epoch);
  t.lovasz_pcd = lovasz_softmax(probs_pcd, labels_pcd);
  t.interaction = pixel_interaction_loss(probs_pcd, probs_img, mask);
  for (const auto& [name, value] : t.breakdown())
    if (!std::isfinite(value)) throw NonFiniteError(std::string("loss term '") + name + "' is not finite");
  t.total = ag::add_scalars(std::vector<Tensor<Real>>{t.interaction, t.focal, t.lovasz_pcd, t.variant_focal, t.lovasz_img});
  return t;
}

}  // namespace pathfinder::losses
