#pragma once
// SGD with cosine learning-rate annealing, and AdamW.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathfinder/module.hpp"

namespace pathfinder {

enum class OptimizerKind { sgd_cosine, adamw };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::sgd_cosine;
  double lr0 = 1e-3;
  std::size_t epoch_total = 100;
  double momentum = 0.9;       // SGD
  double beta1 = 0.9;          // AdamW
  double beta2 = 0.999;        // AdamW
  double eps = 1e-8;           // AdamW
  double weight_decay = 0.0;   // decoupled for AdamW, L2 for SGD
};

/// Optimizer over a fixed parameter list. Buffers are indexed like the list.
template <class Real>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerSettings settings, std::vector<ParamRef<Real>> params)
      : settings_(settings), params_(std::move(params)) {
    for (const auto& p : params_) {
      first_.emplace_back(p.tensor.numel(), Real(0));
      if (settings_.kind == OptimizerKind::adamw) second_.emplace_back(p.tensor.numel(), Real(0));
    }
  }

  const OptimizerSettings& settings() const { return settings_; }
  const std::vector<ParamRef<Real>>& params() const { return params_; }

  /// SGD-cosine: lr0·½(1 + cos(π·e/E)); AdamW keeps lr0.
  double learning_rate(std::size_t epoch) const {
    if (settings_.kind == OptimizerKind::adamw) return settings_.lr0;
    const double e = std::min<double>(static_cast<double>(epoch), static_cast<double>(settings_.epoch_total));
    return settings_.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * e / static_cast<double>(settings_.epoch_total)));
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// One update. Latent binary weights are clipped to [-1, 1] afterwards.
  void step(std::size_t epoch) {
    for (const auto& p : params_)
      if (!p.tensor.has_grad()) throw std::runtime_error("optimizer: parameter '" + p.name + "' has no gradient");
    const double lr = learning_rate(epoch);
    if (settings_.kind == OptimizerKind::adamw) ++steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto w = p.tensor.data();
      auto g = p.tensor.grad();
      const bool decay = p.role == ParamRole::weight || p.role == ParamRole::binary_weight;
      auto& m = first_[i];
      if (settings_.kind == OptimizerKind::sgd_cosine) {
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double grad = static_cast<double>(g[j]) + (decay ? settings_.weight_decay * w[j] : 0.0);
          m[j] = static_cast<Real>(settings_.momentum * m[j] + grad);
          w[j] = static_cast<Real>(w[j] - lr * m[j]);
        }
      } else {
        auto& v = second_[i];
        const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(steps_));
        for (std::size_t j = 0; j < w.size(); ++j) {
          if (decay) w[j] = static_cast<Real>(w[j] * (1.0 - lr * settings_.weight_decay));
          m[j] = static_cast<Real>(settings_.beta1 * m[j] + (1.0 - settings_.beta1) * g[j]);
          v[j] = static_cast<Real>(settings_.beta2 * v[j] + (1.0 - settings_.beta2) * g[j] * g[j]);
          const double mh = m[j] / bc1, vh = v[j] / bc2;
          w[j] = static_cast<Real>(w[j] - lr * mh / (std::sqrt(vh) + settings_.eps));
        }
      }
      if (p.role == ParamRole::binary_weight)
        for (auto& x : w) x = std::clamp(x, Real(-1), Real(1));
      for (Real x : w)
        if (!std::isfinite(x)) throw NonFiniteError("optimizer: parameter '" + p.name + "' became non-finite");
    }
  }

  /// Moment buffers and step count, exposed for checkpointing.
  void collect_state(const std::string& prefix, Registry<Real>& reg) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      reg.buffer(join_name(prefix, params_[i].name + ".m1"), first_[i]);
      if (settings_.kind == OptimizerKind::adamw) reg.buffer(join_name(prefix, params_[i].name + ".m2"), second_[i]);
    }
  }
  std::size_t step_count() const { return steps_; }
  void set_step_count(std::size_t s) { steps_ = s; }

 private:
  OptimizerSettings settings_;
  std::vector<ParamRef<Real>> params_;
  std::vector<std::vector<Real>> first_;
  std::vector<std::vector<Real>> second_;
  std::size_t steps_ = 0;
};

}  // namespace pathfinder
