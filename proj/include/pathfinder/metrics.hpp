#pragma once
// Segmentation metrics, operation/parameter accounting, and a GEMM benchmark.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathfinder/bitcore.hpp"
#include "pathfinder/gemm.hpp"
#include "pathfinder/module.hpp"
#include "pathfinder/rng.hpp"
#include "pathfinder/tensor.hpp"

namespace pathfinder::metrics {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// ---------------------------------------------------------------------------
// Confusion matrix

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 2) : classes_(classes), counts_(classes * classes, 0) {
    if (classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
  }

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  /// Adds (truth, prediction) pairs; truth == ignore is skipped.
  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred, std::uint8_t ignore = kIgnoreLabel) {
    if (truth.size() != pred.size()) throw std::invalid_argument("ConfusionMatrix: truth/prediction size mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == ignore) continue;
      if (truth[i] >= classes_ || pred[i] >= classes_)
        throw std::invalid_argument("ConfusionMatrix: class id " + std::to_string(std::max(truth[i], pred[i])) +
                                    " out of range");
      ++counts_[truth[i] * classes_ + pred[i]];
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix: merging different class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct SegmentationScores {
  std::vector<double> iou;        // per class; NaN where TP+FP+FN = 0
  std::vector<double> accuracy;   // per class recall; NaN where the class never occurs in truth
  double miou = 0;                // mean over classes with a nonzero IoU denominator
  double macc = 0;                // mean over classes present in truth
  double pixel_accuracy = 0;
};

inline SegmentationScores score(const ConfusionMatrix& m) {
  if (m.total() == 0) throw std::invalid_argument("miou: confusion matrix is empty");
  const std::size_t c = m.classes();
  SegmentationScores s;
  double iou_sum = 0, acc_sum = 0, diag = 0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = m.at(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += m.at(j, k);
      fn += m.at(k, j);
    }
    diag += static_cast<double>(tp);
    const auto denom = tp + fp + fn;
    s.iou.push_back(denom ? static_cast<double>(tp) / static_cast<double>(denom) : std::nan(""));
    s.accuracy.push_back(tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : std::nan(""));
    if (denom) {
      iou_sum += s.iou.back();
      ++iou_n;
    }
    if (tp + fn) {
      acc_sum += s.accuracy.back();
      ++acc_n;
    }
  }
  s.miou = iou_sum / static_cast<double>(iou_n);
  s.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  s.pixel_accuracy = diag / static_cast<double>(m.total());
  return s;
}

// ---------------------------------------------------------------------------
// Complexity

struct LayerCost {
  std::string layer;
  std::uint64_t bops = 0;
  std::uint64_t flops = 0;
  double ops() const { return static_cast<double>(bops) / 64.0 + static_cast<double>(flops); }
};

struct ComplexityReport {
  std::vector<LayerCost> layers;
  std::uint64_t bops = 0;
  std::uint64_t flops = 0;
  std::uint64_t param_bytes = 0;
  std::uint64_t binary_params = 0;
  std::uint64_t fp_params = 0;

  double ops() const { return static_cast<double>(bops) / 64.0 + static_cast<double>(flops); }
};

/// Groups counted operations by layer (first-appearance order).
inline ComplexityReport summarize(const ag::OpCounter& counter) {
  ComplexityReport r;
  std::map<std::string, std::size_t> index;
  for (const auto& rec : counter.records()) {
    auto [it, inserted] = index.emplace(rec.layer, r.layers.size());
    if (inserted) r.layers.push_back({rec.layer, 0, 0});
    auto& row = r.layers[it->second];
    row.bops += rec.bops;
    row.flops += rec.flops;
    r.bops += rec.bops;
    r.flops += rec.flops;
  }
  return r;
}

/// Deployed parameter storage: binary weights take one bit each plus a 32-bit
/// scale per output channel; everything else, including batch-norm running
/// statistics, is 32-bit.
template <class Real>
void add_parameter_bytes(ComplexityReport& r, const Registry<Real>& reg) {
  std::uint64_t bits = 0;
  for (const auto& p : reg.params) {
    const auto n = static_cast<std::uint64_t>(p.tensor.numel());
    if (p.role == ParamRole::binary_weight) {
      bits += n + 32ULL * p.tensor.dim(0);
      r.binary_params += n;
    } else {
      bits += 32ULL * n;
      r.fp_params += n;
    }
  }
  for (const auto& b : reg.buffers) bits += 32ULL * b.data->size();
  r.param_bytes = (bits + 7) / 8;
}

inline void print_report(std::ostream& os, const ComplexityReport& r) {
  std::size_t width = 5;
  for (const auto& l : r.layers) width = std::max(width, l.layer.size());
  os << std::left << std::setw(static_cast<int>(width)) << "layer" << std::right << std::setw(16) << "BOPs"
     << std::setw(16) << "FLOPs" << std::setw(18) << "OPs" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& l : r.layers)
    os << std::left << std::setw(static_cast<int>(width)) << l.layer << std::right << std::setw(16) << l.bops
       << std::setw(16) << l.flops << std::setw(18) << l.ops() << '\n';
  os << std::left << std::setw(static_cast<int>(width)) << "total" << std::right << std::setw(16) << r.bops
     << std::setw(16) << r.flops << std::setw(18) << r.ops() << '\n';
  os << "parameter bytes: " << r.param_bytes << " (binary params " << r.binary_params << ", full-precision params "
     << r.fp_params << ")\n";
  os.unsetf(std::ios::floatfield);
}

inline void write_report_kv(std::ostream& os, const ComplexityReport& r) {
  os << std::fixed << std::setprecision(2) << "bops=" << r.bops << "\nflops=" << r.flops << "\nops=" << r.ops()
     << "\nparam_bytes=" << r.param_bytes << "\nbinary_params=" << r.binary_params << "\nfp_params=" << r.fp_params
     << '\n';
  for (const auto& l : r.layers) os << "layer." << l.layer << ".bops=" << l.bops << "\nlayer." << l.layer << ".flops=" << l.flops << '\n';
  os.unsetf(std::ios::floatfield);
}

// ---------------------------------------------------------------------------
// GEMM benchmark

struct BenchRow {
  std::size_t n = 0;
  double binary_seconds = 0;  // median, includes packing the activation matrix
  double float_seconds = 0;   // median, naive triple loop
  double ratio() const { return float_seconds / binary_seconds; }
};

namespace detail {
template <class F>
double median_seconds(std::size_t repeats, F&& f) {
  std::vector<double> t;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}
}  // namespace detail

/// Times n×n×n binary GEMM against the naive float GEMM for each size.
inline std::vector<BenchRow> bench_gemm(const std::vector<std::size_t>& sizes, std::size_t repeats = 3,
                                        std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<BenchRow> rows;
  for (auto n : sizes) {
    std::vector<float> w(n * n), a(n * n), c(n * n);
    for (auto& v : w) v = rng.chance(0.5) ? 1.0F : -1.0F;
    for (auto& v : a) v = rng.chance(0.5) ? 1.0F : -1.0F;
    const auto wb = bitcore::sign_pack<float>(w, {n, n});
    const auto scales = bitcore::ScaleFactors::unit(n);
    float sink = 0;
    BenchRow row;
    row.n = n;
    row.binary_seconds = detail::median_seconds(repeats, [&] {
      const auto out = bitcore::binary_gemm(wb, bitcore::sign_pack<float>(a, {n, n}), scales);
      sink += out[0];
    });
    row.float_seconds = detail::median_seconds(repeats, [&] {
      gemm::gemm_naive(n, n, n, w.data(), a.data(), c.data());
      sink += c[0];
    });
    if (sink == 1e30F) rows.clear();  // keeps the results observable
    rows.push_back(row);
  }
  return rows;
}

inline void print_bench(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << std::setw(8) << "n" << std::setw(16) << "binary (s)" << std::setw(16) << "float (s)" << std::setw(10)
     << "ratio" << '\n';
  for (const auto& r : rows)
    os << std::setw(8) << r.n << std::setw(16) << std::scientific << std::setprecision(3) << r.binary_seconds
       << std::setw(16) << r.float_seconds << std::setw(10) << std::fixed << std::setprecision(1) << r.ratio() << '\n';
  os.unsetf(std::ios::floatfield);
}

}  // namespace pathfinder::metrics
