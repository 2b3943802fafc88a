#pragma once
// Translation-only image registration by phase correlation (FFTW).
// Used to build homographies for synthetic frame sequences.

#include <fftw3.h>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <vector>

#include "pathfinder/osmmaker.hpp"

namespace pathfinder::osm {

/// Integer shift (dx, dy) with a(x, y) ≈ b(x − dx, y − dy), i.e. the
/// translation taking b's pixel coordinates into a's. Both masks must share
/// one size; shifts beyond half the size wrap to negative values.
inline std::pair<long, long> estimate_translation(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height || a.data.empty())
    throw std::invalid_argument("estimate_translation: frames must be non-empty and equally sized");
  const int h = static_cast<int>(a.height), w = static_cast<int>(a.width);
  const int wc = w / 2 + 1;
  auto real_buf = [&] { return std::unique_ptr<double, decltype(&fftw_free)>(fftw_alloc_real(h * w), &fftw_free); };
  auto cplx_buf = [&] {
    return std::unique_ptr<fftw_complex, decltype(&fftw_free)>(fftw_alloc_complex(h * wc), &fftw_free);
  };
  auto ra = real_buf(), rb = real_buf(), rc = real_buf();
  auto fa = cplx_buf(), fb = cplx_buf();
  const fftw_plan pa = fftw_plan_dft_r2c_2d(h, w, ra.get(), fa.get(), FFTW_ESTIMATE);
  const fftw_plan pb = fftw_plan_dft_r2c_2d(h, w, rb.get(), fb.get(), FFTW_ESTIMATE);
  const fftw_plan pc = fftw_plan_dft_c2r_2d(h, w, fa.get(), rc.get(), FFTW_ESTIMATE);
  for (int i = 0; i < h * w; ++i) {
    ra.get()[i] = a.data[static_cast<std::size_t>(i)];
    rb.get()[i] = b.data[static_cast<std::size_t>(i)];
  }
  fftw_execute(pa);
  fftw_execute(pb);
  for (int i = 0; i < h * wc; ++i) {
    const std::complex<double> x(fa.get()[i][0], fa.get()[i][1]), y(fb.get()[i][0], fb.get()[i][1]);
    auto r = x * std::conj(y);
    const double m = std::abs(r);
    r = m > 1e-12 ? r / m : std::complex<double>(0, 0);
    fa.get()[i][0] = r.real();
    fa.get()[i][1] = r.imag();
  }
  fftw_execute(pc);
  fftw_destroy_plan(pa);
  fftw_destroy_plan(pb);
  fftw_destroy_plan(pc);
  int best = 0;
  for (int i = 1; i < h * w; ++i)
    if (rc.get()[i] > rc.get()[best]) best = i;
  long dy = best / w, dx = best % w;
  if (dx > w / 2) dx -= w;
  if (dy > h / 2) dy -= h;
  return {dx, dy};
}

/// Homography of a pure translation.
inline Eigen::Matrix3d translation_homography(double dx, double dy) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = dx;
  m(1, 2) = dy;
  return m;
}

}  // namespace pathfinder::osm
